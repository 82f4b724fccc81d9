#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace vidguide {

enum class Tag { Noun, Verb, Other, Special };

std::string_view tag_name(Tag tag);

struct Token {
    std::string text;
    std::size_t index = 0;
    Tag tag = Tag::Other;

    friend bool operator==(const Token&, const Token&) = default;
};

using TokenSequence = std::vector<Token>;

struct NounVerbPair {
    std::size_t noun = 0;
    std::size_t verb = 0;

    friend bool operator==(const NounVerbPair&, const NounVerbPair&) = default;
};

// Pairs in clause order; negatives[k] is U for pairs[k], sorted ascending.
struct SyntaxPairs {
    std::vector<NounVerbPair> pairs;
    std::vector<std::vector<std::size_t>> negatives;

    friend bool operator==(const SyntaxPairs&, const SyntaxPairs&) = default;
};

enum class NegativeMode {
    Literal,            // every other word, including members of other pairs
    ExcludeOtherPairs,  // other pairs' nouns and verbs are not negatives
};

struct Lexicon {
    std::set<std::string> subjects;
    std::set<std::string> actions;

    // Sections [subjects] and [actions], one word per line, '#' comments.
    static Lexicon parse(std::string_view text);
    static const Lexicon& builtin();
};

inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kPadToken = "<pad>";

// Lowercase, strip punctuation, split on whitespace. All tags are OTHER.
TokenSequence tokenize(std::string_view prompt);

// Per clause (split on "and"): template "<noun> is|are <verb>" first, then the
// lexicon, then "-ing after is". At most one NOUN and one VERB per clause;
// remaining words (including verb-phrase objects) stay OTHER.
TokenSequence tag_tokens(TokenSequence tokens, const Lexicon& lexicon = Lexicon::builtin());

// tokenize + tag_tokens.
TokenSequence parse_prompt(std::string_view prompt, const Lexicon& lexicon = Lexicon::builtin());

SyntaxPairs extract_pairs(const TokenSequence& tokens, NegativeMode mode = NegativeMode::Literal);

// Appends <bos>, <eos> and <pad> up to `max_tokens`. Word indices are kept so
// they address cross-attention columns directly.
TokenSequence with_specials(TokenSequence tokens, std::size_t max_tokens);

// Space-joined non-special words.
std::string to_prompt(const TokenSequence& tokens);

}  // namespace vidguide
