#include "vidguide/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <sstream>

#include "lexicon_data.hpp"
#include "vidguide/errors.hpp"

namespace vidguide {

std::string_view tag_name(Tag tag) {
    switch (tag) {
        case Tag::Noun:
            return "NOUN";
        case Tag::Verb:
            return "VERB";
        case Tag::Other:
            return "OTHER";
        case Tag::Special:
            return "SPECIAL";
    }
    return "OTHER";
}

Lexicon Lexicon::parse(std::string_view text) {
    Lexicon lex;
    std::set<std::string>* section = nullptr;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto last = line.find_last_not_of(" \t\r");
        std::string word = line.substr(first, last - first + 1);
        if (word == "[subjects]") {
            section = &lex.subjects;
        } else if (word == "[actions]") {
            section = &lex.actions;
        } else if (!section) {
            throw ParseError(lineno, "lexicon entry before any section header");
        } else {
            std::transform(word.begin(), word.end(), word.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            section->insert(std::move(word));
        }
    }
    return lex;
}

const Lexicon& Lexicon::builtin() {
    static const Lexicon lex = parse(detail::kBuiltinLexicon);
    return lex;
}

TokenSequence tokenize(std::string_view prompt) {
    TokenSequence tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(Token{word, tokens.size(), Tag::Other});
            word.clear();
        }
    };
    for (char ch : prompt) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::isalnum(c) || c == '\'' || c == '-') {
            if (c != '\'') word.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    if (tokens.empty()) throw InputError("prompt is empty or whitespace-only");
    return tokens;
}

namespace {

bool is_copula(std::string_view w) { return w == "is" || w == "are"; }

bool ends_with_ing(std::string_view w) { return w.size() > 4 && w.substr(w.size() - 3) == "ing"; }

struct Clause {
    std::size_t begin;
    std::size_t end;  // exclusive
};

std::vector<Clause> split_clauses(const TokenSequence& tokens) {
    std::vector<Clause> clauses;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= tokens.size(); ++i) {
        const bool boundary = i == tokens.size() || (tokens[i].tag != Tag::Special && tokens[i].text == "and");
        if (boundary) {
            if (i > start) clauses.push_back({start, i});
            start = i + 1;
        }
    }
    return clauses;
}

std::string clause_text(const TokenSequence& tokens, Clause c) {
    std::string out;
    for (std::size_t i = c.begin; i < c.end; ++i) {
        if (!out.empty()) out += ' ';
        out += tokens[i].text;
    }
    return out;
}

void tag_clause(TokenSequence& tokens, Clause c, const Lexicon& lexicon) {
    std::optional<std::size_t> noun, verb;
    // (1) template position: <noun> is|are <verb>
    for (std::size_t i = c.begin + 1; i + 1 < c.end; ++i) {
        if (is_copula(tokens[i].text)) {
            noun = i - 1;
            verb = i + 1;
            break;
        }
    }
    // (2) lexicon
    if (!noun) {
        for (std::size_t i = c.begin; i < c.end && !noun; ++i) {
            if (lexicon.subjects.contains(tokens[i].text)) noun = i;
        }
    }
    if (noun && !verb) {
        for (std::size_t i = *noun + 1; i < c.end && !verb; ++i) {
            if (lexicon.actions.contains(tokens[i].text)) verb = i;
        }
    }
    // (3) "-ing" directly after is/are
    if (noun && !verb) {
        for (std::size_t i = *noun + 1; i < c.end && !verb; ++i) {
            if (ends_with_ing(tokens[i].text) && is_copula(tokens[i - 1].text)) verb = i;
        }
    }
    if (noun) tokens[*noun].tag = Tag::Noun;
    if (verb) tokens[*verb].tag = Tag::Verb;
}

}  // namespace

TokenSequence tag_tokens(TokenSequence tokens, const Lexicon& lexicon) {
    for (Token& t : tokens) {
        if (t.tag != Tag::Special) t.tag = Tag::Other;
    }
    for (const Clause& c : split_clauses(tokens)) tag_clause(tokens, c, lexicon);
    return tokens;
}

TokenSequence parse_prompt(std::string_view prompt, const Lexicon& lexicon) {
    return tag_tokens(tokenize(prompt), lexicon);
}

SyntaxPairs extract_pairs(const TokenSequence& tokens, NegativeMode mode) {
    SyntaxPairs out;
    TokenSequence words;
    for (const Token& t : tokens) {
        if (t.tag != Tag::Special) words.push_back(t);
    }
    for (const Clause& c : split_clauses(words)) {
        std::optional<std::size_t> noun, verb;
        for (std::size_t i = c.begin; i < c.end; ++i) {
            if (!noun && words[i].tag == Tag::Noun) {
                noun = words[i].index;
            } else if (noun && !verb && words[i].tag == Tag::Verb) {
                verb = words[i].index;
            }
        }
        if (!noun || !verb) {
            throw ExtractionError("no noun/verb pair resolvable in clause \"" + clause_text(words, c) + "\"");
        }
        out.pairs.push_back({*noun, *verb});
    }
    if (out.pairs.empty()) throw ExtractionError("prompt has no clauses");

    for (const NounVerbPair& p : out.pairs) {
        std::vector<std::size_t> negatives;
        for (const Token& t : words) {
            if (t.index == p.noun || t.index == p.verb) continue;
            if (mode == NegativeMode::ExcludeOtherPairs) {
                const bool in_other = std::any_of(out.pairs.begin(), out.pairs.end(), [&](const NounVerbPair& q) {
                    return q.noun == t.index || q.verb == t.index;
                });
                if (in_other) continue;
            }
            negatives.push_back(t.index);
        }
        std::sort(negatives.begin(), negatives.end());
        out.negatives.push_back(std::move(negatives));
    }
    return out;
}

TokenSequence with_specials(TokenSequence tokens, std::size_t max_tokens) {
    if (tokens.size() + 2 > max_tokens) {
        throw InputError("prompt has " + std::to_string(tokens.size()) + " words; at most " +
                         std::to_string(max_tokens >= 2 ? max_tokens - 2 : 0) + " fit in " +
                         std::to_string(max_tokens) + " tokens");
    }
    tokens.push_back(Token{std::string(kBosToken), tokens.size(), Tag::Special});
    tokens.push_back(Token{std::string(kEosToken), tokens.size(), Tag::Special});
    while (tokens.size() < max_tokens) tokens.push_back(Token{std::string(kPadToken), tokens.size(), Tag::Special});
    return tokens;
}

std::string to_prompt(const TokenSequence& tokens) {
    std::string out;
    for (const Token& t : tokens) {
        if (t.tag == Tag::Special) continue;
        if (!out.empty()) out += ' ';
        out += t.text;
    }
    return out;
}

}  // namespace vidguide
