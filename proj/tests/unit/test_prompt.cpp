#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "vidguide/errors.hpp"
#include "vidguide/prompt.hpp"

using namespace vidguide;

namespace {

std::vector<std::string> words(const TokenSequence& seq) {
    std::vector<std::string> out;
    for (const Token& t : seq) out.push_back(t.text);
    return out;
}

}  // namespace

TEST(Tokenize, SplitsAndIndexes) {
    const TokenSequence seq = tokenize("a man is walking");
    EXPECT_EQ(words(seq), (std::vector<std::string>{"a", "man", "is", "walking"}));
    for (std::size_t i = 0; i < seq.size(); ++i) {
        EXPECT_EQ(seq[i].index, i);
        EXPECT_EQ(seq[i].tag, Tag::Other);
    }
}

TEST(Tokenize, NormalizesCaseAndPunctuation) {
    const TokenSequence seq = tokenize("A man is walking, and a dog is running.");
    EXPECT_EQ(seq.size(), 9u);
    EXPECT_EQ(seq[0].text, "a");
    EXPECT_EQ(seq[3].text, "walking");
    EXPECT_EQ(seq[8].text, "running");
}

TEST(Tokenize, BoyPromptHasNineTokens) {
    const TokenSequence seq = tokenize("a boy is walking and a dog is sitting");
    EXPECT_EQ(seq.size(), 9u);
    EXPECT_EQ(seq[1].text, "boy");
}

TEST(Tokenize, EmptyPromptIsInputError) {
    EXPECT_THROW(tokenize(""), InputError);
    EXPECT_THROW(tokenize("   \t "), InputError);
    EXPECT_THROW(tokenize("..."), InputError);
}

TEST(Tagging, TemplateNounsAndVerbs) {
    const TokenSequence seq = parse_prompt("a man is walking and a dog is running");
    EXPECT_EQ(seq[1].tag, Tag::Noun);
    EXPECT_EQ(seq[3].tag, Tag::Verb);
    EXPECT_EQ(seq[6].tag, Tag::Noun);
    EXPECT_EQ(seq[8].tag, Tag::Verb);
    EXPECT_EQ(seq[4].tag, Tag::Other);
}

TEST(Tagging, IngHeuristicForUnknownVerb) {
    const TokenSequence seq = parse_prompt("a zorblax is frobnicating");
    EXPECT_EQ(seq[1].tag, Tag::Noun);
    EXPECT_EQ(seq[3].tag, Tag::Verb);
}

TEST(Tagging, LexiconFallbackWithoutTemplate) {
    const TokenSequence seq = parse_prompt("the dog running in the park");
    EXPECT_EQ(seq[1].tag, Tag::Noun);
    EXPECT_EQ(seq[2].tag, Tag::Verb);
}

TEST(Lexicon, ParsesSections) {
    const Lexicon lex = Lexicon::parse("# comment\n[subjects]\nrobot\n\n[actions]\nbeeping\n");
    EXPECT_TRUE(lex.subjects.contains("robot"));
    EXPECT_TRUE(lex.actions.contains("beeping"));
    EXPECT_FALSE(Lexicon::builtin().subjects.empty());
    EXPECT_TRUE(Lexicon::builtin().subjects.contains("dog"));
    EXPECT_TRUE(Lexicon::builtin().actions.contains("walking"));
}

TEST(ExtractPairs, TwoClauseTemplate) {
    const SyntaxPairs sp = extract_pairs(parse_prompt("a man is walking and a dog is running"));
    ASSERT_EQ(sp.pairs.size(), 2u);
    EXPECT_EQ(sp.pairs[0], (NounVerbPair{1, 3}));
    EXPECT_EQ(sp.pairs[1], (NounVerbPair{6, 8}));
    EXPECT_EQ(sp.negatives[0], (std::vector<std::size_t>{0, 2, 4, 5, 6, 7, 8}));
}

TEST(ExtractPairs, SingleClause) {
    const SyntaxPairs sp = extract_pairs(parse_prompt("a cat is sitting"));
    ASSERT_EQ(sp.pairs.size(), 1u);
    EXPECT_EQ(sp.pairs[0], (NounVerbPair{1, 3}));
    EXPECT_EQ(sp.negatives[0], (std::vector<std::size_t>{0, 2}));
}

TEST(ExtractPairs, VerbObjectGoesToNegatives) {
    const TokenSequence seq = parse_prompt("a woman is jumping and a boy is playing guitar");
    const SyntaxPairs sp = extract_pairs(seq);
    ASSERT_EQ(sp.pairs.size(), 2u);
    EXPECT_EQ(sp.pairs[1], (NounVerbPair{6, 8}));
    EXPECT_EQ(seq[9].tag, Tag::Other);
    for (const auto& u : sp.negatives) EXPECT_TRUE(std::ranges::find(u, 9u) != u.end());
}

TEST(ExtractPairs, ExcludeOtherPairsMode) {
    const SyntaxPairs sp =
        extract_pairs(parse_prompt("a man is walking and a dog is running"), NegativeMode::ExcludeOtherPairs);
    EXPECT_EQ(sp.negatives[0], (std::vector<std::size_t>{0, 2, 4, 5, 7}));
    EXPECT_EQ(sp.negatives[1], (std::vector<std::size_t>{0, 2, 4, 5, 7}));
}

TEST(ExtractPairs, ClauseWithoutVerbIsExtractionError) {
    try {
        extract_pairs(parse_prompt("a man is walking and a red ball"));
        FAIL() << "expected ExtractionError";
    } catch (const ExtractionError& e) {
        EXPECT_NE(std::string(e.what()).find("a red ball"), std::string::npos) << e.what();
    }
}

TEST(ExtractPairs, SpecialsNeverNegatives) {
    const TokenSequence seq = with_specials(parse_prompt("a man is walking and a dog is running"), 16);
    ASSERT_EQ(seq.size(), 16u);
    EXPECT_EQ(seq[9].text, kBosToken);
    EXPECT_EQ(seq[10].text, kEosToken);
    EXPECT_EQ(seq[15].text, kPadToken);
    const SyntaxPairs sp = extract_pairs(seq);
    for (const auto& u : sp.negatives) {
        for (std::size_t k : u) EXPECT_NE(seq[k].tag, Tag::Special);
    }
}

TEST(WithSpecials, TooLongIsInputError) {
    EXPECT_THROW(with_specials(parse_prompt("a man is walking and a dog is running"), 10), InputError);
}

// Template prompts built from random subjects and actions.
class TemplatePrompts : public ::testing::TestWithParam<unsigned> {};

TEST_P(TemplatePrompts, PartitionCountAndIdempotence) {
    const std::vector<std::string> subjects{"man", "woman", "dog", "cat", "boy", "girl", "horse", "bird"};
    const std::vector<std::string> actions{"walking", "running", "jumping", "sitting", "swimming", "dancing"};
    std::mt19937 rng(GetParam());
    const std::size_t clauses = 1 + rng() % 3;
    std::string prompt;
    for (std::size_t k = 0; k < clauses; ++k) {
        if (k) prompt += " and ";
        prompt += "a " + subjects[rng() % subjects.size()] + " is " + actions[rng() % actions.size()];
    }
    const TokenSequence seq = with_specials(parse_prompt(prompt), 16);
    const SyntaxPairs sp = extract_pairs(seq);
    ASSERT_EQ(sp.pairs.size(), clauses) << prompt;

    std::set<std::size_t> used;
    for (std::size_t k = 0; k < sp.pairs.size(); ++k) {
        const NounVerbPair p = sp.pairs[k];
        EXPECT_NE(p.noun, p.verb);
        EXPECT_TRUE(used.insert(p.noun).second);
        EXPECT_TRUE(used.insert(p.verb).second);
        std::set<std::size_t> all(sp.negatives[k].begin(), sp.negatives[k].end());
        EXPECT_FALSE(all.contains(p.noun));
        EXPECT_FALSE(all.contains(p.verb));
        all.insert(p.noun);
        all.insert(p.verb);
        for (const Token& t : seq) {
            if (t.tag == Tag::Special) all.insert(t.index);
        }
        EXPECT_EQ(all.size(), seq.size()) << prompt;
    }

    const SyntaxPairs again = extract_pairs(parse_prompt(to_prompt(seq)));
    EXPECT_EQ(again, sp);
}

INSTANTIATE_TEST_SUITE_P(Seeds, TemplatePrompts, ::testing::Range(0u, 40u));
