#include <gtest/gtest.h>

#include <fstream>

#include "reasonlens/datasets.hpp"
#include "reasonlens/errors.hpp"
#include "test_support.hpp"

using namespace reasonlens;
using reasonlens::testing::TempDir;

namespace {

std::filesystem::path samples() { return REASONLENS_SAMPLES_DIR; }

PosLexicon tiny_lexicon() {
  PosLexicon lex;
  lex.set(PartOfSpeech::kNouns, {"time", "year", "people", "way", "day"});
  return lex;
}

}  // namespace

TEST(Generate2wmh, WorkedExample) {
  const PromptPair p =
      generate_2wmh_pair({"Lilli's Marriage", "director", "Jaap Speyer", "country of citizenship", "Dutch"});
  EXPECT_EQ(p.multi_hop, "The country of citizenship of the director of Lilli's Marriage is");
  EXPECT_EQ(p.single_hop, "The country of citizenship of Jaap Speyer is");
  EXPECT_EQ(p.answer, "Dutch");
  EXPECT_EQ(p.memory, "Jaap Speyer");
  EXPECT_THROW(generate_2wmh_pair({"", "a", "b", "c", "d"}), InvalidArgument);
}

TEST(Generate2wmh, SampleTriples) {
  const auto triples = load_triples(samples() / "2wmh_triples.jsonl");
  ASSERT_EQ(triples.size(), 5u);
  const PromptPair p = generate_2wmh_pair(triples[1]);
  EXPECT_EQ(p.single_hop, "The place of birth of Dušan Hanák is");
  EXPECT_EQ(p.multi_hop, "The place of birth of the director of I Love, You Love is");
}

TEST(PromptPairs, SampleFileLoads) {
  const auto pairs = load_prompt_pairs(samples() / "hand_examples.jsonl");
  ASSERT_EQ(pairs.size(), 7u);
  EXPECT_EQ(pairs[1].answer, "Dubai");
  EXPECT_EQ(load_prompt_pairs(samples() / "injection_examples.jsonl").size(), 4u);
}

TEST(PromptPairs, RoundTrip) {
  TempDir dir;
  const std::vector<PromptPair> pairs{
      {"Burj Khalifa is located in the city of",
       "The tallest building in the world is located in the city of", "Dubai", "Burj Khalifa"},
      {"The father of Hermes is", "The father of the Greek messenger god is", "Zeus", "Hermes"}};
  write_prompt_pairs(dir / "p.jsonl", pairs);
  EXPECT_FALSE(std::filesystem::exists(dir / "p.jsonl.partial"));
  EXPECT_EQ(load_prompt_pairs(dir / "p.jsonl"), pairs);
}

TEST(PromptPairs, BlankLinesSkippedAndEmptyFile) {
  TempDir dir;
  std::ofstream(dir / "empty.jsonl").close();
  EXPECT_TRUE(load_prompt_pairs(dir / "empty.jsonl").empty());
  std::ofstream(dir / "blank.jsonl")
      << "\n{\"single_hop\":\"a b\",\"multi_hop\":\"c d\",\"answer\":\"e\",\"memory\":\"f\"}\n\n";
  EXPECT_EQ(load_prompt_pairs(dir / "blank.jsonl").size(), 1u);
}

TEST(PromptPairs, ErrorsNameTheLine) {
  TempDir dir;
  std::ofstream(dir / "bad.jsonl")
      << "{\"single_hop\":\"a\",\"multi_hop\":\"b\",\"answer\":\"c\",\"memory\":\"d\"}\n"
      << "{\"single_hop\":\"a\",\"multi_hop\":\"b\",\"answer\":\"c\"}\n";
  try {
    load_prompt_pairs(dir / "bad.jsonl");
    FAIL();
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad.jsonl:2:"), std::string::npos) << msg;
    EXPECT_NE(msg.find("memory"), std::string::npos) << msg;
  }
  std::ofstream(dir / "space.jsonl")
      << "{\"single_hop\":\"a \",\"multi_hop\":\"b\",\"answer\":\"c\",\"memory\":\"d\"}\n";
  EXPECT_THROW(load_prompt_pairs(dir / "space.jsonl"), LoadError);
  std::ofstream(dir / "json.jsonl") << "{not json\n";
  EXPECT_THROW(load_prompt_pairs(dir / "json.jsonl"), LoadError);
  EXPECT_THROW(load_prompt_pairs(dir / "absent.jsonl"), LoadError);
}

TEST(PartOfSpeech, NamesAndCounts) {
  EXPECT_EQ(parse_part_of_speech("adj"), PartOfSpeech::kAdjectives);
  EXPECT_EQ(parse_part_of_speech("top5050"), PartOfSpeech::kTop5050);
  EXPECT_THROW(parse_part_of_speech("pronouns"), InvalidArgument);
  EXPECT_EQ(to_string(PartOfSpeech::kVerbs), "verbs");
  EXPECT_EQ(expected_count(PartOfSpeech::kAdjectives), 824u);
  EXPECT_EQ(expected_count(PartOfSpeech::kAdverbs), 331u);
  EXPECT_EQ(expected_count(PartOfSpeech::kConjunctions), 40u);
  EXPECT_EQ(expected_count(PartOfSpeech::kNouns), 2635u);
  EXPECT_EQ(expected_count(PartOfSpeech::kVerbs), 969u);
  EXPECT_EQ(expected_count(PartOfSpeech::kTop5050), 5050u);
}

TEST(PosLexicon, StrictCountsRejectShortLists) {
  EXPECT_THROW(PosLexicon::load(samples() / "pos"), LoadError);
  const PosLexicon lex = PosLexicon::load(samples() / "pos", false);
  EXPECT_TRUE(lex.has(PartOfSpeech::kAdjectives));
  EXPECT_FALSE(lex.has(PartOfSpeech::kVerbs));
  EXPECT_EQ(lex.words(PartOfSpeech::kConjunctions).front(), "and");
  EXPECT_THROW(lex.words(PartOfSpeech::kVerbs), InvalidArgument);
}

TEST(SamplePosWords, TopN) {
  const PosLexicon lex = tiny_lexicon();
  EXPECT_EQ(sample_pos_words(lex, PartOfSpeech::kNouns, 3, SampleMode::kTopN),
            (std::vector<std::string>{"time", "year", "people"}));
  EXPECT_TRUE(sample_pos_words(lex, PartOfSpeech::kNouns, 0, SampleMode::kTopN).empty());
  EXPECT_THROW(sample_pos_words(lex, PartOfSpeech::kNouns, 6, SampleMode::kTopN), InvalidArgument);
  EXPECT_THROW(sample_pos_words(lex, PartOfSpeech::kVerbs, 1, SampleMode::kTopN), InvalidArgument);
}

TEST(SamplePosWords, SeededRandom) {
  const PosLexicon lex = tiny_lexicon();
  const auto a = sample_pos_words(lex, PartOfSpeech::kNouns, 5, SampleMode::kRandom, 17);
  const auto b = sample_pos_words(lex, PartOfSpeech::kNouns, 5, SampleMode::kRandom, 17);
  EXPECT_EQ(a, b);
  for (const auto& w : a) {
    const auto& all = lex.words(PartOfSpeech::kNouns);
    EXPECT_NE(std::find(all.begin(), all.end(), w), all.end());
  }
  WordSampler s1(lex, PartOfSpeech::kNouns, 3), s2(lex, PartOfSpeech::kNouns, 3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(s1.next(), s2.next());
}
