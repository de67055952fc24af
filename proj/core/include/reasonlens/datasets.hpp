#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace reasonlens {

struct KnowledgeTriplePair {
  std::string s1, r1, s2, r2, s3;
};

struct PromptPair {
  std::string single_hop;
  std::string multi_hop;
  std::string answer;
  std::string memory;

  bool operator==(const PromptPair&) const = default;
};

// Throws InvalidArgument when a field is empty or a prompt ends in whitespace.
void validate(const PromptPair& pair);

// single_hop "The {r2} of {s2} is", multi_hop "The {r2} of the {r1} of {s1} is",
// answer s3, memory s2.
PromptPair generate_2wmh_pair(const KnowledgeTriplePair& triples);

// JSON-lines with keys single_hop, multi_hop, answer, memory. Blank lines are
// skipped; malformed records raise LoadError "path:line: ...".
std::vector<PromptPair> load_prompt_pairs(const std::filesystem::path& path);
void write_prompt_pairs(const std::filesystem::path& path, const std::vector<PromptPair>& pairs);

// JSON-lines with keys s1, r1, s2, r2, s3.
std::vector<KnowledgeTriplePair> load_triples(const std::filesystem::path& path);

// Plain text corpus, one record per non-empty line.
std::vector<std::string> load_text_lines(const std::filesystem::path& path);

enum class PartOfSpeech { kAdjectives, kAdverbs, kConjunctions, kNouns, kVerbs, kTop5050 };

inline constexpr std::array<PartOfSpeech, 6> kAllPartsOfSpeech = {
    PartOfSpeech::kAdjectives, PartOfSpeech::kAdverbs, PartOfSpeech::kConjunctions,
    PartOfSpeech::kNouns,      PartOfSpeech::kVerbs,   PartOfSpeech::kTop5050};

// Accepts the canonical names (adjectives, adverbs, conjunctions, nouns, verbs,
// top5050) and short forms (adj, adv, conj, noun, verb, top). Throws
// InvalidArgument otherwise.
PartOfSpeech parse_part_of_speech(const std::string& name);
std::string to_string(PartOfSpeech pos);
// Published list length for each part of speech.
std::size_t expected_count(PartOfSpeech pos);

// Frequency-ordered word lists, one per part of speech.
class PosLexicon {
 public:
  // Reads <dir>/<name>.txt for every part of speech (one word per line,
  // most common first). With `strict_counts`, every list must exist and its
  // length must equal expected_count(); otherwise absent files are skipped.
  static PosLexicon load(const std::filesystem::path& dir, bool strict_counts = true);

  void set(PartOfSpeech pos, std::vector<std::string> words);
  bool has(PartOfSpeech pos) const;
  // Throws InvalidArgument when the list was never loaded.
  const std::vector<std::string>& words(PartOfSpeech pos) const;

 private:
  std::array<std::vector<std::string>, 6> lists_;
  std::array<bool, 6> present_{};
};

enum class SampleMode { kTopN, kRandom };

// kTopN: the first n words. kRandom: n uniform draws with replacement from a
// generator seeded with `seed`. Throws InvalidArgument when n exceeds the list.
std::vector<std::string> sample_pos_words(const PosLexicon& lexicon, PartOfSpeech pos,
                                          std::size_t n, SampleMode mode,
                                          std::uint64_t seed = 0);

// Successive uniform draws from one seeded stream.
class WordSampler {
 public:
  WordSampler(const PosLexicon& lexicon, PartOfSpeech pos, std::uint64_t seed);
  const std::string& next();

 private:
  const std::vector<std::string>* words_;
  std::mt19937_64 rng_;
  std::uniform_int_distribution<std::size_t> pick_;
};

}  // namespace reasonlens
