#include "reasonlens/datasets.hpp"

#include <cctype>
#include <fstream>

#include "json.hpp"
#include "reasonlens/errors.hpp"

namespace reasonlens {
namespace {

bool ends_in_space(const std::string& s) {
  return !s.empty() && std::isspace(static_cast<unsigned char>(s.back()));
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(where + "invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw LoadError(where + "record is not a JSON object");
    try {
      fn(j, where);
    } catch (const InvalidArgument& e) {
      throw LoadError(where + e.what());
    }
  }
}

std::string string_field(const nlohmann::json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw LoadError(where + "missing key '" + key + "'");
  if (!it->is_string()) throw LoadError(where + "key '" + key + "' is not a string");
  return it->get<std::string>();
}

constexpr std::array<const char*, 6> kPosNames = {"adjectives", "adverbs", "conjunctions",
                                                  "nouns",      "verbs",   "top5050"};
constexpr std::array<std::size_t, 6> kPosCounts = {824, 331, 40, 2635, 969, 5050};

}  // namespace

void validate(const PromptPair& p) {
  if (p.single_hop.empty()) throw InvalidArgument("single_hop is empty");
  if (p.multi_hop.empty()) throw InvalidArgument("multi_hop is empty");
  if (p.answer.empty()) throw InvalidArgument("answer is empty");
  if (p.memory.empty()) throw InvalidArgument("memory is empty");
  if (ends_in_space(p.single_hop)) throw InvalidArgument("single_hop ends in whitespace");
  if (ends_in_space(p.multi_hop)) throw InvalidArgument("multi_hop ends in whitespace");
}

PromptPair generate_2wmh_pair(const KnowledgeTriplePair& t) {
  const std::pair<const char*, const std::string*> fields[] = {
      {"s1", &t.s1}, {"r1", &t.r1}, {"s2", &t.s2}, {"r2", &t.r2}, {"s3", &t.s3}};
  for (const auto& [name, value] : fields) {
    if (value->empty()) throw InvalidArgument(std::string("triple field ") + name + " is empty");
  }
  PromptPair p;
  p.single_hop = "The " + t.r2 + " of " + t.s2 + " is";
  p.multi_hop = "The " + t.r2 + " of the " + t.r1 + " of " + t.s1 + " is";
  p.answer = t.s3;
  p.memory = t.s2;
  return p;
}

std::vector<PromptPair> load_prompt_pairs(const std::filesystem::path& path) {
  std::vector<PromptPair> out;
  for_each_json_line(path, [&](const nlohmann::json& j, const std::string& where) {
    PromptPair p;
    p.single_hop = string_field(j, "single_hop", where);
    p.multi_hop = string_field(j, "multi_hop", where);
    p.answer = string_field(j, "answer", where);
    p.memory = string_field(j, "memory", where);
    validate(p);
    out.push_back(std::move(p));
  });
  return out;
}

void write_prompt_pairs(const std::filesystem::path& path, const std::vector<PromptPair>& pairs) {
  auto partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::trunc);
    if (!out) throw LoadError("cannot write " + partial.string());
    for (const auto& p : pairs) {
      validate(p);
      nlohmann::ordered_json j;
      j["single_hop"] = p.single_hop;
      j["multi_hop"] = p.multi_hop;
      j["answer"] = p.answer;
      j["memory"] = p.memory;
      out << j.dump() << '\n';
    }
    if (!out) throw LoadError("short write on " + partial.string());
  }
  std::filesystem::rename(partial, path);
}

std::vector<KnowledgeTriplePair> load_triples(const std::filesystem::path& path) {
  std::vector<KnowledgeTriplePair> out;
  for_each_json_line(path, [&](const nlohmann::json& j, const std::string& where) {
    KnowledgeTriplePair t{string_field(j, "s1", where), string_field(j, "r1", where),
                          string_field(j, "s2", where), string_field(j, "r2", where),
                          string_field(j, "s3", where)};
    out.push_back(std::move(t));
  });
  return out;
}

std::vector<std::string> load_text_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(std::move(line));
  }
  return out;
}

PartOfSpeech parse_part_of_speech(const std::string& name) {
  for (std::size_t i = 0; i < kPosNames.size(); ++i) {
    if (name == kPosNames[i]) return kAllPartsOfSpeech[i];
  }
  if (name == "adj" || name == "adjective") return PartOfSpeech::kAdjectives;
  if (name == "adv" || name == "adverb") return PartOfSpeech::kAdverbs;
  if (name == "conj" || name == "conjunction") return PartOfSpeech::kConjunctions;
  if (name == "noun") return PartOfSpeech::kNouns;
  if (name == "verb") return PartOfSpeech::kVerbs;
  if (name == "top" || name == "top-5050") return PartOfSpeech::kTop5050;
  throw InvalidArgument("unknown part of speech '" + name + "'");
}

std::string to_string(PartOfSpeech pos) { return kPosNames[static_cast<std::size_t>(pos)]; }

std::size_t expected_count(PartOfSpeech pos) {
  return kPosCounts[static_cast<std::size_t>(pos)];
}

PosLexicon PosLexicon::load(const std::filesystem::path& dir, bool strict_counts) {
  PosLexicon lex;
  for (PartOfSpeech pos : kAllPartsOfSpeech) {
    const auto path = dir / (to_string(pos) + ".txt");
    if (!strict_counts && !std::filesystem::exists(path)) continue;
    std::vector<std::string> words;
    for (auto& w : load_text_lines(path)) {
      const auto b = w.find_first_not_of(" \t");
      const auto e = w.find_last_not_of(" \t");
      if (b != std::string::npos) words.push_back(w.substr(b, e - b + 1));
    }
    if (strict_counts && words.size() != expected_count(pos)) {
      throw LoadError(path.string() + ": expected " + std::to_string(expected_count(pos)) +
                      " words, found " + std::to_string(words.size()));
    }
    lex.set(pos, std::move(words));
  }
  return lex;
}

void PosLexicon::set(PartOfSpeech pos, std::vector<std::string> words) {
  const auto i = static_cast<std::size_t>(pos);
  lists_[i] = std::move(words);
  present_[i] = true;
}

bool PosLexicon::has(PartOfSpeech pos) const {
  return present_[static_cast<std::size_t>(pos)];
}

const std::vector<std::string>& PosLexicon::words(PartOfSpeech pos) const {
  if (!has(pos)) throw InvalidArgument("lexicon has no " + to_string(pos) + " list");
  return lists_[static_cast<std::size_t>(pos)];
}

std::vector<std::string> sample_pos_words(const PosLexicon& lexicon, PartOfSpeech pos,
                                          std::size_t n, SampleMode mode, std::uint64_t seed) {
  const auto& words = lexicon.words(pos);
  if (n > words.size()) {
    throw InvalidArgument("requested " + std::to_string(n) + " " + to_string(pos) +
                          " but the list has " + std::to_string(words.size()));
  }
  if (mode == SampleMode::kTopN) return {words.begin(), words.begin() + n};
  std::vector<std::string> out;
  if (n == 0) return out;
  WordSampler sampler(lexicon, pos, seed);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.next());
  return out;
}

WordSampler::WordSampler(const PosLexicon& lexicon, PartOfSpeech pos, std::uint64_t seed)
    : words_(&lexicon.words(pos)), rng_(seed) {
  if (words_->empty()) throw InvalidArgument("cannot sample from an empty " + to_string(pos) + " list");
  pick_ = std::uniform_int_distribution<std::size_t>(0, words_->size() - 1);
}

const std::string& WordSampler::next() { return (*words_)[pick_(rng_)]; }

}  // namespace reasonlens
