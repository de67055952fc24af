#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reasonlens/datasets.hpp"
#include "reasonlens/interventions.hpp"
#include "reasonlens/model.hpp"

namespace reasonlens {

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

// " " + s unless s already starts with a space.
std::string with_leading_space(const std::string& s);

struct ScoringOptions {
  bool answer_leading_space = true;
  // Prefix prompts with <|endoftext|>; off by default (plain BPE ids).
  bool prepend_bos = false;
};

TokenSequence prompt_tokens(const Model& model, const std::string& prompt,
                            const ScoringOptions& options = {});

// First token of the (space-prefixed) answer. Throws InvalidArgument for an
// empty answer.
TokenId answer_token(const Model& model, const std::string& answer,
                     const ScoringOptions& options = {});

// Probability of the first answer token after `prompt`.
double answer_probability(const Model& model, const std::string& prompt,
                          const std::string& answer, const ScoringOptions& options = {});

enum class LogBase { kNatural, kTwo };

// -log p. Throws InvalidArgument for p <= 0 or p > 1.
double surprisal(double p, LogBase base = LogBase::kNatural);

// 100 (post - pre) / pre. Throws InvalidArgument for pre <= 0.
double percent_difference(double p_pre, double p_post);

struct RobustMean {
  double mean = 0.0;
  std::size_t n_excluded = 0;
};

// Mean after dropping values strictly outside [mu - 2 sigma, mu + 2 sigma]
// (population sigma, one pass). Throws InvalidArgument when empty.
RobustMean robust_mean(std::span<const double> values);

struct DatasetStats {
  std::size_t n_pairs = 0;
  double single_prob = 0, single_surprisal = 0, single_tokens = 0;
  double multi_prob = 0, multi_surprisal = 0, multi_tokens = 0;
};

// Means over all pairs; surprisal is averaged per prompt. Token counts exclude
// any BOS token.
DatasetStats dataset_stats(const Model& model, const std::vector<PromptPair>& pairs,
                           const ScoringOptions& options = {}, std::size_t workers = 1,
                           LogBase base = LogBase::kNatural);

struct InjectionSettings {
  EncodingStyle style = EncodingStyle::kUnembed;
  Broadcast broadcast = Broadcast::kAll;
  std::optional<int> head;
  EncodeOptions encode;
  bool memory_leading_space = true;
  ScoringOptions scoring;
};

enum class MemorySource { kCurated, kFixedWord, kRandomPos };

MemorySource parse_memory_source(const std::string& name);
std::string to_string(MemorySource source);

struct SweepConfig {
  std::vector<int> layers;
  std::vector<double> taus;
  InjectionSettings injection;
  MemorySource source = MemorySource::kCurated;
  std::string fixed_word;
  PartOfSpeech pos = PartOfSpeech::kNouns;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct PromptResult {
  std::size_t prompt = 0;
  std::string memory;  // text actually encoded (after the leading-space rule)
  double p_pre = 0.0;
  double p_post = 0.0;
  double percent_diff = 0.0;
};

struct SweepCell {
  int layer = 0;
  double tau = 0.0;
  std::vector<PromptResult> results;
  double robust_mean = 0.0;
  std::size_t n_excluded = 0;
};

struct SweepGrid {
  std::vector<SweepCell> cells;  // layer-major, then tau
  std::vector<double> p_pre;     // per prompt
};

// Every (layer, tau, prompt) injection on the multi-hop prompts. Random-word
// memories are drawn from one stream seeded with config.seed in
// (layer, tau, prompt) order before any work is dispatched, so results do not
// depend on the worker count. `lexicon` is required for kRandomPos.
SweepGrid run_injection_sweep(const Model& model, const std::vector<PromptPair>& pairs,
                              const SweepConfig& config, const PosLexicon* lexicon = nullptr,
                              const ProgressFn& progress = {});

// The same sweep with a fresh random word of `pos` for every injection.
SweepGrid run_pos_sweep(const Model& model, const std::vector<PromptPair>& pairs,
                        std::vector<int> layers, std::vector<double> taus, PartOfSpeech pos,
                        std::uint64_t seed, const PosLexicon& lexicon,
                        const InjectionSettings& injection = {}, std::size_t workers = 1,
                        const ProgressFn& progress = {});

struct RandomInjectionConfig {
  int layer = 0;
  double tau = 0.0;
  std::vector<PartOfSpeech> parts{kAllPartsOfSpeech.begin(), kAllPartsOfSpeech.end()};
  std::size_t words_per_pos = 40;
  InjectionSettings injection;
  std::size_t workers = 1;
};

struct PosInjectionResult {
  PartOfSpeech pos = PartOfSpeech::kNouns;
  std::vector<std::string> words;
  std::vector<double> percent_diffs;  // word-major, then prompt
  RobustMean robust;
};

// Each of the first `words_per_pos` words of every part of speech injected
// into every multi-hop prompt at one (layer, tau).
std::vector<PosInjectionResult> run_random_injection(const Model& model,
                                                     const std::vector<PromptPair>& pairs,
                                                     const RandomInjectionConfig& config,
                                                     const PosLexicon& lexicon,
                                                     const ProgressFn& progress = {});

struct FlopReport {
  EncodingStyle style = EncodingStyle::kUnembed;
  double n_ctx = 0.0;
  std::size_t d_model = 0, n_layer = 0, d_attn = 0, d_ff = 0;
  double embed_flop = 0.0;
  double n_params = 0.0;  // N, layer-wise only
  double ff_flop = 0.0;
  double total_flops = 0.0;
};

// Embed/Unembed: n_ctx d_model. LayerWise: n_ctx 4 d_model
// + 2N + 2 n_layer n_ctx d_attn, N = 2 d_model n_layer (2 d_attn + d_ff).
// Throws InvalidArgument for n_ctx <= 0.
FlopReport flops_for_encoding(EncodingStyle style, double n_ctx, const ModelConfig& config);

// Output artifacts. `config_json` is the resolved run configuration (a JSON
// object) embedded verbatim in every sidecar.
std::string sweep_csv(const SweepGrid& grid);
std::string sweep_json(const SweepGrid& grid, const std::vector<PromptPair>& pairs,
                       const std::string& config_json);
void write_sweep(const std::filesystem::path& csv_path, const SweepGrid& grid,
                 const std::vector<PromptPair>& pairs, const std::string& config_json);
std::string flop_report_json(const FlopReport& report, const std::string& config_json);

}  // namespace reasonlens
