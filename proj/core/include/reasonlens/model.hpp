#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "reasonlens/archive.hpp"
#include "reasonlens/tensor.hpp"
#include "reasonlens/tokenizer.hpp"

namespace reasonlens {

struct ModelConfig {
  std::size_t n_layer = 0;
  std::size_t n_head = 0;
  std::size_t d_model = 0;
  std::size_t d_ff = 0;
  std::size_t vocab_size = 0;
  std::size_t n_ctx = 0;
  float ln_eps = 1e-5f;
  std::string model_id;

  std::size_t head_dim() const { return d_model / n_head; }
  // Throws InvalidArgument when the shape parameters are inconsistent.
  void validate() const;

  static ModelConfig gpt2_small();
  static ModelConfig gpt2_large();
};

enum class ProcessingMode { kRaw, kProcessed };

ProcessingMode parse_processing_mode(const std::string& name);
std::string to_string(ProcessingMode mode);

// All weights use the x * W convention (input rows, output columns).
struct LayerWeights {
  Tensor ln1_g, ln1_b;  // empty once folded (processed mode)
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor wi, bi;  // d x d_ff
  Tensor wf, bf;  // d_ff x d
};

struct ModelWeights {
  Tensor wte;  // |V| x d
  Tensor wpe;  // n_ctx x d
  std::vector<LayerWeights> layers;
  Tensor lnf_g, lnf_b;
  Tensor wu;  // d x |V|
  Tensor bu;  // |V|; empty in raw mode
};

class Model {
 public:
  Model(ModelConfig config, ModelWeights weights, ProcessingMode mode,
        std::shared_ptr<const Tokenizer> tokenizer = nullptr);

  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }
  ProcessingMode mode() const { return mode_; }

  bool has_tokenizer() const { return tokenizer_ != nullptr; }
  // Throws InvalidArgument when the model was built without a tokenizer.
  const Tokenizer& tokenizer() const;
  std::shared_ptr<const Tokenizer> tokenizer_ptr() const { return tokenizer_; }

 private:
  ModelConfig config_;
  ModelWeights weights_;
  ProcessingMode mode_;
  std::shared_ptr<const Tokenizer> tokenizer_;
};

// Loads a canonical-manifest archive. Raw mode keeps the weights verbatim;
// processed mode folds layer-norm gains/biases into the following linear maps,
// centers reading and writing weights, folds value biases into the output
// bias and centers the unembedding. Errors name the offending tensor.
Model load_model(const std::filesystem::path& archive_path,
                 const std::filesystem::path& tokenizer_dir, ProcessingMode mode);
Model load_model(const TensorArchive& archive, std::shared_ptr<const Tokenizer> tokenizer,
                 ProcessingMode mode);

// In-place processing of raw weights (the transformation load_model applies
// in processed mode).
void process_weights(ModelWeights& weights);

// Canonical-manifest archive of raw weights. Throws for processed models.
TensorArchive to_archive(const Model& model);

// GPT-2-style random initialization (N(0, 0.02) matrices, perturbed norms and
// biases, tied unembedding). Deterministic for a given seed.
ModelWeights random_weights(const ModelConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Hooks

enum class HookSite { kResidPre, kHeadOutput, kAttnSum, kMlpOut, kResidPost, kFinalLogits };

struct HookPoint {
  HookSite site = HookSite::kFinalLogits;
  int layer = -1;
  int head = -1;

  static HookPoint resid_pre(int layer) { return {HookSite::kResidPre, layer, -1}; }
  static HookPoint head_output(int layer, int head) {
    return {HookSite::kHeadOutput, layer, head};
  }
  static HookPoint attn_sum(int layer) { return {HookSite::kAttnSum, layer, -1}; }
  static HookPoint mlp_out(int layer) { return {HookSite::kMlpOut, layer, -1}; }
  static HookPoint resid_post(int layer) { return {HookSite::kResidPost, layer, -1}; }
  static HookPoint final_logits() { return {HookSite::kFinalLogits, -1, -1}; }

  std::string to_string() const;
  auto operator<=>(const HookPoint&) const = default;
};

// Every head_output point of one layer.
std::vector<HookPoint> all_heads(const ModelConfig& config, int layer);

// Replacement function applied at a hook site; must preserve the shape.
using Mutation = std::function<Tensor(const Tensor&)>;

struct Intervention {
  HookPoint point;
  Mutation mutate;
};

class ActivationCache {
 public:
  bool contains(const HookPoint& point) const { return values_.count(point) != 0; }
  // Throws NotCapturedError.
  const Tensor& get(const HookPoint& point) const;
  void store(const HookPoint& point, Tensor value);
  std::size_t size() const { return values_.size(); }

 private:
  std::map<HookPoint, Tensor> values_;
};

enum class LogitScope { kAll, kLast };

struct ForwardOptions {
  std::vector<Intervention> interventions;
  std::vector<HookPoint> captures;
  LogitScope logits = LogitScope::kAll;
  // Run only the first n blocks and skip the unembedding (logits left empty).
  std::optional<std::size_t> max_blocks;
};

struct ForwardResult {
  Tensor logits;    // N x |V|, or 1 x |V| for LogitScope::kLast
  Tensor residual;  // residual stream after the last block that ran
  ActivationCache cache;
};

// Real GPT-2 computation with hook sites. Throws InvalidArgument for an
// empty or over-long token sequence or an out-of-range hook point.
ForwardResult forward(const Model& model, std::span<const TokenId> tokens,
                      const ForwardOptions& options = {});

// Final layer norm followed by the unembedding, for each row of `residual`.
Tensor unembed(const Model& model, const Tensor& residual);

// Softmax of the last row of a logits tensor.
Tensor next_token_distribution(const Tensor& logits);

// Logit-lens view of a captured residual: softmax(unembed(R)) at the last row.
Tensor logit_lens(const Model& model, const Tensor& residual);

// Per-head contribution h^{l,j}, excluding the output bias.
const Tensor& head_output(const ActivationCache& cache, int layer, int head);

// Greedy continuation of `tokens` by `n_new` tokens (returns only the new ids).
TokenSequence greedy_decode(const Model& model, std::span<const TokenId> tokens,
                            std::size_t n_new);

}  // namespace reasonlens
