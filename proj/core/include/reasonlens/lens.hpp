#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reasonlens/model.hpp"

namespace reasonlens {

struct TokenProb {
  TokenId id = 0;
  std::string token;  // decoded text (empty without a tokenizer)
  float probability = 0.0f;
};

// Descending probability, ties broken by ascending id. Throws for k > |V|.
std::vector<TokenProb> top_k(const Tensor& distribution, std::size_t k,
                             const Tokenizer* tokenizer = nullptr);

struct HeadProjection {
  int layer = 0;
  int head = 0;
  Tensor distribution;
  std::vector<TokenProb> top;
};

// softmax(x * matrix) for a d-vector x and a d x |V| matrix. The shared path
// behind both the fixed unembedding projection and trained lenses.
Tensor vocab_projection(std::span<const float> x, const Tensor& matrix);

// softmax(h^{l,j} W_U) at the last token position (no unembedding bias).
HeadProjection project_head(const Model& model, const ActivationCache& cache, int layer,
                            int head, std::size_t k = 10);

struct Lens {
  int layer = 0;
  int head = 0;
  Tensor matrix;  // d x |V|
  std::size_t steps = 0;
  std::string corpus_id;
  std::uint64_t seed = 0;
};

// Lens for (layer, head) initialized from a copy of W_U.
Lens init_lens(const Model& model, int layer, int head);

Tensor lens_apply(const Lens& lens, const Tensor& head_out_last);

enum class KlDirection {
  kLensModel,  // D_KL(p_lens || p_model)
  kModelLens,  // D_KL(p_model || p_lens)
};

KlDirection parse_kl_direction(const std::string& name);
std::string to_string(KlDirection direction);

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;  // d x |V|
};

// KL loss and its exact gradient with respect to lens.matrix. Throws
// InvalidArgument when model_dist does not sum to 1 within 1e-4.
LossAndGrad lens_loss_and_grad(const Lens& lens, const Tensor& head_out_last,
                               const Tensor& model_dist,
                               KlDirection direction = KlDirection::kLensModel);

// Loss only, in double precision.
double lens_loss(const Lens& lens, const Tensor& head_out_last, const Tensor& model_dist,
                 KlDirection direction = KlDirection::kLensModel);

// One (last-position head output, final model distribution) training pair per
// requested head.
struct LensExample {
  std::vector<Tensor> head_out;  // parallel to the head list
  Tensor model_dist;
};

using HeadId = std::pair<int, int>;

// Tokenizes `text`, truncates to `max_tokens` and runs one plain forward pass.
// Throws InvalidArgument for text that tokenizes to nothing.
LensExample collect_example(const Model& model, const std::string& text,
                            const std::vector<HeadId>& heads, std::size_t max_tokens);

struct LensTrainingConfig {
  std::vector<HeadId> heads;
  std::size_t steps = 200;
  float learning_rate = 1e-3f;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  KlDirection direction = KlDirection::kLensModel;
  std::size_t max_tokens = 32;
  std::string corpus_id;
  std::size_t workers = 1;
};

struct LensTrainingResult {
  std::vector<Lens> lenses;                     // parallel to config.heads
  std::vector<std::vector<double>> batch_loss;  // [head][step], pre-update
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

// Plain minibatch SGD on last-position pairs, batches drawn uniformly with
// replacement from the corpus. Forward passes are memoized per record.
LensTrainingResult train_lenses(const Model& model, const std::vector<std::string>& corpus,
                                const LensTrainingConfig& config,
                                const ProgressFn& progress = {});

// Mean loss of lens `head_index` over pre-collected examples.
double mean_kl(const Lens& lens, const std::vector<LensExample>& examples,
               std::size_t head_index, KlDirection direction = KlDirection::kLensModel);

// One archive per lens: tensor "matrix" plus metadata layer/head/steps/corpus_id/seed.
void save_lens(const Lens& lens, const std::filesystem::path& path);
Lens load_lens(const std::filesystem::path& path);

}  // namespace reasonlens
