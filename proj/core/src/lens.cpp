#include "reasonlens/lens.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <set>

#include "reasonlens/archive.hpp"
#include "reasonlens/errors.hpp"
#include "reasonlens/parallel.hpp"

namespace reasonlens {
namespace {

// Floor for model probabilities that underflowed to zero in float32.
constexpr double kMinProb = 1e-45;

std::vector<float> project_logits(std::span<const float> x, const Tensor& matrix) {
  if (matrix.rank() != 2 || x.size() != matrix.rows()) {
    throw DimensionError("projection of a length-" + std::to_string(x.size()) +
                         " vector through a " + matrix.shape_string() + " matrix");
  }
  std::vector<float> z(matrix.cols(), 0.0f);
  kernels::gemm_accumulate(x.data(), matrix.raw(), z.data(), 1, x.size(), matrix.cols());
  return z;
}

void check_distribution(const Tensor& dist, std::size_t v) {
  if (dist.size() != v) {
    throw DimensionError("model distribution has " + std::to_string(dist.size()) +
                         " entries, lens has " + std::to_string(v));
  }
  double sum = 0.0;
  for (float p : dist.data()) sum += p;
  if (std::abs(sum - 1.0) > 1e-4) {
    throw InvalidArgument("model distribution sums to " + std::to_string(sum) +
                          ", not 1 within 1e-4");
  }
}

// KL loss from lens logits z and the model distribution q; optionally writes
// dL/dz into g.
double kl_from_logits(std::span<const float> z, std::span<const float> q,
                      KlDirection direction, std::vector<double>* g) {
  const std::size_t v = z.size();
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (float zi : z) sum += std::exp(static_cast<double>(zi) - mx);
  const double log_norm = mx + std::log(sum);

  double loss = 0.0;
  if (g) g->assign(v, 0.0);
  if (direction == KlDirection::kLensModel) {
    // L = sum p (log p - log q);  dL/dz_v = p_v (log p_v - log q_v - L)
    for (std::size_t i = 0; i < v; ++i) {
      const double logp = z[i] - log_norm;
      const double p = std::exp(logp);
      const double logq = std::log(std::max(static_cast<double>(q[i]), kMinProb));
      const double term = logp - logq;
      loss += p * term;
      if (g) (*g)[i] = p * term;
    }
    if (g) {
      for (std::size_t i = 0; i < v; ++i) {
        (*g)[i] -= std::exp(z[i] - log_norm) * loss;
      }
    }
  } else {
    // L = sum q (log q - log p);  dL/dz_v = p_v - q_v
    for (std::size_t i = 0; i < v; ++i) {
      const double logp = z[i] - log_norm;
      const double qi = q[i];
      if (qi > 0.0) loss += qi * (std::log(qi) - logp);
      if (g) (*g)[i] = std::exp(logp) - qi;
    }
  }
  return std::max(loss, 0.0);
}

}  // namespace

std::vector<TokenProb> top_k(const Tensor& distribution, std::size_t k,
                             const Tokenizer* tokenizer) {
  const std::size_t v = distribution.size();
  if (k > v) {
    throw InvalidArgument("top_k: k = " + std::to_string(k) + " exceeds " +
                          std::to_string(v) + " entries");
  }
  std::vector<TokenId> ids(v);
  std::iota(ids.begin(), ids.end(), 0);
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) {
                      if (distribution[a] != distribution[b]) {
                        return distribution[a] > distribution[b];
                      }
                      return a < b;
                    });
  std::vector<TokenProb> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    TokenProb tp;
    tp.id = ids[i];
    tp.probability = distribution[ids[i]];
    if (tokenizer) tp.token = tokenizer->token_bytes(ids[i]);
    out.push_back(std::move(tp));
  }
  return out;
}

Tensor vocab_projection(std::span<const float> x, const Tensor& matrix) {
  Tensor out({matrix.cols()}, project_logits(x, matrix));
  kernels::softmax_row(out.data());
  return out;
}

HeadProjection project_head(const Model& model, const ActivationCache& cache, int layer,
                            int head, std::size_t k) {
  const Tensor& h = head_output(cache, layer, head);
  HeadProjection hp;
  hp.layer = layer;
  hp.head = head;
  hp.distribution = vocab_projection(h.row(h.rows() - 1), model.weights().wu);
  hp.top = top_k(hp.distribution, std::min(k, hp.distribution.size()),
                 model.has_tokenizer() ? &model.tokenizer() : nullptr);
  return hp;
}

Lens init_lens(const Model& model, int layer, int head) {
  const ModelConfig& cfg = model.config();
  if (layer < 0 || static_cast<std::size_t>(layer) >= cfg.n_layer || head < 0 ||
      static_cast<std::size_t>(head) >= cfg.n_head) {
    throw InvalidArgument("lens head (" + std::to_string(layer) + "," + std::to_string(head) +
                          ") outside the model");
  }
  Lens lens;
  lens.layer = layer;
  lens.head = head;
  lens.matrix = model.weights().wu;
  return lens;
}

Tensor lens_apply(const Lens& lens, const Tensor& head_out_last) {
  return vocab_projection(head_out_last.data(), lens.matrix);
}

KlDirection parse_kl_direction(const std::string& name) {
  if (name == "lens||model") return KlDirection::kLensModel;
  if (name == "model||lens") return KlDirection::kModelLens;
  throw InvalidArgument("KL direction must be 'lens||model' or 'model||lens', got '" + name +
                        "'");
}

std::string to_string(KlDirection direction) {
  return direction == KlDirection::kLensModel ? "lens||model" : "model||lens";
}

LossAndGrad lens_loss_and_grad(const Lens& lens, const Tensor& head_out_last,
                               const Tensor& model_dist, KlDirection direction) {
  check_distribution(model_dist, lens.matrix.cols());
  const auto z = project_logits(head_out_last.data(), lens.matrix);
  std::vector<double> g;
  LossAndGrad out;
  out.loss = kl_from_logits(z, model_dist.data(), direction, &g);
  const std::size_t d = lens.matrix.rows(), v = lens.matrix.cols();
  out.grad = Tensor({d, v});
  for (std::size_t i = 0; i < d; ++i) {
    const double xi = head_out_last[i];
    float* row = out.grad.raw() + i * v;
    for (std::size_t c = 0; c < v; ++c) row[c] = static_cast<float>(xi * g[c]);
  }
  return out;
}

double lens_loss(const Lens& lens, const Tensor& head_out_last, const Tensor& model_dist,
                 KlDirection direction) {
  check_distribution(model_dist, lens.matrix.cols());
  const auto z = project_logits(head_out_last.data(), lens.matrix);
  return kl_from_logits(z, model_dist.data(), direction, nullptr);
}

LensExample collect_example(const Model& model, const std::string& text,
                            const std::vector<HeadId>& heads, std::size_t max_tokens) {
  TokenSequence ids = model.tokenizer().encode(text);
  if (ids.empty()) throw InvalidArgument("lens training record tokenizes to nothing");
  const std::size_t limit = std::min(max_tokens, model.config().n_ctx);
  if (limit > 0 && ids.size() > limit) ids.resize(limit);

  ForwardOptions opts;
  opts.logits = LogitScope::kLast;
  for (const auto& [l, h] : heads) opts.captures.push_back(HookPoint::head_output(l, h));
  ForwardResult r = forward(model, ids, opts);

  LensExample ex;
  for (const auto& [l, h] : heads) {
    ex.head_out.push_back(head_output(r.cache, l, h).row_copy(ids.size() - 1));
  }
  ex.model_dist = next_token_distribution(r.logits);
  return ex;
}

LensTrainingResult train_lenses(const Model& model, const std::vector<std::string>& corpus,
                                const LensTrainingConfig& config, const ProgressFn& progress) {
  if (config.heads.empty()) throw InvalidArgument("train_lenses: no heads requested");
  if (config.batch_size == 0) throw InvalidArgument("train_lenses: batch size must be > 0");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!model.tokenizer().encode(corpus[i]).empty()) usable.push_back(i);
  }
  if (usable.empty()) throw InvalidArgument("train_lenses: empty corpus");

  LensTrainingResult result;
  for (const auto& [l, h] : config.heads) {
    Lens lens = init_lens(model, l, h);
    lens.corpus_id = config.corpus_id;
    lens.seed = config.seed;
    result.lenses.push_back(std::move(lens));
  }
  result.batch_loss.assign(config.heads.size(), {});

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  std::vector<std::unique_ptr<LensExample>> memo(corpus.size());

  const std::size_t d = model.config().d_model;
  const std::size_t v = model.config().vocab_size;
  const double scale = static_cast<double>(config.learning_rate) /
                       static_cast<double>(config.batch_size);

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> batch(config.batch_size);
    for (auto& b : batch) b = usable[pick(rng)];

    std::set<std::size_t> missing_set;
    for (auto b : batch) {
      if (!memo[b]) missing_set.insert(b);
    }
    const std::vector<std::size_t> missing(missing_set.begin(), missing_set.end());
    parallel_for(missing.size(), config.workers, [&](std::size_t i) {
      memo[missing[i]] = std::make_unique<LensExample>(
          collect_example(model, corpus[missing[i]], config.heads, config.max_tokens));
    });

    for (std::size_t hi = 0; hi < config.heads.size(); ++hi) {
      Lens& lens = result.lenses[hi];
      // One product for the whole batch, taken at the pre-update matrix.
      Tensor xs({batch.size(), d});
      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const Tensor& x = memo[batch[bi]]->head_out[hi];
        std::copy(x.data().begin(), x.data().end(), xs.raw() + bi * d);
      }
      const Tensor zs = matmul(xs, lens.matrix);
      std::vector<std::vector<double>> grads(batch.size());
      double loss_sum = 0.0;
      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        loss_sum += kl_from_logits(zs.row(bi), memo[batch[bi]]->model_dist.data(),
                                   config.direction, &grads[bi]);
      }
      result.batch_loss[hi].push_back(loss_sum / static_cast<double>(batch.size()));

      if (config.learning_rate != 0.0f) {
        // M -= sum_b x_b g_b^T in a single sweep over M, examples applied in
        // batch order.
        std::vector<float> gs(batch.size() * v);
        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
          for (std::size_t c = 0; c < v; ++c) gs[bi * v + c] = static_cast<float>(scale * grads[bi][c]);
        }
        for (std::size_t i = 0; i < d; ++i) {
          float* row = lens.matrix.raw() + i * v;
          for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            const float xi = xs.at(bi, i);
            const float* g = gs.data() + bi * v;
            for (std::size_t c = 0; c < v; ++c) row[c] -= xi * g[c];
          }
        }
      }
      ++lens.steps;
    }
    if (progress) progress(step + 1, config.steps);
  }
  return result;
}

double mean_kl(const Lens& lens, const std::vector<LensExample>& examples,
               std::size_t head_index, KlDirection direction) {
  if (examples.empty()) throw InvalidArgument("mean_kl: no examples");
  double total = 0.0;
  for (const auto& ex : examples) {
    total += lens_loss(lens, ex.head_out.at(head_index), ex.model_dist, direction);
  }
  return total / static_cast<double>(examples.size());
}

void save_lens(const Lens& lens, const std::filesystem::path& path) {
  TensorArchive ar;
  ar.put("matrix", lens.matrix);
  ar.metadata()["layer"] = std::to_string(lens.layer);
  ar.metadata()["head"] = std::to_string(lens.head);
  ar.metadata()["steps"] = std::to_string(lens.steps);
  ar.metadata()["corpus_id"] = lens.corpus_id;
  ar.metadata()["seed"] = std::to_string(lens.seed);
  ar.write(path);
}

Lens load_lens(const std::filesystem::path& path) {
  TensorArchive ar = TensorArchive::read(path);
  const auto& meta = ar.metadata();
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw LoadError("lens archive lacks metadata field '" + key + "'");
    return it->second;
  };
  Lens lens;
  try {
    lens.layer = std::stoi(field("layer"));
    lens.head = std::stoi(field("head"));
    lens.steps = std::stoull(field("steps"));
    lens.seed = std::stoull(field("seed"));
  } catch (const std::logic_error&) {
    throw LoadError("lens archive has a malformed numeric metadata field");
  }
  lens.corpus_id = field("corpus_id");
  lens.matrix = ar.take("matrix");
  if (lens.matrix.rank() != 2) throw LoadError("lens tensor 'matrix' must be rank 2");
  if (!lens.matrix.all_finite()) throw LoadError("lens tensor 'matrix' has non-finite entries");
  return lens;
}

}  // namespace reasonlens
