#include "reasonlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "reasonlens/errors.hpp"

namespace reasonlens {
namespace {

class HookRunner {
 public:
  HookRunner(const ForwardOptions& options, ActivationCache& cache)
      : options_(options), cache_(cache) {}

  bool active(const HookPoint& p) const {
    for (const auto& iv : options_.interventions) {
      if (iv.point == p) return true;
    }
    return std::find(options_.captures.begin(), options_.captures.end(), p) !=
           options_.captures.end();
  }

  bool any_head_hook(int layer) const {
    auto is_head = [&](const HookPoint& p) {
      return p.site == HookSite::kHeadOutput && p.layer == layer;
    };
    for (const auto& iv : options_.interventions) {
      if (is_head(iv.point)) return true;
    }
    return std::any_of(options_.captures.begin(), options_.captures.end(), is_head);
  }

  void apply(const HookPoint& p, Tensor& value) const {
    for (const auto& iv : options_.interventions) {
      if (!(iv.point == p)) continue;
      Tensor next = iv.mutate(value);
      if (next.shape() != value.shape()) {
        throw DimensionError("intervention at " + p.to_string() + " changed shape " +
                             value.shape_string() + " to " + next.shape_string());
      }
      value = std::move(next);
    }
    if (std::find(options_.captures.begin(), options_.captures.end(), p) !=
        options_.captures.end()) {
      cache_.store(p, value);
    }
  }

 private:
  const ForwardOptions& options_;
  ActivationCache& cache_;
};

void validate_point(const ModelConfig& cfg, const HookPoint& p) {
  const bool layer_ok = p.layer >= 0 && static_cast<std::size_t>(p.layer) < cfg.n_layer;
  bool ok = true;
  switch (p.site) {
    case HookSite::kFinalLogits:
      break;
    case HookSite::kHeadOutput:
      ok = layer_ok && p.head >= 0 && static_cast<std::size_t>(p.head) < cfg.n_head;
      break;
    default:
      ok = layer_ok;
  }
  if (!ok) throw InvalidArgument("invalid hook point " + p.to_string());
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = matmul(x, w);
  add_row_inplace(out, b.data());
  return out;
}

// Causal multi-head attention; returns the concatenated per-head values
// z = [A_0 V_0, ..., A_{H-1} V_{H-1}] as an N x d tensor.
Tensor attention_values(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t n_head) {
  const std::size_t n = q.rows();
  const std::size_t d = q.cols();
  const std::size_t dh = d / n_head;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();
  Tensor z({n, d});
  std::vector<float> scores(n);
  for (std::size_t h = 0; h < n_head; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      const float* qi = q.raw() + i * d + off;
      for (std::size_t j = 0; j < n; ++j) {
        if (j > i) {
          scores[j] = kNegInf;
          continue;
        }
        const float* kj = k.raw() + j * d + off;
        float acc = 0.0f;
        for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
        scores[j] = acc * inv_sqrt;
      }
      kernels::softmax_row(scores);
      float* zi = z.raw() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        const float a = scores[j];
        const float* vj = v.raw() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) zi[c] += a * vj[c];
      }
    }
  }
  return z;
}

// h^{l,j} = z_j W_O[j] for one head (no bias).
Tensor head_contribution(const Tensor& z, const Tensor& wo, std::size_t head,
                         std::size_t dh) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  std::vector<float> zj(n * dh);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(z.raw() + i * d + head * dh, dh, zj.data() + i * dh);
  }
  Tensor out({n, wo.cols()});
  kernels::gemm(zj.data(), wo.raw() + head * dh * wo.cols(), out.raw(), n, dh, wo.cols());
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layer == 0 || n_head == 0 || d_model == 0 || vocab_size == 0 || n_ctx == 0) {
    throw InvalidArgument("model config has a zero extent");
  }
  if (d_model % n_head != 0) {
    throw InvalidArgument("d_model " + std::to_string(d_model) +
                          " is not divisible by n_head " + std::to_string(n_head));
  }
  if (d_ff == 0) throw InvalidArgument("model config has d_ff = 0");
}

ModelConfig ModelConfig::gpt2_small() {
  return {12, 12, 768, 3072, 50257, 1024, 1e-5f, "gpt2-small"};
}

ModelConfig ModelConfig::gpt2_large() {
  return {36, 20, 1280, 5120, 50257, 1024, 1e-5f, "gpt2-large"};
}

ProcessingMode parse_processing_mode(const std::string& name) {
  if (name == "raw") return ProcessingMode::kRaw;
  if (name == "processed") return ProcessingMode::kProcessed;
  throw InvalidArgument("processing mode must be 'raw' or 'processed', got '" + name + "'");
}

std::string to_string(ProcessingMode mode) {
  return mode == ProcessingMode::kRaw ? "raw" : "processed";
}

Model::Model(ModelConfig config, ModelWeights weights, ProcessingMode mode,
             std::shared_ptr<const Tokenizer> tokenizer)
    : config_(std::move(config)),
      weights_(std::move(weights)),
      mode_(mode),
      tokenizer_(std::move(tokenizer)) {
  config_.validate();
  if (weights_.layers.size() != config_.n_layer) {
    throw InvalidArgument("weights have " + std::to_string(weights_.layers.size()) +
                          " layers, config says " + std::to_string(config_.n_layer));
  }
  if (tokenizer_ && tokenizer_->vocab_size() != config_.vocab_size) {
    throw InvalidArgument("tokenizer vocabulary (" +
                          std::to_string(tokenizer_->vocab_size()) +
                          ") does not match model vocabulary (" +
                          std::to_string(config_.vocab_size) + ")");
  }
}

const Tokenizer& Model::tokenizer() const {
  if (!tokenizer_) throw InvalidArgument("model has no tokenizer attached");
  return *tokenizer_;
}

std::string HookPoint::to_string() const {
  switch (site) {
    case HookSite::kResidPre:
      return "resid_pre(" + std::to_string(layer) + ")";
    case HookSite::kHeadOutput:
      return "head_output(" + std::to_string(layer) + "," + std::to_string(head) + ")";
    case HookSite::kAttnSum:
      return "attn_sum(" + std::to_string(layer) + ")";
    case HookSite::kMlpOut:
      return "mlp_out(" + std::to_string(layer) + ")";
    case HookSite::kResidPost:
      return "resid_post(" + std::to_string(layer) + ")";
    case HookSite::kFinalLogits:
      return "final_logits";
  }
  return "unknown";
}

std::vector<HookPoint> all_heads(const ModelConfig& config, int layer) {
  std::vector<HookPoint> out;
  for (std::size_t h = 0; h < config.n_head; ++h) {
    out.push_back(HookPoint::head_output(layer, static_cast<int>(h)));
  }
  return out;
}

const Tensor& ActivationCache::get(const HookPoint& point) const {
  auto it = values_.find(point);
  if (it == values_.end()) {
    throw NotCapturedError(point.to_string() + " was not captured");
  }
  return it->second;
}

void ActivationCache::store(const HookPoint& point, Tensor value) {
  values_.insert_or_assign(point, std::move(value));
}

Tensor unembed(const Model& model, const Tensor& residual) {
  const auto& w = model.weights();
  Tensor h = layer_norm(residual, w.lnf_g, w.lnf_b, model.config().ln_eps);
  Tensor logits = matmul(h, w.wu);
  if (!w.bu.empty()) add_row_inplace(logits, w.bu.data());
  return logits;
}

ForwardResult forward(const Model& model, std::span<const TokenId> tokens,
                      const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  const ModelWeights& w = model.weights();
  const std::size_t n = tokens.size();
  if (n == 0) throw InvalidArgument("forward: empty token sequence");
  if (n > cfg.n_ctx) {
    throw InvalidArgument("forward: " + std::to_string(n) +
                          " tokens exceed the context length " + std::to_string(cfg.n_ctx));
  }
  for (const auto& iv : options.interventions) validate_point(cfg, iv.point);
  for (const auto& p : options.captures) validate_point(cfg, p);
  const std::size_t blocks = std::min(options.max_blocks.value_or(cfg.n_layer), cfg.n_layer);

  const std::size_t d = cfg.d_model;
  ForwardResult result;
  HookRunner hooks(options, result.cache);

  Tensor x({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw InvalidArgument("forward: token id " + std::to_string(t) + " out of range");
    }
    auto te = w.wte.row(static_cast<std::size_t>(t));
    auto pe = w.wpe.row(i);
    float* xi = x.raw() + i * d;
    for (std::size_t c = 0; c < d; ++c) xi[c] = te[c] + pe[c];
  }

  for (std::size_t l = 0; l < blocks; ++l) {
    const LayerWeights& lw = w.layers[l];
    const int li = static_cast<int>(l);
    hooks.apply(HookPoint::resid_pre(li), x);

    Tensor h = layer_norm(x, lw.ln1_g, lw.ln1_b, cfg.ln_eps);
    const Tensor q = linear(h, lw.wq, lw.bq);
    const Tensor k = linear(h, lw.wk, lw.bk);
    const Tensor v = linear(h, lw.wv, lw.bv);
    const Tensor z = attention_values(q, k, v, cfg.n_head);

    Tensor attn;
    if (hooks.any_head_hook(li)) {
      attn = Tensor({n, d});
      for (std::size_t j = 0; j < cfg.n_head; ++j) {
        Tensor hj = head_contribution(z, lw.wo, j, cfg.head_dim());
        hooks.apply(HookPoint::head_output(li, static_cast<int>(j)), hj);
        add_inplace(attn, hj);
      }
      add_row_inplace(attn, lw.bo.data());
    } else {
      attn = linear(z, lw.wo, lw.bo);
    }
    hooks.apply(HookPoint::attn_sum(li), attn);
    add_inplace(x, attn);

    Tensor h2 = layer_norm(x, lw.ln2_g, lw.ln2_b, cfg.ln_eps);
    Tensor mid = linear(h2, lw.wi, lw.bi);
    for (float& val : mid.data()) val = gelu(val);
    Tensor mlp = linear(mid, lw.wf, lw.bf);
    hooks.apply(HookPoint::mlp_out(li), mlp);
    add_inplace(x, mlp);
    hooks.apply(HookPoint::resid_post(li), x);
  }

  if (!options.max_blocks || *options.max_blocks >= cfg.n_layer) {
    result.logits = options.logits == LogitScope::kLast
                        ? unembed(model, Tensor({1, d}, std::vector<float>(
                                                            x.row(n - 1).begin(),
                                                            x.row(n - 1).end())))
                        : unembed(model, x);
    hooks.apply(HookPoint::final_logits(), result.logits);
  }
  result.residual = std::move(x);
  return result;
}

Tensor next_token_distribution(const Tensor& logits) {
  if (logits.empty()) throw InvalidArgument("next_token_distribution: empty logits");
  const std::size_t v = logits.shape().back();
  const std::size_t rows = logits.size() / v;
  auto last = logits.data().subspan((rows - 1) * v, v);
  Tensor dist({v}, std::vector<float>(last.begin(), last.end()));
  kernels::softmax_row(dist.data());
  return dist;
}

Tensor logit_lens(const Model& model, const Tensor& residual) {
  const std::size_t d = residual.shape().back();
  const std::size_t rows = residual.size() / d;
  auto last = residual.data().subspan((rows - 1) * d, d);
  Tensor row({1, d}, std::vector<float>(last.begin(), last.end()));
  return next_token_distribution(unembed(model, row));
}

const Tensor& head_output(const ActivationCache& cache, int layer, int head) {
  return cache.get(HookPoint::head_output(layer, head));
}

TokenSequence greedy_decode(const Model& model, std::span<const TokenId> tokens,
                            std::size_t n_new) {
  TokenSequence ctx(tokens.begin(), tokens.end());
  TokenSequence out;
  ForwardOptions opts;
  opts.logits = LogitScope::kLast;
  for (std::size_t s = 0; s < n_new && ctx.size() < model.config().n_ctx; ++s) {
    const Tensor logits = forward(model, ctx, opts).logits;
    const auto row = logits.data();
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    ctx.push_back(static_cast<TokenId>(best));
    out.push_back(static_cast<TokenId>(best));
  }
  return out;
}

}  // namespace reasonlens
