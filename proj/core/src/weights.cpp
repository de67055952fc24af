#include <random>

#include "reasonlens/errors.hpp"
#include "reasonlens/model.hpp"

namespace reasonlens {
namespace {

std::string layer_name(std::size_t i, const std::string& suffix) {
  return "h." + std::to_string(i) + "." + suffix;
}

const Tensor& expect(const TensorArchive& ar, const std::string& name,
                     const Tensor::Shape& shape) {
  const Tensor& t = ar.get(name);
  if (t.shape() != shape) {
    Tensor probe(shape);
    throw LoadError("tensor '" + name + "' has shape " + t.shape_string() +
                    ", expected " + probe.shape_string());
  }
  return t;
}

struct Linear {
  Tensor* w;
  Tensor* b;
};

// Folds a layer norm's affine parameters into the linear maps that read its
// output, then centers those maps over their input dimension (the normalized
// input has zero mean, so a per-column constant contributes nothing).
void fold_layer_norm(Tensor& gain, Tensor& bias, std::initializer_list<Linear> maps) {
  for (const Linear& m : maps) {
    Tensor& w = *m.w;
    const std::size_t rows = w.rows(), cols = w.cols();
    Tensor& b = *m.b;
    if (b.empty()) b = Tensor({cols});
    for (std::size_t i = 0; i < rows; ++i) {
      const float beta = bias[i];
      const float g = gain[i];
      float* wr = w.raw() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        b[c] += beta * wr[c];
        wr[c] *= g;
      }
    }
    std::vector<double> mean(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t c = 0; c < cols; ++c) mean[c] += w.at(i, c);
    }
    for (std::size_t i = 0; i < rows; ++i) {
      float* wr = w.raw() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        wr[c] -= static_cast<float>(mean[c] / static_cast<double>(rows));
      }
    }
  }
  gain = Tensor();
  bias = Tensor();
}

// Subtracts each row's mean over the last axis.
void center_rows(Tensor& t) {
  const std::size_t n = t.shape().back();
  for (std::size_t r = 0; r < t.size() / n; ++r) {
    float* row = t.raw() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    const float m = static_cast<float>(mean / static_cast<double>(n));
    for (std::size_t c = 0; c < n; ++c) row[c] -= m;
  }
}

void fill_normal(Tensor& t, std::mt19937_64& rng, float mean, float stddev) {
  std::normal_distribution<float> dist(mean, stddev);
  for (float& v : t.data()) v = dist(rng);
}

}  // namespace

Model load_model(const std::filesystem::path& archive_path,
                 const std::filesystem::path& tokenizer_dir, ProcessingMode mode) {
  const TensorArchive archive = TensorArchive::read(archive_path);
  auto tokenizer = std::make_shared<const Tokenizer>(Tokenizer::load(tokenizer_dir));
  return load_model(archive, std::move(tokenizer), mode);
}

Model load_model(const TensorArchive& ar, std::shared_ptr<const Tokenizer> tokenizer,
                 ProcessingMode mode) {
  const auto& meta = ar.metadata();
  if (auto it = meta.find("architecture"); it != meta.end() && it->second != "gpt2") {
    throw LoadError("unsupported architecture '" + it->second +
                    "' (only gpt2 attention is implemented)");
  }

  const Tensor& wte = ar.get("wte");
  if (wte.rank() != 2) throw LoadError("tensor 'wte' must be rank 2, got " + wte.shape_string());
  ModelConfig cfg;
  cfg.vocab_size = wte.rows();
  cfg.d_model = wte.cols();
  const Tensor& wpe = ar.get("wpe");
  if (wpe.rank() != 2 || wpe.cols() != cfg.d_model) {
    throw LoadError("tensor 'wpe' has shape " + wpe.shape_string() + ", expected [n_ctx x " +
                    std::to_string(cfg.d_model) + "]");
  }
  cfg.n_ctx = wpe.rows();
  while (ar.contains(layer_name(cfg.n_layer, "ln_1.g"))) ++cfg.n_layer;
  if (cfg.n_layer == 0) throw LoadError("missing tensor 'h.0.ln_1.g'");
  const Tensor& wi0 = ar.get(layer_name(0, "mlp.wi.w"));
  if (wi0.rank() != 2) throw LoadError("tensor 'h.0.mlp.wi.w' must be rank 2");
  cfg.d_ff = wi0.cols();
  if (auto it = meta.find("n_head"); it != meta.end()) {
    try {
      cfg.n_head = std::stoul(it->second);
    } catch (const std::exception&) {
      throw LoadError("archive metadata n_head is not an integer: '" + it->second + "'");
    }
  } else {
    cfg.n_head = cfg.d_model / 64;
  }
  if (auto it = meta.find("model_id"); it != meta.end()) cfg.model_id = it->second;
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw LoadError(e.what());
  }

  const std::size_t d = cfg.d_model, f = cfg.d_ff;
  ModelWeights w;
  w.wte = wte;
  w.wpe = wpe;
  w.layers.resize(cfg.n_layer);
  for (std::size_t i = 0; i < cfg.n_layer; ++i) {
    LayerWeights& lw = w.layers[i];
    lw.ln1_g = expect(ar, layer_name(i, "ln_1.g"), {d});
    lw.ln1_b = expect(ar, layer_name(i, "ln_1.b"), {d});
    lw.wq = expect(ar, layer_name(i, "attn.wq.w"), {d, d});
    lw.bq = expect(ar, layer_name(i, "attn.wq.b"), {d});
    lw.wk = expect(ar, layer_name(i, "attn.wk.w"), {d, d});
    lw.bk = expect(ar, layer_name(i, "attn.wk.b"), {d});
    lw.wv = expect(ar, layer_name(i, "attn.wv.w"), {d, d});
    lw.bv = expect(ar, layer_name(i, "attn.wv.b"), {d});
    lw.wo = expect(ar, layer_name(i, "attn.wo.w"), {d, d});
    lw.bo = expect(ar, layer_name(i, "attn.wo.b"), {d});
    lw.ln2_g = expect(ar, layer_name(i, "ln_2.g"), {d});
    lw.ln2_b = expect(ar, layer_name(i, "ln_2.b"), {d});
    lw.wi = expect(ar, layer_name(i, "mlp.wi.w"), {d, f});
    lw.bi = expect(ar, layer_name(i, "mlp.wi.b"), {f});
    lw.wf = expect(ar, layer_name(i, "mlp.wf.w"), {f, d});
    lw.bf = expect(ar, layer_name(i, "mlp.wf.b"), {d});
  }
  w.lnf_g = expect(ar, "ln_f.g", {d});
  w.lnf_b = expect(ar, "ln_f.b", {d});
  w.wu = expect(ar, "wu", {d, cfg.vocab_size});

  if (mode == ProcessingMode::kProcessed) process_weights(w);
  return Model(std::move(cfg), std::move(w), mode, std::move(tokenizer));
}

void process_weights(ModelWeights& w) {
  if (w.lnf_g.empty()) throw InvalidArgument("weights are already processed");
  for (LayerWeights& lw : w.layers) {
    fold_layer_norm(lw.ln1_g, lw.ln1_b, {{&lw.wq, &lw.bq}, {&lw.wk, &lw.bk}, {&lw.wv, &lw.bv}});
    fold_layer_norm(lw.ln2_g, lw.ln2_b, {{&lw.wi, &lw.bi}});
  }
  fold_layer_norm(w.lnf_g, w.lnf_b, {{&w.wu, &w.bu}});

  // Writing weights: everything added to the residual stream loses its mean
  // over the hidden axis, which every downstream layer norm discards anyway.
  center_rows(w.wte);
  center_rows(w.wpe);
  for (LayerWeights& lw : w.layers) {
    center_rows(lw.wo);
    center_rows(lw.bo);
    center_rows(lw.wf);
    center_rows(lw.bf);
  }

  // Value biases: attention rows sum to one, so b_V W_O is a constant added
  // at every position and belongs in the output bias.
  for (LayerWeights& lw : w.layers) {
    const std::size_t d = lw.wo.cols();
    for (std::size_t i = 0; i < lw.wo.rows(); ++i) {
      const float bv = lw.bv[i];
      for (std::size_t c = 0; c < d; ++c) lw.bo[c] += bv * lw.wo.at(i, c);
    }
    lw.bv = Tensor({lw.bv.size()});
  }

  // Unembedding: a per-position constant shift of the logits is invisible to
  // the softmax.
  center_rows(w.wu);
  center_rows(w.bu);
}

TensorArchive to_archive(const Model& model) {
  if (model.mode() != ProcessingMode::kRaw) {
    throw InvalidArgument("only raw models can be written as canonical archives");
  }
  const ModelWeights& w = model.weights();
  TensorArchive ar;
  ar.put("wte", w.wte);
  ar.put("wpe", w.wpe);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const LayerWeights& lw = w.layers[i];
    ar.put(layer_name(i, "ln_1.g"), lw.ln1_g);
    ar.put(layer_name(i, "ln_1.b"), lw.ln1_b);
    ar.put(layer_name(i, "attn.wq.w"), lw.wq);
    ar.put(layer_name(i, "attn.wq.b"), lw.bq);
    ar.put(layer_name(i, "attn.wk.w"), lw.wk);
    ar.put(layer_name(i, "attn.wk.b"), lw.bk);
    ar.put(layer_name(i, "attn.wv.w"), lw.wv);
    ar.put(layer_name(i, "attn.wv.b"), lw.bv);
    ar.put(layer_name(i, "attn.wo.w"), lw.wo);
    ar.put(layer_name(i, "attn.wo.b"), lw.bo);
    ar.put(layer_name(i, "ln_2.g"), lw.ln2_g);
    ar.put(layer_name(i, "ln_2.b"), lw.ln2_b);
    ar.put(layer_name(i, "mlp.wi.w"), lw.wi);
    ar.put(layer_name(i, "mlp.wi.b"), lw.bi);
    ar.put(layer_name(i, "mlp.wf.w"), lw.wf);
    ar.put(layer_name(i, "mlp.wf.b"), lw.bf);
  }
  ar.put("ln_f.g", w.lnf_g);
  ar.put("ln_f.b", w.lnf_b);
  ar.put("wu", w.wu);
  ar.metadata()["architecture"] = "gpt2";
  ar.metadata()["n_head"] = std::to_string(model.config().n_head);
  ar.metadata()["model_id"] = model.config().model_id;
  return ar;
}

ModelWeights random_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.d_model, f = cfg.d_ff;
  ModelWeights w;
  w.wte = Tensor({cfg.vocab_size, d});
  fill_normal(w.wte, rng, 0.0f, 0.02f);
  w.wpe = Tensor({cfg.n_ctx, d});
  fill_normal(w.wpe, rng, 0.0f, 0.01f);
  w.layers.resize(cfg.n_layer);
  for (LayerWeights& lw : w.layers) {
    auto mat = [&](std::size_t r, std::size_t c) {
      Tensor t({r, c});
      fill_normal(t, rng, 0.0f, 0.02f);
      return t;
    };
    auto vec = [&](std::size_t n, float mean, float sd) {
      Tensor t({n});
      fill_normal(t, rng, mean, sd);
      return t;
    };
    lw.ln1_g = vec(d, 1.0f, 0.05f);
    lw.ln1_b = vec(d, 0.0f, 0.02f);
    lw.wq = mat(d, d);
    lw.bq = vec(d, 0.0f, 0.02f);
    lw.wk = mat(d, d);
    lw.bk = vec(d, 0.0f, 0.02f);
    lw.wv = mat(d, d);
    lw.bv = vec(d, 0.0f, 0.02f);
    lw.wo = mat(d, d);
    lw.bo = vec(d, 0.0f, 0.02f);
    lw.ln2_g = vec(d, 1.0f, 0.05f);
    lw.ln2_b = vec(d, 0.0f, 0.02f);
    lw.wi = mat(d, f);
    lw.bi = vec(f, 0.0f, 0.02f);
    lw.wf = mat(f, d);
    lw.bf = vec(d, 0.0f, 0.02f);
  }
  w.lnf_g = Tensor({d});
  fill_normal(w.lnf_g, rng, 1.0f, 0.05f);
  w.lnf_b = Tensor({d});
  fill_normal(w.lnf_b, rng, 0.0f, 0.02f);
  w.wu = transpose(w.wte);
  return w;
}

}  // namespace reasonlens
