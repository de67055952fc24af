#include "reasonlens/interventions.hpp"

#include "reasonlens/errors.hpp"

namespace reasonlens {
namespace {

TokenSequence memory_tokens(const Model& model, const std::string& memory) {
  TokenSequence ids = model.tokenizer().encode(memory);
  if (ids.empty()) throw InvalidArgument("memory '" + memory + "' encodes to no tokens");
  return ids;
}

EncodedMemory wrap(Tensor v, const Model& model, const std::string& memory,
                   EncodingStyle style, std::optional<int> layer) {
  return EncodedMemory{std::move(v), memory, style, model.config().model_id, layer};
}

}  // namespace

EncodingStyle parse_encoding_style(const std::string& name) {
  if (name == "unembed") return EncodingStyle::kUnembed;
  if (name == "embed") return EncodingStyle::kEmbed;
  if (name == "layerwise" || name == "layer-wise") return EncodingStyle::kLayerWise;
  throw InvalidArgument("encoding style must be unembed, embed or layerwise, got '" + name +
                        "'");
}

std::string to_string(EncodingStyle style) {
  switch (style) {
    case EncodingStyle::kUnembed:
      return "unembed";
    case EncodingStyle::kEmbed:
      return "embed";
    case EncodingStyle::kLayerWise:
      return "layerwise";
  }
  return "unknown";
}

Broadcast parse_broadcast(const std::string& name) {
  if (name == "all") return Broadcast::kAll;
  if (name == "last") return Broadcast::kLast;
  throw InvalidArgument("broadcast must be 'all' or 'last', got '" + name + "'");
}

std::string to_string(Broadcast broadcast) {
  return broadcast == Broadcast::kAll ? "all" : "last";
}

Tensor unembed_bag(const Model& model, std::span<const TokenId> ids, bool binary) {
  const Tensor bag = one_hot_bag(ids, model.config().vocab_size, binary);
  const Tensor& wu = model.weights().wu;  // d x |V|
  const std::size_t d = wu.rows(), v = wu.cols();
  Tensor out({d});
  // B W_U^T: only the nonzero entries of B contribute.
  for (std::size_t t = 0; t < v; ++t) {
    const float b = bag[t];
    if (b == 0.0f) continue;
    for (std::size_t i = 0; i < d; ++i) out[i] += b * wu[i * v + t];
  }
  return out;
}

Tensor embed_bag(const Model& model, std::span<const TokenId> ids, bool binary) {
  const Tensor bag = one_hot_bag(ids, model.config().vocab_size, binary);
  const Tensor& wte = model.weights().wte;
  Tensor out({wte.cols()});
  for (std::size_t t = 0; t < wte.rows(); ++t) {
    const float b = bag[t];
    if (b == 0.0f) continue;
    auto row = wte.row(t);
    for (std::size_t i = 0; i < row.size(); ++i) out[i] += b * row[i];
  }
  return out;
}

Tensor layerwise_vector(const Model& model, std::span<const TokenId> ids, int layer,
                        Pooling pooling) {
  if (layer < 0 || static_cast<std::size_t>(layer) >= model.config().n_layer) {
    throw InvalidArgument("layer-wise encoding layer " + std::to_string(layer) +
                          " outside [0, " + std::to_string(model.config().n_layer) + ")");
  }
  if (ids.empty()) throw InvalidArgument("layer-wise encoding of an empty memory");
  ForwardOptions opts;
  opts.max_blocks = static_cast<std::size_t>(layer);
  const Tensor r = forward(model, ids, opts).residual;
  const std::size_t d = r.cols();
  if (pooling == Pooling::kLast) return r.row_copy(r.rows() - 1);
  Tensor out({d});
  for (std::size_t i = 0; i < r.rows(); ++i) {
    auto row = r.row(i);
    for (std::size_t c = 0; c < d; ++c) out[c] += row[c];
  }
  return scale(out, 1.0f / static_cast<float>(r.rows()));
}

EncodedMemory encode_unembed(const Model& model, const std::string& memory,
                             const EncodeOptions& options) {
  return wrap(unembed_bag(model, memory_tokens(model, memory), options.binary_bag), model,
              memory, EncodingStyle::kUnembed, std::nullopt);
}

EncodedMemory encode_embed(const Model& model, const std::string& memory,
                           const EncodeOptions& options) {
  return wrap(embed_bag(model, memory_tokens(model, memory), options.binary_bag), model,
              memory, EncodingStyle::kEmbed, std::nullopt);
}

EncodedMemory encode_layerwise(const Model& model, const std::string& memory, int layer,
                               const EncodeOptions& options) {
  return wrap(layerwise_vector(model, memory_tokens(model, memory), layer, options.pooling),
              model, memory, EncodingStyle::kLayerWise, layer);
}

EncodedMemory encode_memory(const Model& model, const std::string& memory,
                            EncodingStyle style, int layer, const EncodeOptions& options) {
  switch (style) {
    case EncodingStyle::kUnembed:
      return encode_unembed(model, memory, options);
    case EncodingStyle::kEmbed:
      return encode_embed(model, memory, options);
    case EncodingStyle::kLayerWise:
      return encode_layerwise(model, memory, layer, options);
  }
  throw InvalidArgument("unknown encoding style");
}

Intervention injection_hook(const Model& model, const InjectionSpec& spec) {
  const ModelConfig& cfg = model.config();
  if (spec.layer < 0 || static_cast<std::size_t>(spec.layer) >= cfg.n_layer) {
    throw InvalidArgument("injection layer " + std::to_string(spec.layer) + " outside [0, " +
                          std::to_string(cfg.n_layer) + ")");
  }
  if (!(spec.tau >= 0.0f)) throw InvalidArgument("injection magnitude tau must be >= 0");
  if (spec.memory.size() != cfg.d_model) {
    throw InvalidArgument("encoded memory has width " + std::to_string(spec.memory.size()) +
                          ", model expects " + std::to_string(cfg.d_model));
  }
  if (spec.head && (*spec.head < 0 || static_cast<std::size_t>(*spec.head) >= cfg.n_head)) {
    throw InvalidArgument("injection head " + std::to_string(*spec.head) + " outside [0, " +
                          std::to_string(cfg.n_head) + ")");
  }
  const HookPoint point = spec.head ? HookPoint::head_output(spec.layer, *spec.head)
                                    : HookPoint::attn_sum(spec.layer);
  Tensor delta = scale(spec.memory, spec.tau);
  const Broadcast broadcast = spec.broadcast;
  return Intervention{point, [delta = std::move(delta), broadcast](const Tensor& a) {
                        Tensor out = a;
                        const std::size_t n = out.rows();
                        const std::size_t first = broadcast == Broadcast::kAll ? 0 : n - 1;
                        for (std::size_t i = first; i < n; ++i) {
                          auto row = out.row(i);
                          for (std::size_t c = 0; c < row.size(); ++c) row[c] += delta[c];
                        }
                        return out;
                      }};
}

ForwardResult inject(const Model& model, std::span<const TokenId> tokens,
                     const InjectionSpec& spec, ForwardOptions options) {
  options.interventions.push_back(injection_hook(model, spec));
  return forward(model, tokens, options);
}

}  // namespace reasonlens
