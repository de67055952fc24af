#pragma once

#include <optional>
#include <span>
#include <string>

#include "reasonlens/model.hpp"

namespace reasonlens {

enum class EncodingStyle { kUnembed, kEmbed, kLayerWise };

EncodingStyle parse_encoding_style(const std::string& name);
std::string to_string(EncodingStyle style);

// How a q x d layer-wise representation collapses to one d-vector.
enum class Pooling { kLast, kMean };

struct EncodeOptions {
  bool binary_bag = false;  // clamp token multiplicities to {0, 1}
  Pooling pooling = Pooling::kLast;
};

struct EncodedMemory {
  Tensor vector;  // B*, length d
  std::string memory;
  EncodingStyle style = EncodingStyle::kUnembed;
  std::string model_id;
  std::optional<int> layer;  // layer-wise only
};

// Memories are tokenized exactly as given; callers add any leading space.
// All three throw InvalidArgument when the memory tokenizes to nothing.
EncodedMemory encode_unembed(const Model& model, const std::string& memory,
                             const EncodeOptions& options = {});
EncodedMemory encode_embed(const Model& model, const std::string& memory,
                           const EncodeOptions& options = {});
// Runs the memory through the first `layer` blocks (0 = embeddings only).
EncodedMemory encode_layerwise(const Model& model, const std::string& memory, int layer,
                               const EncodeOptions& options = {});
EncodedMemory encode_memory(const Model& model, const std::string& memory,
                            EncodingStyle style, int layer,
                            const EncodeOptions& options = {});

// Token-level forms of the encodings.
Tensor unembed_bag(const Model& model, std::span<const TokenId> ids, bool binary = false);
Tensor embed_bag(const Model& model, std::span<const TokenId> ids, bool binary = false);
Tensor layerwise_vector(const Model& model, std::span<const TokenId> ids, int layer,
                        Pooling pooling = Pooling::kLast);

enum class Broadcast { kAll, kLast };

Broadcast parse_broadcast(const std::string& name);
std::string to_string(Broadcast broadcast);

struct InjectionSpec {
  int layer = 0;
  float tau = 0.0f;
  Tensor memory;  // B*, length d
  Broadcast broadcast = Broadcast::kAll;
  std::optional<int> head;  // inject into one head's output instead of a^l
};

// The hook that adds tau * B* at the site named by `spec`. Throws InvalidArgument for
// an invalid layer/head, negative tau or a memory of the wrong width.
Intervention injection_hook(const Model& model, const InjectionSpec& spec);

// Forward pass with the injection appended to `options.interventions`.
ForwardResult inject(const Model& model, std::span<const TokenId> tokens,
                     const InjectionSpec& spec, ForwardOptions options = {});

}  // namespace reasonlens
