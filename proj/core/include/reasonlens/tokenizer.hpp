#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "reasonlens/tensor.hpp"

namespace reasonlens {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Byte-level BPE tokenizer compatible with the published GPT-2 vocab.json /
// merges.txt pair. Immutable after construction; encode/decode are safe to
// call concurrently.
class Tokenizer {
 public:
  using MergeRule = std::pair<std::string, std::string>;

  // Reads <dir>/vocab.json and <dir>/merges.txt.
  static Tokenizer load(const std::filesystem::path& dir);

  // `vocab` maps byte-encoded token strings to ids, which must be dense in
  // [0, vocab.size()). `merges` is in priority order (first = applied first).
  Tokenizer(std::unordered_map<std::string, TokenId> vocab,
            std::vector<MergeRule> merges);

  TokenSequence encode(std::string_view text) const;

  // Throws InvalidArgument for ids outside [0, vocab_size()).
  std::string decode(std::span<const TokenId> ids) const;

  // Raw bytes of one token; may be an incomplete UTF-8 sequence.
  const std::string& token_bytes(TokenId id) const;

  std::size_t vocab_size() const { return id_to_bytes_.size(); }
  std::size_t merge_count() const { return merge_ranks_.size(); }

  // Looks up a token by its byte-encoded vocabulary spelling (e.g. "ĠAustralia").
  std::optional<TokenId> find(std::string_view vocab_token) const;

 private:
  std::vector<std::string> bpe(const std::string& word) const;

  std::unordered_map<std::string, TokenId> vocab_;
  std::unordered_map<std::string, int> merge_ranks_;  // key: left + ' ' + right
  std::vector<std::string> id_to_bytes_;
  std::unordered_map<char32_t, unsigned char> byte_decoder_;
};

// Splits text into the pieces GPT-2 BPE merges within (the reference
// contraction / letter / number / punctuation / whitespace pattern).
std::vector<std::string_view> pretokenize(std::string_view text);

// The 256-entry byte -> printable-codepoint table of GPT-2 BPE.
const std::vector<char32_t>& byte_to_codepoint_table();

// B[v] = multiplicity of v in ids (or 1 when `binary`). Throws InvalidArgument
// for an empty id list or ids >= vocab_size.
Tensor one_hot_bag(std::span<const TokenId> ids, std::size_t vocab_size,
                   bool binary = false);

}  // namespace reasonlens
