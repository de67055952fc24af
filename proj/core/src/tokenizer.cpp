#include "reasonlens/tokenizer.hpp"

#include <algorithm>
#include <climits>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "reasonlens/errors.hpp"

namespace reasonlens {
namespace {

struct CodepointRange {
  char32_t lo;
  char32_t hi;
};

#include "unicode_tables.inc"

enum class CharClass { kLetter, kNumber, kSpace, kOther };

template <std::size_t N>
bool in_ranges(const CodepointRange (&ranges)[N], char32_t cp) {
  auto it = std::upper_bound(std::begin(ranges), std::end(ranges), cp,
                             [](char32_t v, const CodepointRange& r) { return v < r.lo; });
  return it != std::begin(ranges) && cp <= std::prev(it)->hi;
}

CharClass classify(char32_t cp) {
  if (cp < 0x80) {
    if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return CharClass::kLetter;
    if (cp >= '0' && cp <= '9') return CharClass::kNumber;
  }
  if (in_ranges(kSpaceRanges, cp)) return CharClass::kSpace;
  if (in_ranges(kLetterRanges, cp)) return CharClass::kLetter;
  if (in_ranges(kNumberRanges, cp)) return CharClass::kNumber;
  return CharClass::kOther;
}

// Decodes one UTF-8 sequence at text[pos]. Invalid bytes decode as a single
// out-of-range codepoint so they still tokenize (as punctuation).
char32_t next_codepoint(std::string_view text, std::size_t pos, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(text[pos]);
  auto cont = [&](std::size_t i) {
    return pos + i < text.size() &&
           (static_cast<unsigned char>(text[pos + i]) & 0xC0) == 0x80;
  };
  auto byte = [&](std::size_t i) {
    return static_cast<char32_t>(static_cast<unsigned char>(text[pos + i]) & 0x3F);
  };
  if (b0 < 0x80) {
    len = 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    len = 2;
    return (static_cast<char32_t>(b0 & 0x1F) << 6) | byte(1);
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    len = 3;
    return (static_cast<char32_t>(b0 & 0x0F) << 12) | (byte(1) << 6) | byte(2);
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    len = 4;
    return (static_cast<char32_t>(b0 & 0x07) << 18) | (byte(1) << 12) |
           (byte(2) << 6) | byte(3);
  }
  len = 1;
  return 0x110000;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Splits a byte-encoded word into its UTF-8 characters.
std::vector<std::string> split_chars(const std::string& word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    std::size_t len = 1;
    next_codepoint(word, i, len);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

const std::vector<char32_t>& byte_to_codepoint_table() {
  static const std::vector<char32_t> table = [] {
    std::vector<char32_t> t(256, 0);
    std::vector<bool> direct(256, false);
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<char32_t>(b) : next++;
    return t;
  }();
  return table;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<char32_t> cps;
  std::vector<std::size_t> offsets;
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t len = 1;
    cps.push_back(next_codepoint(text, pos, len));
    offsets.push_back(pos);
    pos += len;
  }
  offsets.push_back(text.size());
  const std::size_t n = cps.size();

  std::vector<CharClass> cls(n);
  for (std::size_t i = 0; i < n; ++i) cls[i] = classify(cps[i]);

  std::vector<std::string_view> pieces;
  auto emit = [&](std::size_t a, std::size_t b) {
    pieces.push_back(text.substr(offsets[a], offsets[b] - offsets[a]));
  };

  std::size_t i = 0;
  while (i < n) {
    if (cps[i] == U'\'' && i + 1 < n) {
      const char32_t c1 = cps[i + 1];
      if (c1 == U's' || c1 == U't' || c1 == U'm' || c1 == U'd') {
        emit(i, i + 2);
        i += 2;
        continue;
      }
      if (i + 2 < n) {
        const char32_t c2 = cps[i + 2];
        if ((c1 == U'r' && c2 == U'e') || (c1 == U'v' && c2 == U'e') ||
            (c1 == U'l' && c2 == U'l')) {
          emit(i, i + 3);
          i += 3;
          continue;
        }
      }
    }

    const std::size_t j = cps[i] == U' ' ? i + 1 : i;
    if (j < n && cls[j] != CharClass::kSpace) {
      const CharClass run = cls[j];
      std::size_t k = j;
      while (k < n && cls[k] == run) ++k;
      emit(i, k);
      i = k;
      continue;
    }

    // Whitespace run. Unless it reaches the end of the text, the last
    // whitespace character is left to prefix the following piece.
    std::size_t k = i;
    while (k < n && cls[k] == CharClass::kSpace) ++k;
    const std::size_t end = (k < n && k - i >= 2) ? k - 1 : k;
    emit(i, end);
    i = end;
  }
  return pieces;
}

Tokenizer Tokenizer::load(const std::filesystem::path& dir) {
  const auto vocab_path = dir / "vocab.json";
  const auto merges_path = dir / "merges.txt";
  std::ifstream vf(vocab_path);
  if (!vf) throw LoadError("cannot open " + vocab_path.string());
  nlohmann::json vj;
  try {
    vf >> vj;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(vocab_path.string() + ": " + e.what());
  }
  std::unordered_map<std::string, TokenId> vocab;
  vocab.reserve(vj.size());
  for (auto it = vj.begin(); it != vj.end(); ++it) {
    vocab.emplace(it.key(), it->get<TokenId>());
  }

  std::ifstream mf(merges_path);
  if (!mf) throw LoadError("cannot open " + merges_path.string());
  std::vector<MergeRule> merges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(mf, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("#version", 0) == 0)) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
      throw LoadError(merges_path.string() + ":" + std::to_string(line_no) +
                      ": expected two space-separated symbols");
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return Tokenizer(std::move(vocab), std::move(merges));
}

Tokenizer::Tokenizer(std::unordered_map<std::string, TokenId> vocab,
                     std::vector<MergeRule> merges)
    : vocab_(std::move(vocab)) {
  const auto& table = byte_to_codepoint_table();
  for (int b = 0; b < 256; ++b) byte_decoder_[table[b]] = static_cast<unsigned char>(b);

  id_to_bytes_.assign(vocab_.size(), {});
  std::vector<bool> seen(vocab_.size(), false);
  for (const auto& [token, id] : vocab_) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size() || seen[id]) {
      throw LoadError("vocabulary ids must be dense and unique; bad id " +
                      std::to_string(id));
    }
    seen[id] = true;
    std::string bytes;
    for (std::size_t i = 0; i < token.size();) {
      std::size_t len = 1;
      const char32_t cp = next_codepoint(token, i, len);
      auto it = byte_decoder_.find(cp);
      if (it == byte_decoder_.end()) {
        throw LoadError("vocabulary token contains a non byte-level character");
      }
      bytes.push_back(static_cast<char>(it->second));
      i += len;
    }
    id_to_bytes_[id] = std::move(bytes);
  }

  merge_ranks_.reserve(merges.size());
  for (std::size_t r = 0; r < merges.size(); ++r) {
    merge_ranks_.emplace(merges[r].first + ' ' + merges[r].second, static_cast<int>(r));
  }
}

std::vector<std::string> Tokenizer::bpe(const std::string& word) const {
  std::vector<std::string> parts = split_chars(word);
  while (parts.size() > 1) {
    int best_rank = INT_MAX;
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      auto it = merge_ranks_.find(parts[i] + ' ' + parts[i + 1]);
      if (it != merge_ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == INT_MAX) break;
    // Merge every occurrence of the winning pair, left to right.
    const std::string left = parts[best];
    const std::string right = parts[best + 1];
    std::vector<std::string> merged;
    merged.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size();) {
      if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
        merged.push_back(left + right);
        i += 2;
      } else {
        merged.push_back(std::move(parts[i]));
        ++i;
      }
    }
    parts = std::move(merged);
  }
  return parts;
}

TokenSequence Tokenizer::encode(std::string_view text) const {
  const auto& table = byte_to_codepoint_table();
  TokenSequence ids;
  for (std::string_view piece : pretokenize(text)) {
    std::string mapped;
    mapped.reserve(piece.size() * 2);
    for (char c : piece) append_utf8(mapped, table[static_cast<unsigned char>(c)]);
    for (const std::string& sym : bpe(mapped)) {
      auto it = vocab_.find(sym);
      if (it == vocab_.end()) {
        // Unreachable with a complete byte-level vocabulary.
        throw LoadError("vocabulary has no entry for BPE symbol");
      }
      ids.push_back(it->second);
    }
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return out;
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_bytes_.size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(id_to_bytes_.size()));
  }
  return id_to_bytes_[id];
}

std::optional<TokenId> Tokenizer::find(std::string_view vocab_token) const {
  auto it = vocab_.find(std::string(vocab_token));
  if (it == vocab_.end()) return std::nullopt;
  return it->second;
}

Tensor one_hot_bag(std::span<const TokenId> ids, std::size_t vocab_size, bool binary) {
  if (ids.empty()) throw InvalidArgument("one_hot_bag: empty token list");
  Tensor bag({vocab_size});
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw InvalidArgument("one_hot_bag: token id " + std::to_string(id) +
                            " outside vocabulary");
    }
    bag[id] = binary ? 1.0f : bag[id] + 1.0f;
  }
  return bag;
}

}  // namespace reasonlens
