#include "run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "reasonlens/parallel.hpp"

namespace reasonlens::cli {

namespace {

using nlohmann::json;

const std::vector<KeyInfo> kKeys = {
    {"model", nullptr, "weight archive path, or a name resolved under $REASONLENS_CACHE"},
    {"tokenizer", nullptr, "directory holding vocab.json and merges.txt"},
    {"processing", "processed", "raw or processed weights"},
    {"dataset", nullptr, "prompt-pair JSON lines (triples for gen-2wmh)"},
    {"out", nullptr, "output file (directory for train-lens)"},
    {"seed", "0", "random seed recorded in every artifact"},
    {"workers", nullptr, "worker threads (default: logical processors)"},
    {"style", "unembed", "memory encoding: unembed, embed or layerwise"},
    {"broadcast", "all", "inject into all positions or the last only"},
    {"memory", nullptr, "inject: memory text; sweeps: curated, fixed:<word> or random"},
    {"pos", nullptr, "part of speech (comma list for random-sweep)"},
    {"lexicon", nullptr, "directory with the part-of-speech word lists"},
    {"layer-range", nullptr, "inclusive layer range A..B"},
    {"tau-range", nullptr, "inclusive tau range A..B"},
    {"tau-step", "1", "step for tau-range"},
    {"layer", nullptr, "layer index"},
    {"tau", nullptr, "injection scale"},
    {"head", nullptr, "attention head index"},
    {"prompt", nullptr, "prompt text"},
    {"answer", nullptr, "answer text"},
    {"k", "10", "top-k tokens to print"},
    {"prepend-bos", "false", "prefix prompts with <|endoftext|>"},
    {"answer-leading-space", "true", "score the answer with a leading space"},
    {"memory-leading-space", "true", "encode memories with a leading space"},
    {"binary-bag", "false", "clamp memory token counts to 0/1"},
    {"pooling", "last", "layerwise pooling: last or mean"},
    {"words-per-pos", "40", "random-sweep words per part of speech"},
    {"n-ctx", nullptr, "memory length in tokens for flops"},
    {"model-config", nullptr, "flops preset instead of a model: gpt2-small or gpt2-large"},
    {"lens.path", nullptr, "trained lens archive for inspect-head"},
    {"lens.heads", nullptr, "heads to train, e.g. 9.8,9.1 or 9 for a whole layer"},
    {"lens.corpus", nullptr, "plain-text training corpus, one record per line"},
    {"lens.steps", "200", "SGD steps"},
    {"lens.lr", "0.001", "learning rate"},
    {"lens.batch", "8", "batch size"},
    {"lens.kl", "lens||model", "KL direction: lens||model or model||lens"},
    {"lens.max-tokens", "32", "tokens kept per corpus record"},
};

const KeyInfo* find_key(const std::string& key) {
  for (const auto& k : kKeys) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const json& v = it.value();
    if (v.is_object()) {
      flatten(v, key, out);
    } else if (v.is_string()) {
      out.emplace_back(key, v.get<std::string>());
    } else if (v.is_null()) {
      continue;
    } else if (v.is_array()) {
      std::string joined;
      for (const auto& e : v) {
        if (!joined.empty()) joined += ",";
        joined += e.is_string() ? e.get<std::string>() : e.dump();
      }
      out.emplace_back(key, joined);
    } else {
      out.emplace_back(key, v.dump());
    }
  }
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "not a number: '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "not a number: '" + text + "'");
  }
  if (used != text.size() || !std::isfinite(v)) throw ConfigError(key, "not a finite number: '" + text + "'");
  return v;
}

std::pair<std::string, std::string> split_range(const std::string& key, const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) return {text, text};
  const std::string a = text.substr(0, dots), b = text.substr(dots + 2);
  if (a.empty() || b.empty()) throw ConfigError(key, "expected A..B, got '" + text + "'");
  return {a, b};
}

}  // namespace

const std::vector<KeyInfo>& known_keys() { return kKeys; }

RunConfig::RunConfig() {
  for (const auto& k : kKeys) {
    if (k.default_value) values_[k.key] = k.default_value;
  }
  values_["workers"] = std::to_string(default_workers());
}

void RunConfig::merge_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_json_text(ss.str(), path.string());
}

void RunConfig::merge_json_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config", origin + ": top level must be an object");
  std::vector<std::pair<std::string, std::string>> flat;
  flatten(j, "", flat);
  for (auto& [k, v] : flat) set(k, std::move(v));
}

void RunConfig::set(const std::string& key, std::string value) {
  if (!find_key(key)) throw ConfigError(key, "unknown setting");
  values_[key] = std::move(value);
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "required but not set");
  return it->second;
}

std::optional<std::string> RunConfig::maybe(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

long long RunConfig::integer(const std::string& key) const { return parse_number<long long>(key, str(key)); }

double RunConfig::real(const std::string& key) const { return parse_real(key, str(key)); }

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::uint64_t RunConfig::seed() const {
  const std::string& v = str("seed");
  if (!v.empty() && v[0] == '-') throw ConfigError("seed", "must be non-negative");
  return parse_number<std::uint64_t>("seed", v);
}

std::size_t RunConfig::workers() const {
  const long long w = integer("workers");
  if (w < 1) throw ConfigError("workers", "must be at least 1");
  return static_cast<std::size_t>(w);
}

std::filesystem::path RunConfig::existing_path(const std::string& key) const {
  std::filesystem::path p = str(key);
  if (!std::filesystem::exists(p)) throw ConfigError(key, "no such file or directory: " + p.string());
  return p;
}

std::vector<int> RunConfig::int_range(const std::string& key) const {
  const auto [a, b] = split_range(key, str(key));
  const int lo = parse_number<int>(key, a), hi = parse_number<int>(key, b);
  if (lo > hi) throw ConfigError(key, "empty range " + a + ".." + b);
  std::vector<int> out;
  for (int i = lo; i <= hi; ++i) out.push_back(i);
  return out;
}

std::vector<double> RunConfig::real_range(const std::string& key, const std::string& step_key) const {
  const auto [a, b] = split_range(key, str(key));
  const double lo = parse_real(key, a), hi = parse_real(key, b);
  if (lo > hi) throw ConfigError(key, "empty range " + a + ".." + b);
  const double step = real(step_key);
  if (step <= 0) throw ConfigError(step_key, "must be positive");
  // Index-based so 0..10 step 0.1 does not drift past the end point.
  std::vector<double> out;
  const auto n = static_cast<long long>(std::floor((hi - lo) / step + 1e-9));
  for (long long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

std::string RunConfig::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j.dump();
}

}  // namespace reasonlens::cli
