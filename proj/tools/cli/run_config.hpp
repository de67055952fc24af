#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace reasonlens::cli {

// A configuration problem. `field` is the dotted key at fault.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error("field '" + field + "': " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct KeyInfo {
  const char* key;
  const char* default_value;  // nullptr: unset unless given
  const char* help;
};

// Every key a config file or flag may set. Flags use the same dotted names.
const std::vector<KeyInfo>& known_keys();

// Flat string-valued settings keyed by dotted name. Nested JSON objects in a
// config file flatten to "outer.inner".
class RunConfig {
 public:
  RunConfig();

  // Merges a JSON config document. Unknown keys raise ConfigError.
  void merge_json_file(const std::filesystem::path& path);
  void merge_json_text(const std::string& text, const std::string& origin = "config");
  void set(const std::string& key, std::string value);

  bool has(const std::string& key) const;
  const std::string& str(const std::string& key) const;  // throws when unset
  std::optional<std::string> maybe(const std::string& key) const;
  long long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const;
  std::size_t workers() const;

  // Existing file or directory for `key`; throws ConfigError naming `key`.
  std::filesystem::path existing_path(const std::string& key) const;

  // Inclusive "A..B" (or a single value) ranges.
  std::vector<int> int_range(const std::string& key) const;
  std::vector<double> real_range(const std::string& key, const std::string& step_key) const;

  // Resolved settings as a flat JSON object (sorted keys).
  std::string to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace reasonlens::cli
