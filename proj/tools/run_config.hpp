#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cem::cli {

// Invalid configuration or arguments; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueType { kBool, kUint, kDouble, kString };

struct ConfigKey {
  std::string path;  // dotted, e.g. "attack.alpha"
  ValueType type;
  std::string default_value;
  std::string help;
};

const std::vector<ConfigKey>& config_schema();

// Flat dotted-key configuration. Values are kept in canonical text form so
// the manifest round-trips exactly.
class RunConfig {
 public:
  RunConfig();  // all defaults

  // Validates the key and the value's type; throws UsageError naming the path.
  void set(const std::string& path, const std::string& value);
  bool has_key(const std::string& path) const;

  bool get_bool(const std::string& path) const;
  std::uint64_t get_uint(const std::string& path) const;
  double get_double(const std::string& path) const;
  const std::string& get_string(const std::string& path) const;
  std::vector<double> get_doubles(const std::string& path) const;  // comma list
  std::vector<std::size_t> get_sizes(const std::string& path) const;

  // Nested YAML mapping; a top-level "manifest" section is ignored.
  void merge_yaml_file(const std::string& path);
  void merge_yaml_text(const std::string& text, const std::string& origin);

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

double parse_double(const std::string& path, const std::string& text);

// Resolved config as nested YAML plus a manifest section (command, version,
// seed). Feeding it back through --config reproduces the run.
std::string manifest_yaml(const RunConfig& config, const std::string& command);

std::string version_string();

}  // namespace cem::cli
