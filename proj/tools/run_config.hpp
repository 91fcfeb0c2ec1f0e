#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace mdl::cli {

/// One configurable field: its default fixes the JSON type.
struct Field {
  std::string key;
  nlohmann::json default_value;
  std::string help;
};

/// Defaults, then the --config file, then per-field flags, in that order.
class RunConfig {
 public:
  RunConfig(CLI::App* sub, std::vector<Field> fields);

  /// Merges the layers. Throws std::invalid_argument for unknown keys or
  /// values that do not parse as the field's type.
  void resolve();

  const nlohmann::json& values() const { return resolved_; }
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::string text(const std::string& key) const;

  /// Writes the resolved config as <dir>/config.json.
  void echo(const std::filesystem::path& dir) const;

 private:
  std::vector<Field> fields_;
  std::string config_path_;
  std::map<std::string, std::string> overrides_;
  nlohmann::json resolved_;
};

}  // namespace mdl::cli
