#include "run_config.hpp"

#include <fstream>
#include <stdexcept>

#include "mdl/volume.hpp"

namespace mdl::cli {

namespace {

nlohmann::json parse_as(const nlohmann::json& like, const std::string& key, const std::string& text) {
  try {
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw std::invalid_argument("expected true or false");
    }
    std::size_t used = 0;
    if (like.is_number_unsigned() || like.is_number_integer()) {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument("expected a non-negative integer");
      const unsigned long long v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    if (like.is_number_float()) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    }
    return text;
  } catch (const std::logic_error& e) {
    throw std::invalid_argument("--" + key + ": cannot parse '" + text + "' (" + e.what() + ")");
  }
}

bool same_kind(const nlohmann::json& like, const nlohmann::json& v) {
  if (like.is_boolean()) return v.is_boolean();
  if (like.is_number_unsigned() || like.is_number_integer()) return v.is_number_unsigned();
  if (like.is_number_float()) return v.is_number();
  return v.is_string();
}

}  // namespace

RunConfig::RunConfig(CLI::App* sub, std::vector<Field> fields) : fields_(std::move(fields)) {
  sub->add_option("--config", config_path_, "JSON file with field values");
  for (const auto& f : fields_) {
    sub->add_option_function<std::string>(
        "--" + f.key, [this, key = f.key](const std::string& v) { overrides_[key] = v; },
        f.help + " (default " + f.default_value.dump() + ")");
  }
}

void RunConfig::resolve() {
  resolved_ = nlohmann::json::object();
  for (const auto& f : fields_) resolved_[f.key] = f.default_value;
  auto known = [&](const std::string& key) -> const Field& {
    for (const auto& f : fields_)
      if (f.key == key) return f;
    throw std::invalid_argument("unknown config key '" + key + "'");
  };
  if (!config_path_.empty()) {
    std::ifstream in(config_path_);
    if (!in) throw DataError("cannot open config file " + config_path_);
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config file " + config_path_ + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw std::invalid_argument("config file " + config_path_ + " must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      const Field& f = known(key);
      if (!same_kind(f.default_value, value)) {
        throw std::invalid_argument("config key '" + key + "' expects a value like " + f.default_value.dump());
      }
      resolved_[key] = f.default_value.is_number_float() ? nlohmann::json(value.get<double>()) : value;
    }
  }
  for (const auto& [key, text] : overrides_) resolved_[key] = parse_as(known(key).default_value, key, text);
}

double RunConfig::number(const std::string& key) const { return resolved_.at(key).get<double>(); }
std::size_t RunConfig::count(const std::string& key) const { return resolved_.at(key).get<std::size_t>(); }
std::uint64_t RunConfig::u64(const std::string& key) const { return resolved_.at(key).get<std::uint64_t>(); }
bool RunConfig::flag(const std::string& key) const { return resolved_.at(key).get<bool>(); }
std::string RunConfig::text(const std::string& key) const { return resolved_.at(key).get<std::string>(); }

void RunConfig::echo(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "config.json").string());
  out << resolved_.dump(2) << '\n';
}

}  // namespace mdl::cli
