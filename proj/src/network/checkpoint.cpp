#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <json.hpp>

#include "mdl/network.hpp"

namespace mdl {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'L', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string where) : bytes_(std::move(bytes)), where_(std::move(where)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(where_ + ": truncated checkpoint");
  }
  std::vector<char> bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string config_to_json(const NetworkConfig& c) {
  nlohmann::json j;
  j["filter_rate"] = c.filter_rate;
  j["base_filters"] = c.base_filters;
  j["num_classes"] = c.num_classes;
  j["aspp_dilation_rates"] = c.aspp_dilation_rates;
  j["deep_supervision"] = c.deep_supervision;
  j["seed"] = c.seed;
  return j.dump();
}

NetworkConfig config_from_json(const std::string& text) {
  NetworkConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.filter_rate = j.at("filter_rate").get<double>();
    c.base_filters = j.at("base_filters").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.aspp_dilation_rates = j.at("aspp_dilation_rates").get<std::array<std::size_t, 3>>();
    c.deep_supervision = j.at("deep_supervision").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid network config: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = config_to_json(model.config());
  put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint64_t>(out, model.named_tensors().size());
  for (const auto& nt : model.named_tensors()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put<std::uint8_t>(out, nt.trainable ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) put<std::uint64_t>(out, d);
    const auto data = nt.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()), path.string());
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError(path.string() + ": not a model checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto cfg_len = r.get<std::uint64_t>();
  Model model(config_from_json(r.str(cfg_len)));
  const auto count = r.get<std::uint64_t>();
  if (count != model.named_tensors().size()) {
    throw DataError(path.string() + ": checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(model.named_tensors().size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.get<std::uint32_t>());
    r.get<std::uint8_t>();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Tensor t;
    try {
      t = model.parameter(name);
    } catch (const std::out_of_range&) {
      throw DataError(path.string() + ": unknown tensor " + name);
    }
    if (t.shape() != shape) {
      throw DataError(path.string() + ": tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                      shape_str(t.shape()));
    }
    r.doubles(t.mutable_data());
  }
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after checkpoint payload");
  return model;
}

}  // namespace mdl
