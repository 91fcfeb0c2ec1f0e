#include "mdl/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mdl/preprocess.hpp"

namespace mdl {

namespace {

std::size_t round_width(double w) { return static_cast<std::size_t>(std::llround(w)); }

void require_divisible_by_16(const Tensor& volume) {
  if (volume.rank() != 5) {
    throw std::invalid_argument("network input must be [N,1,D,H,W], got " + shape_str(volume.shape()));
  }
  for (std::size_t a = 2; a < 5; ++a) {
    if (volume.dim(a) % 16 != 0) {
      const std::size_t pad = 16 - volume.dim(a) % 16;
      throw std::invalid_argument("input extents " + shape_str(volume.shape()) +
                                  " must be divisible by 16; pad axis " + std::to_string(a - 2) + " by " +
                                  std::to_string(pad) + " voxels");
    }
  }
}

}  // namespace

std::array<std::size_t, 4> NetworkConfig::encoder_channels() const {
  std::array<std::size_t, 4> c{};
  const double base = static_cast<double>(base_filters) * filter_rate;
  for (std::size_t k = 0; k < 4; ++k) c[k] = round_width(base * static_cast<double>(1u << k));
  return c;
}

std::array<std::size_t, 3> NetworkConfig::decoder_channels() const {
  const auto enc = encoder_channels();
  std::array<std::size_t, 3> d{};
  std::size_t in = enc[3];
  for (std::size_t s = 0; s < 3; ++s) {
    d[s] = (in + enc[2 - s]) / 2;
    in = d[s];
  }
  return d;
}

void NetworkConfig::validate() const {
  if (!(filter_rate > 0.0 && filter_rate <= 1.0)) {
    throw std::invalid_argument("filter_rate must lie in (0, 1], got " + std::to_string(filter_rate));
  }
  if (base_filters == 0) throw std::invalid_argument("base_filters must be positive");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  for (auto r : aspp_dilation_rates) {
    if (r == 0) throw std::invalid_argument("ASPP dilation rates must be >= 1");
  }
  for (auto c : encoder_channels()) {
    if (c == 0) {
      throw std::invalid_argument("base_filters * filter_rate = " +
                                  std::to_string(static_cast<double>(base_filters) * filter_rate) +
                                  " rounds a channel count to 0");
    }
  }
  for (auto c : decoder_channels()) {
    if (c == 0) throw std::invalid_argument("decoder channel count rounds to 0");
  }
}

Tensor BatchNormLayer::operator()(const Tensor& x, Mode mode) const {
  auto state_copy = state;  // handles alias the stored statistics
  return batch_norm(x, gamma, beta, state_copy, mode);
}

Tensor Model::add_param(const std::string& name, Shape shape, bool trainable) {
  for (const auto& t : tensors_) {
    if (t.name == name) throw std::logic_error("duplicate parameter name " + name);
  }
  Tensor t = Tensor::zeros(std::move(shape), trainable);
  tensors_.push_back({name, t, trainable});
  return t;
}

ConvLayer Model::make_conv(const std::string& name, const ConvSpec& spec, bool bias) {
  spec.validate();
  ConvLayer layer;
  layer.spec = spec;
  layer.weight = add_param(name + ".weight", spec.weight_shape());
  if (bias) layer.bias = add_param(name + ".bias", {spec.out_channels});
  return layer;
}

SepConvLayer Model::make_sep(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                             std::size_t dilation) {
  SepConvLayer layer;
  layer.spatial = ConvSpec::same(in, in, 3, dilation, in);
  layer.spatial.stride = {stride, stride, stride};
  layer.dw_weight = add_param(name + ".dw.weight", layer.spatial.weight_shape());
  layer.pw_weight = add_param(name + ".pw.weight", ConvSpec::pointwise(in, out).weight_shape());
  layer.pw_bias = add_param(name + ".pw.bias", {out});
  return layer;
}

BatchNormLayer Model::make_bn(const std::string& name, std::size_t channels) {
  BatchNormLayer bn;
  bn.gamma = add_param(name + ".gamma", {channels});
  bn.beta = add_param(name + ".beta", {channels});
  bn.state.running_mean = add_param(name + ".running_mean", {channels}, false);
  bn.state.running_var = add_param(name + ".running_var", {channels}, false);
  return bn;
}

Model::Model(const NetworkConfig& config) : config_(config) {
  config_.validate();
  const auto enc = config_.encoder_channels();
  const auto dec = config_.decoder_channels();

  std::size_t in = 1;
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string p = "enc" + std::to_string(k + 1);
    const std::size_t dil = k == 3 ? 2 : 1;
    auto& st = encoder_[k];
    st.sep1 = make_sep(p + ".sep1", in, enc[k], 1, dil);
    st.bn1 = make_bn(p + ".bn1", enc[k]);
    st.sep2 = make_sep(p + ".sep2", enc[k], enc[k], 1, dil);
    st.bn2 = make_bn(p + ".bn2", enc[k]);
    st.projection = make_conv(p + ".proj", ConvSpec::pointwise(in, enc[k]));
    st.down = make_sep(p + ".down", enc[k], enc[k], 2, 1);
    st.bn_down = make_bn(p + ".bn_down", enc[k]);
    in = enc[k];
  }

  const std::size_t deep = enc[3];
  aspp_.pointwise = make_conv("aspp.b0", ConvSpec::pointwise(deep, deep));
  aspp_.branch_bn.push_back(make_bn("aspp.b0.bn", deep));
  for (std::size_t r = 0; r < config_.aspp_dilation_rates.size(); ++r) {
    const std::string p = "aspp.b" + std::to_string(r + 1);
    aspp_.dilated.push_back(make_conv(p, ConvSpec::same(deep, deep, 3, config_.aspp_dilation_rates[r])));
    aspp_.branch_bn.push_back(make_bn(p + ".bn", deep));
  }
  aspp_.pool_conv = make_conv("aspp.pool", ConvSpec::pointwise(deep, deep));
  const std::size_t branches = config_.aspp_dilation_rates.size() + 2;
  aspp_.fuse = make_conv("aspp.fuse", ConvSpec::pointwise(branches * deep, deep));
  aspp_.fuse_bn = make_bn("aspp.fuse.bn", deep);

  in = deep;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string p = "dec" + std::to_string(s + 1);
    auto& st = decoder_[s];
    const std::size_t cat = in + enc[2 - s];
    st.reduce = make_conv(p + ".reduce", ConvSpec::same(cat, dec[s]));
    st.reduce_bn = make_bn(p + ".reduce.bn", dec[s]);
    st.res1 = make_conv(p + ".res1", ConvSpec::same(dec[s], dec[s]));
    st.res_bn1 = make_bn(p + ".res1.bn", dec[s]);
    st.res2 = make_conv(p + ".res2", ConvSpec::same(dec[s], dec[s]));
    st.res_bn2 = make_bn(p + ".res2.bn", dec[s]);
    st.attention.conv = make_sep(p + ".att", dec[s], dec[s], 1, 1);
    if (config_.deep_supervision && s < 2) {
      st.attention.aux_head = make_conv(p + ".att.aux", ConvSpec::pointwise(dec[s], config_.num_classes));
    }
    in = dec[s];
  }
  classifier_ = make_conv("classifier", ConvSpec::pointwise(dec[2], config_.num_classes));
}

std::vector<Tensor> Model::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& t : tensors_) {
    if (t.trainable) out.push_back(t.tensor);
  }
  return out;
}

std::vector<std::string> Model::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& t : tensors_) {
    if (t.trainable) out.push_back(t.name);
  }
  return out;
}

Tensor Model::parameter(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t.tensor;
  }
  throw std::out_of_range("model has no tensor named " + name);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) {
    if (t.trainable) n += t.tensor.numel();
  }
  return n;
}

Model Model::clone() const {
  Model m(config_);
  m.copy_values_from(*this);
  return m;
}

void Model::copy_values_from(const Model& other) {
  if (other.tensors_.size() != tensors_.size()) throw std::invalid_argument("copy_values_from: layout mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& src = other.tensors_[i];
    auto& dst = tensors_[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
      throw std::invalid_argument("copy_values_from: tensor " + dst.name + " does not match " + src.name);
    }
    auto d = dst.tensor.mutable_data();
    auto s = src.tensor.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

EncoderOutput Model::encode(const Tensor& volume, Mode mode) const {
  require_divisible_by_16(volume);
  if (volume.dim(1) != 1) throw std::invalid_argument("network input must have one channel");
  EncoderOutput out;
  Tensor x = volume;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& st = encoder_[k];
    Tensor h = relu(st.bn1(st.sep1(x), mode));
    h = st.bn2(st.sep2(h), mode);
    h = relu(add(h, st.projection(x)));
    x = relu(st.bn_down(st.down(h), mode));
    if (k < 3) out.skips[2 - k] = x;
  }
  out.deep = x;
  return out;
}

Tensor Model::aspp(const Tensor& deep, Mode mode) const {
  std::vector<Tensor> branches;
  branches.push_back(relu(aspp_.branch_bn[0](aspp_.pointwise(deep), mode)));
  for (std::size_t r = 0; r < aspp_.dilated.size(); ++r) {
    branches.push_back(relu(aspp_.branch_bn[r + 1](aspp_.dilated[r](deep), mode)));
  }
  // Image-level branch: one value per channel, so no batch norm here.
  Tensor pooled = relu(aspp_.pool_conv(global_avg_pool(deep)));
  branches.push_back(trilinear_upsample(pooled, {deep.dim(2), deep.dim(3), deep.dim(4)}));
  return relu(aspp_.fuse_bn(aspp_.fuse(concat_channels(branches)), mode));
}

AttentionOutput Model::attention(std::size_t stage, const Tensor& features, bool with_aux) const {
  const auto& layer = decoder_.at(stage).attention;
  Tensor transformed = layer.conv(features);
  AttentionOutput out;
  out.map = sigmoid(channel_mean(transformed));
  out.attended = mul_channel_broadcast(features, out.map);
  if (with_aux) {
    if (!layer.aux_head) throw std::logic_error("decoder stage " + std::to_string(stage) + " has no auxiliary head");
    out.aux_logits = (*layer.aux_head)(transformed);
  }
  return out;
}

SegmentationOutput Model::forward(const Tensor& volume, Mode mode) const {
  const EncoderOutput enc = encode(volume, mode);
  Tensor x = aspp(enc.deep, mode);
  SegmentationOutput out;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& st = decoder_[s];
    Tensor up = trilinear_upsample(x, {2, 2, 2});
    Tensor h = relu(st.reduce_bn(st.reduce(concat_channels({up, enc.skips[s]})), mode));
    Tensor r = relu(st.res_bn1(st.res1(h), mode));
    r = st.res_bn2(st.res2(r), mode);
    h = relu(add(h, r));
    const bool aux = st.attention.aux_head.has_value();
    AttentionOutput att = attention(s, h, aux);
    out.attention_maps.push_back(att.map);
    if (aux) out.aux_probs.push_back(softmax_channels(*att.aux_logits));
    x = att.attended;
  }
  Tensor full = trilinear_upsample(x, {2, 2, 2});
  out.main_probs = softmax_channels(classifier_(full));
  return out;
}

Model build_model(const NetworkConfig& config) {
  Model model(config);
  std::mt19937_64 rng(config.seed);
  for (const auto& nt : model.named_tensors()) {
    Tensor t = nt.tensor;
    auto data = t.mutable_data();
    const auto& name = nt.name;
    const auto ends_with = [&](const std::string& suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".weight")) {
      const auto& s = t.shape();
      const double fan_in = static_cast<double>(s[1] * s[2] * s[3] * s[4]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : data) v = dist(rng);
    } else if (ends_with(".gamma") || ends_with(".running_var")) {
      std::fill(data.begin(), data.end(), 1.0);
    } else {
      std::fill(data.begin(), data.end(), 0.0);
    }
  }
  return model;
}

std::size_t count_parameters(const NetworkConfig& config) { return Model(config).parameter_count(); }

Tensor volume_tensor(const VolumeGrid& grid) {
  grid.validate();
  return Tensor::from_data({1, 1, grid.extents.d, grid.extents.h, grid.extents.w}, grid.values);
}

Tensor predict_probs(const Model& model, const VolumeGrid& grid) {
  NoGradGuard guard;
  return model.forward(volume_tensor(standardize(grid)), Mode::eval).main_probs;
}

LabelVolume argmax_labels(const Tensor& probs, const VolumeGrid& like) {
  const std::size_t c = probs.dim(1), v = like.extents.voxels();
  if (probs.numel() != c * v) throw std::invalid_argument("argmax_labels: probabilities do not match the volume");
  LabelVolume out = LabelVolume::filled(like.extents, like.spacing);
  out.orientation = like.orientation;
  const auto p = probs.data();
  for (std::size_t i = 0; i < v; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (p[k * v + i] > p[best * v + i]) best = k;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LabelVolume segment(const Model& model, const VolumeGrid& grid) {
  return argmax_labels(predict_probs(model, grid), grid);
}

LabelVolume ensemble_vote(const std::vector<Tensor>& member_probs, const VolumeGrid& like) {
  if (member_probs.size() < 2) throw std::invalid_argument("ensemble needs at least two models");
  const Shape& shape = member_probs.front().shape();
  for (const auto& p : member_probs) {
    if (p.shape() != shape) throw std::invalid_argument("ensemble members disagree on output shape");
  }
  const std::size_t c = shape[1], v = like.extents.voxels();
  std::vector<LabelVolume> votes;
  for (const auto& p : member_probs) votes.push_back(argmax_labels(p, like));

  LabelVolume out = LabelVolume::filled(like.extents, like.spacing);
  out.orientation = like.orientation;
  const std::size_t majority = member_probs.size() / 2 + 1;
  std::vector<std::size_t> tally(c);
  for (std::size_t i = 0; i < v; ++i) {
    std::fill(tally.begin(), tally.end(), 0);
    for (const auto& vote : votes) ++tally[vote.labels[i]];
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (tally[k] > tally[best]) best = k;
    }
    if (tally[best] < majority) {
      // No majority: argmax of the mean softmax, summed in sorted order so the
      // result is independent of member order.
      std::vector<double> mean(c, 0.0);
      for (std::size_t k = 0; k < c; ++k) {
        std::vector<double> vals;
        for (const auto& p : member_probs) vals.push_back(p.data()[k * v + i]);
        std::sort(vals.begin(), vals.end());
        for (double x : vals) mean[k] += x;
      }
      best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (mean[k] > mean[best]) best = k;
      }
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LabelVolume ensemble_predict(const std::vector<const Model*>& models, const VolumeGrid& grid) {
  if (models.size() < 2) throw std::invalid_argument("ensemble needs at least two models");
  const std::size_t classes = models.front()->config().num_classes;
  std::vector<Tensor> probs;
  for (const Model* m : models) {
    if (m->config().num_classes != classes) throw std::invalid_argument("ensemble members disagree on num_classes");
    probs.push_back(predict_probs(*m, grid));
  }
  return ensemble_vote(probs, grid);
}

}  // namespace mdl
