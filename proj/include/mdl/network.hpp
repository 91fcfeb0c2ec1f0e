#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdl/ops.hpp"
#include "mdl/volume.hpp"

namespace mdl {

/// Architecture hyperparameters. Every convolution width is derived from
/// base_filters * filter_rate, so the rate scales encoder and decoder alike.
struct NetworkConfig {
  double filter_rate = 1.0;
  std::size_t base_filters = 32;
  std::size_t num_classes = 3;
  std::array<std::size_t, 3> aspp_dilation_rates{2, 4, 6};
  /// Attach the two auxiliary heads; false gives a single-output network.
  bool deep_supervision = true;
  std::uint64_t seed = 0;

  /// Encoder stage widths base*rate*(1,2,4,8), rounded to nearest.
  std::array<std::size_t, 4> encoder_channels() const;
  /// Decoder stage widths: each stage halves its concatenated input.
  std::array<std::size_t, 3> decoder_channels() const;
  /// Throws std::invalid_argument if any width rounds to 0 or fields are invalid.
  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

struct ConvLayer {
  Tensor weight;
  std::optional<Tensor> bias;
  ConvSpec spec;

  Tensor operator()(const Tensor& x) const { return conv3d(x, weight, bias, spec); }
};

struct SepConvLayer {
  Tensor dw_weight;
  Tensor pw_weight;
  Tensor pw_bias;
  ConvSpec spatial;

  Tensor operator()(const Tensor& x) const {
    return depthwise_separable_conv3d(x, dw_weight, std::nullopt, pw_weight, pw_bias, spatial);
  }
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  // Held by pointer-like handles, so copies of the layer share the statistics.
  BatchNormState state;

  Tensor operator()(const Tensor& x, Mode mode) const;
};

struct EncoderStage {
  SepConvLayer sep1, sep2, down;
  BatchNormLayer bn1, bn2, bn_down;
  ConvLayer projection;
};

struct AsppModule {
  ConvLayer pointwise;
  std::vector<ConvLayer> dilated;
  std::vector<BatchNormLayer> branch_bn;  // pointwise first, then one per dilated branch
  ConvLayer pool_conv;
  ConvLayer fuse;
  BatchNormLayer fuse_bn;
};

struct AttentionLayer {
  SepConvLayer conv;
  std::optional<ConvLayer> aux_head;
};

struct DecoderStage {
  ConvLayer reduce;
  BatchNormLayer reduce_bn;
  ConvLayer res1, res2;
  BatchNormLayer res_bn1, res_bn2;
  AttentionLayer attention;
};

struct EncoderOutput {
  Tensor deep;                 // stride 16
  std::array<Tensor, 3> skips;  // strides 8, 4, 2
};

struct AttentionOutput {
  Tensor attended;
  Tensor map;  // [N,1,D,H,W], values in [0,1]
  std::optional<Tensor> aux_logits;
};

struct SegmentationOutput {
  Tensor main_probs;                  // [N,C,D,H,W]
  std::vector<Tensor> aux_probs;      // strides 8 and 4
  std::vector<Tensor> attention_maps;  // one per decoder stage
};

/// The segmentation network: depthwise-separable residual encoder with
/// output stride 16, atrous spatial pyramid pooling, and a three-stage
/// decoder with skip connections and spatial attention. The first two
/// attention layers carry auxiliary heads for deep supervision.
///
/// Parameters are shared handles; a Model owns its registry and is move-only.
class Model {
 public:
  explicit Model(const NetworkConfig& config);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const NetworkConfig& config() const { return config_; }

  /// Every tensor in registration order, including batch-norm running stats.
  const std::vector<NamedTensor>& named_tensors() const { return tensors_; }
  std::vector<Tensor> trainable_parameters() const;
  std::vector<std::string> trainable_names() const;
  Tensor parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Deep copy of every tensor, parameters and running statistics alike.
  Model clone() const;
  /// Copies values from another model with the same configuration.
  void copy_values_from(const Model& other);

  EncoderOutput encode(const Tensor& volume, Mode mode) const;
  Tensor aspp(const Tensor& deep, Mode mode) const;
  /// stage is 0-based (0, 1, 2).
  AttentionOutput attention(std::size_t stage, const Tensor& features, bool with_aux) const;
  SegmentationOutput forward(const Tensor& volume, Mode mode) const;

  const std::array<EncoderStage, 4>& encoder() const { return encoder_; }
  const AsppModule& aspp_module() const { return aspp_; }
  const std::array<DecoderStage, 3>& decoder() const { return decoder_; }
  const ConvLayer& classifier() const { return classifier_; }

 private:
  Tensor add_param(const std::string& name, Shape shape, bool trainable = true);
  ConvLayer make_conv(const std::string& name, const ConvSpec& spec, bool bias = true);
  SepConvLayer make_sep(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                        std::size_t dilation);
  BatchNormLayer make_bn(const std::string& name, std::size_t channels);

  NetworkConfig config_;
  std::vector<NamedTensor> tensors_;
  std::array<EncoderStage, 4> encoder_;
  AsppModule aspp_;
  std::array<DecoderStage, 3> decoder_;
  ConvLayer classifier_;
};

/// Seed-deterministic He-normal initialization of conv weights; zero biases;
/// batch-norm gamma 1, beta 0.
Model build_model(const NetworkConfig& config);

/// Trainable scalar count, a pure function of the configuration.
std::size_t count_parameters(const NetworkConfig& config);

/// [1,1,D,H,W] tensor from a volume's values.
Tensor volume_tensor(const VolumeGrid& grid);

/// Standardizes the volume and returns the main-head class probabilities.
Tensor predict_probs(const Model& model, const VolumeGrid& grid);
/// Argmax of the main-head probabilities; ties go to the lower class index.
LabelVolume segment(const Model& model, const VolumeGrid& grid);
LabelVolume argmax_labels(const Tensor& probs, const VolumeGrid& like);

/// Per-voxel majority vote of member segmentations. When every member
/// disagrees, the label is the argmax of the mean softmax.
/// Throws std::invalid_argument for fewer than two models.
LabelVolume ensemble_predict(const std::vector<const Model*>& models, const VolumeGrid& grid);
/// The vote itself, given each member's probabilities.
LabelVolume ensemble_vote(const std::vector<Tensor>& member_probs, const VolumeGrid& like);

// Checkpoint container (little-endian):
//   "MDLCKPT\0" | u32 version | u64 n | config JSON (n bytes) | u64 count |
//   count x { u32 len | name | u8 trainable | u32 rank | u64 dims[rank] | f64 values }
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const std::string& json);

}  // namespace mdl
