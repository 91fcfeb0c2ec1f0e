#pragma once

#include <array>
#include <optional>
#include <vector>

#include "mdl/tensor.hpp"

namespace mdl {

using Triple = std::array<std::size_t, 3>;

/// Geometry of a 3D (grouped, dilated, strided) cross-correlation.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Triple kernel{3, 3, 3};
  Triple stride{1, 1, 1};
  Triple dilation{1, 1, 1};
  Triple padding{1, 1, 1};
  std::size_t groups = 1;

  /// Throws std::invalid_argument when the spec is inconsistent.
  void validate() const;
  Shape weight_shape() const;
  /// Output extent along one spatial axis, or throws if it would be < 1.
  std::size_t output_extent(std::size_t axis, std::size_t in_extent) const;

  /// kernel^3 with stride 1 and "same" zero padding for the given dilation.
  static ConvSpec same(std::size_t in, std::size_t out, std::size_t k = 3,
                       std::size_t dilation = 1, std::size_t groups = 1);
  static ConvSpec pointwise(std::size_t in, std::size_t out);
};

Tensor conv3d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              const ConvSpec& spec);

/// Per-channel spatial conv (groups == channels) followed by a 1x1x1 channel mix.
/// The spatial geometry (kernel, stride, dilation, padding) comes from `spatial`;
/// its channel fields are ignored.
Tensor depthwise_separable_conv3d(const Tensor& input, const Tensor& dw_weight,
                                  const std::optional<Tensor>& dw_bias, const Tensor& pw_weight,
                                  const std::optional<Tensor>& pw_bias, const ConvSpec& spatial);

enum class Mode { train, eval };

/// Running statistics owned by a batch-norm layer. Tensors so that they can be
/// checkpointed next to the learned parameters; never part of the graph.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;

  static BatchNormState fresh(std::size_t channels);
};

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Normalizes over (N, D, H, W) per channel. Train mode uses batch statistics
/// and updates `state`; eval mode uses the running statistics.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode, const BatchNormOptions& options = {});

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);
/// Softmax across axis 1 of an [N, C, ...] tensor, independently per voxel.
Tensor softmax_channels(const Tensor& input);

/// Trilinear upsampling by integer factors, half-pixel centres:
/// source coordinate = (i + 0.5) / factor - 0.5, clamped to the valid range.
Tensor trilinear_upsample(const Tensor& input, const Triple& factor);

/// [N, C, D, H, W] -> [N, C, 1, 1, 1]
Tensor global_avg_pool(const Tensor& input);
/// [N, C, D, H, W] -> [N, 1, D, H, W]
Tensor channel_mean(const Tensor& input);

Tensor concat_channels(const std::vector<Tensor>& inputs);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// features [N, C, D, H, W] times map [N, 1, D, H, W], broadcast over C.
Tensor mul_channel_broadcast(const Tensor& features, const Tensor& map);
Tensor scale(const Tensor& a, double factor);
/// Sum of all elements, shape [1].
Tensor sum(const Tensor& a);

}  // namespace mdl
