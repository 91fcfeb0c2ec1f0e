#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "mdl/ops.hpp"

namespace mdl {

namespace {

using Index = std::int64_t;

// For one kernel tap along one axis: the output positions whose input sample
// lands inside the volume, and the input offset (input = o * stride + offset).
struct TapRange {
  Index begin = 0;
  Index end = 0;
  Index offset = 0;
};

Index ceil_div(Index a, Index b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

std::vector<TapRange> tap_ranges(std::size_t in, std::size_t out, std::size_t k,
                                 std::size_t stride, std::size_t dilation, std::size_t pad) {
  std::vector<TapRange> ranges(k);
  const auto s = static_cast<Index>(stride);
  for (std::size_t t = 0; t < k; ++t) {
    TapRange r;
    r.offset = static_cast<Index>(t * dilation) - static_cast<Index>(pad);
    r.begin = r.offset >= 0 ? 0 : ceil_div(-r.offset, s);
    const Index limit = static_cast<Index>(in) - r.offset;
    r.end = limit <= 0 ? 0 : std::min<Index>(ceil_div(limit, s), static_cast<Index>(out));
    if (r.begin > r.end) r.begin = r.end;
    ranges[t] = r;
  }
  return ranges;
}

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t cin = 0, cout = 0, groups = 1;
  std::size_t d = 0, h = 0, w = 0;
  std::size_t od = 0, oh = 0, ow = 0;
  Triple kernel{};
  Triple stride{};
  std::vector<TapRange> rd, rh, rw;
  bool pointwise = false;

  std::size_t in_plane() const { return d * h * w; }
  std::size_t out_plane() const { return od * oh * ow; }
  std::size_t taps() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t cin_per_group() const { return cin / groups; }
  std::size_t cout_per_group() const { return cout / groups; }
};

ConvGeometry make_geometry(const Shape& in_shape, const ConvSpec& spec) {
  if (in_shape.size() != 5) {
    throw std::invalid_argument("conv3d expects [N,C,D,H,W] input, got " + shape_str(in_shape));
  }
  if (in_shape[1] != spec.in_channels) {
    throw std::invalid_argument("conv3d input has " + std::to_string(in_shape[1]) +
                                " channels, spec expects " + std::to_string(spec.in_channels));
  }
  ConvGeometry g;
  g.batch = in_shape[0];
  g.cin = spec.in_channels;
  g.cout = spec.out_channels;
  g.groups = spec.groups;
  g.d = in_shape[2];
  g.h = in_shape[3];
  g.w = in_shape[4];
  g.od = spec.output_extent(0, g.d);
  g.oh = spec.output_extent(1, g.h);
  g.ow = spec.output_extent(2, g.w);
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.rd = tap_ranges(g.d, g.od, spec.kernel[0], spec.stride[0], spec.dilation[0], spec.padding[0]);
  g.rh = tap_ranges(g.h, g.oh, spec.kernel[1], spec.stride[1], spec.dilation[1], spec.padding[1]);
  g.rw = tap_ranges(g.w, g.ow, spec.kernel[2], spec.stride[2], spec.dilation[2], spec.padding[2]);
  g.pointwise = spec.kernel == Triple{1, 1, 1} && spec.stride == Triple{1, 1, 1} &&
                spec.padding == Triple{0, 0, 0};
  return g;
}

// Visits every (output row, input row) pair touched by one kernel tap.
// fn(out_offset, in_offset, x_begin, x_end) where rows are addressed as
// out[out_offset + x] and in[in_offset + x * stride_w].
template <typename Fn>
void for_each_row(const ConvGeometry& g, std::size_t kd, std::size_t kh, std::size_t kw, Fn&& fn) {
  const auto& rd = g.rd[kd];
  const auto& rh = g.rh[kh];
  const auto& rw = g.rw[kw];
  if (rw.begin >= rw.end) return;
  const auto sd = static_cast<Index>(g.stride[0]);
  const auto sh = static_cast<Index>(g.stride[1]);
  for (Index z = rd.begin; z < rd.end; ++z) {
    const Index zi = z * sd + rd.offset;
    for (Index y = rh.begin; y < rh.end; ++y) {
      const Index yi = y * sh + rh.offset;
      const auto out_off = static_cast<std::size_t>((z * static_cast<Index>(g.oh) + y) *
                                                    static_cast<Index>(g.ow));
      const Index in_off = (zi * static_cast<Index>(g.h) + yi) * static_cast<Index>(g.w) + rw.offset;
      fn(out_off, in_off, static_cast<std::size_t>(rw.begin), static_cast<std::size_t>(rw.end));
    }
  }
}

void conv_forward(const ConvGeometry& g, const double* in, const double* wt, const double* bias,
                  double* out) {
  const std::size_t sw = g.stride[2];
  const std::size_t cpg_in = g.cin_per_group(), cpg_out = g.cout_per_group();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* op = out + (n * g.cout + co) * g.out_plane();
      const double b = bias ? bias[co] : 0.0;
      for (std::size_t i = 0; i < g.out_plane(); ++i) op[i] = b;
      const std::size_t grp = co / cpg_out;
      for (std::size_t cl = 0; cl < cpg_in; ++cl) {
        const std::size_t ci = grp * cpg_in + cl;
        const double* ip = in + (n * g.cin + ci) * g.in_plane();
        const double* wk = wt + (co * cpg_in + cl) * g.taps();
        if (g.pointwise) {
          const double wv = wk[0];
          for (std::size_t i = 0; i < g.out_plane(); ++i) op[i] += wv * ip[i];
          continue;
        }
        std::size_t tap = 0;
        for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
          for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++tap) {
              const double wv = wk[tap];
              if (sw == 1) {
                for_each_row(g, kd, kh, kw, [&](std::size_t oo, Index io, std::size_t xb, std::size_t xe) {
                  double* orow = op + oo;
                  const double* irow = ip + io;
                  for (std::size_t x = xb; x < xe; ++x) orow[x] += wv * irow[x];
                });
              } else {
                for_each_row(g, kd, kh, kw, [&](std::size_t oo, Index io, std::size_t xb, std::size_t xe) {
                  double* orow = op + oo;
                  const double* irow = ip + io;
                  for (std::size_t x = xb; x < xe; ++x) orow[x] += wv * irow[x * sw];
                });
              }
            }
      }
    }
  }
}

void conv_backward(const ConvGeometry& g, const double* in, const double* wt, const double* gout,
                   double* gin, double* gwt, double* gbias) {
  const std::size_t sw = g.stride[2];
  const std::size_t cpg_in = g.cin_per_group(), cpg_out = g.cout_per_group();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* gp = gout + (n * g.cout + co) * g.out_plane();
      if (gbias) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.out_plane(); ++i) s += gp[i];
        gbias[co] += s;
      }
      const std::size_t grp = co / cpg_out;
      for (std::size_t cl = 0; cl < cpg_in; ++cl) {
        const std::size_t ci = grp * cpg_in + cl;
        const double* ip = in + (n * g.cin + ci) * g.in_plane();
        double* gip = gin ? gin + (n * g.cin + ci) * g.in_plane() : nullptr;
        const double* wk = wt + (co * cpg_in + cl) * g.taps();
        double* gwk = gwt ? gwt + (co * cpg_in + cl) * g.taps() : nullptr;
        if (g.pointwise) {
          const double wv = wk[0];
          if (gip)
            for (std::size_t i = 0; i < g.out_plane(); ++i) gip[i] += wv * gp[i];
          if (gwk) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.out_plane(); ++i) s += gp[i] * ip[i];
            gwk[0] += s;
          }
          continue;
        }
        std::size_t tap = 0;
        for (std::size_t kd = 0; kd < g.kernel[0]; ++kd)
          for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
            for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++tap) {
              const double wv = wk[tap];
              double acc = 0.0;
              for_each_row(g, kd, kh, kw, [&](std::size_t oo, Index io, std::size_t xb, std::size_t xe) {
                const double* grow = gp + oo;
                const double* irow = ip + io;
                if (sw == 1) {
                  if (gip) {
                    double* girow = gip + io;
                    for (std::size_t x = xb; x < xe; ++x) girow[x] += wv * grow[x];
                  }
                  if (gwk) {
                    double s = 0.0;
                    for (std::size_t x = xb; x < xe; ++x) s += grow[x] * irow[x];
                    acc += s;
                  }
                } else {
                  if (gip) {
                    double* girow = gip + io;
                    for (std::size_t x = xb; x < xe; ++x) girow[x * sw] += wv * grow[x];
                  }
                  if (gwk) {
                    double s = 0.0;
                    for (std::size_t x = xb; x < xe; ++x) s += grow[x] * irow[x * sw];
                    acc += s;
                  }
                }
              });
              if (gwk) gwk[tap] += acc;
            }
      }
    }
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || groups == 0) {
    throw std::invalid_argument("conv channel counts and groups must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw std::invalid_argument("conv groups (" + std::to_string(groups) +
                                ") must divide both channel counts (" + std::to_string(in_channels) +
                                ", " + std::to_string(out_channels) + ")");
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (kernel[a] == 0 || kernel[a] % 2 == 0) {
      throw std::invalid_argument("conv kernel extents must be odd, got " + std::to_string(kernel[a]));
    }
    if (stride[a] == 0 || dilation[a] == 0) {
      throw std::invalid_argument("conv stride and dilation must be >= 1");
    }
  }
}

Shape ConvSpec::weight_shape() const {
  return {out_channels, in_channels / groups, kernel[0], kernel[1], kernel[2]};
}

std::size_t ConvSpec::output_extent(std::size_t axis, std::size_t in_extent) const {
  const auto span = static_cast<std::int64_t>(dilation[axis] * (kernel[axis] - 1) + 1);
  const auto padded = static_cast<std::int64_t>(in_extent + 2 * padding[axis]);
  if (padded < span) {
    throw std::invalid_argument("conv output extent along axis " + std::to_string(axis) +
                                " would be non-positive (input " + std::to_string(in_extent) +
                                ", padding " + std::to_string(padding[axis]) + ", dilated kernel " +
                                std::to_string(span) + ")");
  }
  return static_cast<std::size_t>((padded - span) / static_cast<std::int64_t>(stride[axis])) + 1;
}

ConvSpec ConvSpec::same(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation,
                        std::size_t groups) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = {k, k, k};
  s.dilation = {dilation, dilation, dilation};
  const std::size_t pad = dilation * (k - 1) / 2;
  s.padding = {pad, pad, pad};
  s.groups = groups;
  return s;
}

ConvSpec ConvSpec::pointwise(std::size_t in, std::size_t out) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = {1, 1, 1};
  s.padding = {0, 0, 0};
  return s;
}

Tensor conv3d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              const ConvSpec& spec) {
  spec.validate();
  const ConvGeometry g = make_geometry(input.shape(), spec);
  if (weight.shape() != spec.weight_shape()) {
    throw std::invalid_argument("conv3d weight shape " + shape_str(weight.shape()) +
                                " does not match expected " + shape_str(spec.weight_shape()));
  }
  if (bias && bias->shape() != Shape{spec.out_channels}) {
    throw std::invalid_argument("conv3d bias shape " + shape_str(bias->shape()) + " does not match [" +
                                std::to_string(spec.out_channels) + "]");
  }
  std::vector<double> out(g.batch * g.cout * g.out_plane());
  conv_forward(g, input.data().data(), weight.data().data(), bias ? bias->data().data() : nullptr,
               out.data());

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  Tensor in_t = input, w_t = weight;
  std::optional<Tensor> b_t = bias;
  return Tensor::make_result(
      {g.batch, g.cout, g.od, g.oh, g.ow}, std::move(out), std::move(inputs), "conv3d",
      [g, in_t, w_t, b_t](const detail::TensorImpl& o) mutable {
        double* gin = in_t.requires_grad() ? in_t.mutable_grad().data() : nullptr;
        double* gw = w_t.requires_grad() ? w_t.mutable_grad().data() : nullptr;
        double* gb = (b_t && b_t->requires_grad()) ? b_t->mutable_grad().data() : nullptr;
        conv_backward(g, in_t.data().data(), w_t.data().data(), o.grad.data(), gin, gw, gb);
      });
}

Tensor depthwise_separable_conv3d(const Tensor& input, const Tensor& dw_weight,
                                  const std::optional<Tensor>& dw_bias, const Tensor& pw_weight,
                                  const std::optional<Tensor>& pw_bias, const ConvSpec& spatial) {
  if (input.rank() != 5) {
    throw std::invalid_argument("depthwise_separable_conv3d expects [N,C,D,H,W] input, got " +
                                shape_str(input.shape()));
  }
  const std::size_t cin = input.dim(1);
  if (pw_weight.rank() != 5 || pw_weight.dim(1) != cin) {
    throw std::invalid_argument("pointwise weight shape " + shape_str(pw_weight.shape()) +
                                " incompatible with " + std::to_string(cin) + " input channels");
  }
  ConvSpec dw = spatial;
  dw.in_channels = cin;
  dw.out_channels = cin;
  dw.groups = cin;
  Tensor spatial_out = conv3d(input, dw_weight, dw_bias, dw);
  return conv3d(spatial_out, pw_weight, pw_bias, ConvSpec::pointwise(cin, pw_weight.dim(0)));
}

}  // namespace mdl
