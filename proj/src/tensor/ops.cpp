#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mdl/ops.hpp"

namespace mdl {

namespace {

void require_rank5(const Tensor& t, const char* op) {
  if (t.rank() != 5) {
    throw std::invalid_argument(std::string(op) + " expects [N,C,D,H,W], got " + shape_str(t.shape()));
  }
}

std::size_t spatial_size(const Shape& s) { return s[2] * s[3] * s[4]; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

// Linear interpolation weights along one axis for half-pixel centres.
struct Lerp {
  std::size_t i0, i1;
  double t;
};

std::vector<Lerp> lerp_table(std::size_t n, std::size_t factor) {
  std::vector<Lerp> table(n * factor);
  for (std::size_t j = 0; j < table.size(); ++j) {
    double src = (static_cast<double>(j) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    table[j] = {i0, i1, src - static_cast<double>(i0)};
  }
  return table;
}

// Tensor viewed as [outer, n, inner]; resample the middle axis.
std::vector<double> resample_axis(const std::vector<double>& in, std::size_t outer, std::size_t n,
                                  std::size_t inner, const std::vector<Lerp>& table) {
  const std::size_t m = table.size();
  std::vector<double> out(outer * m * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = in.data() + o * n * inner;
    double* dst = out.data() + o * m * inner;
    for (std::size_t j = 0; j < m; ++j) {
      const auto& l = table[j];
      const double* a = src + l.i0 * inner;
      const double* b = src + l.i1 * inner;
      double* d = dst + j * inner;
      const double wa = 1.0 - l.t, wb = l.t;
      for (std::size_t k = 0; k < inner; ++k) d[k] = wa * a[k] + wb * b[k];
    }
  }
  return out;
}

std::vector<double> resample_axis_transpose(const std::vector<double>& gout, std::size_t outer,
                                            std::size_t n, std::size_t inner,
                                            const std::vector<Lerp>& table) {
  const std::size_t m = table.size();
  std::vector<double> gin(outer * n * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = gout.data() + o * m * inner;
    double* dst = gin.data() + o * n * inner;
    for (std::size_t j = 0; j < m; ++j) {
      const auto& l = table[j];
      double* a = dst + l.i0 * inner;
      double* b = dst + l.i1 * inner;
      const double* g = src + j * inner;
      const double wa = 1.0 - l.t, wb = l.t;
      for (std::size_t k = 0; k < inner; ++k) {
        a[k] += wa * g[k];
        b[k] += wb * g[k];
      }
    }
  }
  return gin;
}

template <typename Fwd, typename Deriv>
Tensor elementwise(const Tensor& input, const char* name, Fwd fwd, Deriv deriv) {
  auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  Tensor in_t = input;
  return Tensor::make_result(input.shape(), std::move(out), {input}, name,
                             [in_t, deriv](const detail::TensorImpl& o) mutable {
                               auto gx = in_t.mutable_grad();
                               auto x = in_t.data();
                               for (std::size_t i = 0; i < gx.size(); ++i)
                                 gx[i] += o.grad[i] * deriv(x[i], o.data[i]);
                             });
}

}  // namespace

BatchNormState BatchNormState::fresh(std::size_t channels) {
  return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  Mode mode, const BatchNormOptions& options) {
  require_rank5(input, "batch_norm");
  if (!(options.epsilon > 0.0)) throw std::invalid_argument("batch_norm epsilon must be > 0");
  const std::size_t n = input.dim(0), c = input.dim(1), v = spatial_size(input.shape());
  const Shape cshape{c};
  if (gamma.shape() != cshape || beta.shape() != cshape || state.running_mean.shape() != cshape ||
      state.running_var.shape() != cshape) {
    throw std::invalid_argument("batch_norm: channel count " + std::to_string(c) +
                                " does not match parameter shapes " + shape_str(gamma.shape()));
  }
  const auto x = input.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  const std::size_t count = n * v;

  std::vector<double> mean(c), inv_std(c);
  if (mode == Mode::train) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * v;
        for (std::size_t k = 0; k < v; ++k) s += p[k];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * v;
        for (std::size_t k = 0; k < v; ++k) {
          const double d = p[k] - m;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + options.epsilon);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      rm[ch] = (1.0 - options.momentum) * rm[ch] + options.momentum * m;
      rv[ch] = (1.0 - options.momentum) * rv[ch] + options.momentum * unbiased;
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = 1.0 / std::sqrt(rv[ch] + options.epsilon);
    }
  }

  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (i * c + ch) * v;
      double* q = out.data() + (i * c + ch) * v;
      const double m = mean[ch], s = inv_std[ch] * g[ch], sh = b[ch];
      for (std::size_t k = 0; k < v; ++k) q[k] = (p[k] - m) * s + sh;
    }
  }

  Tensor in_t = input, g_t = gamma, b_t = beta;
  const bool batch_stats = mode == Mode::train;
  return Tensor::make_result(
      input.shape(), std::move(out), {input, gamma, beta}, "batch_norm",
      [in_t, g_t, b_t, mean, inv_std, n, c, v, count, batch_stats](const detail::TensorImpl& o) mutable {
        const auto x = in_t.data();
        const auto gam = g_t.data();
        const double* go = o.grad.data();
        double* gx = in_t.requires_grad() ? in_t.mutable_grad().data() : nullptr;
        double* gg = g_t.requires_grad() ? g_t.mutable_grad().data() : nullptr;
        double* gb = b_t.requires_grad() ? b_t.mutable_grad().data() : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double m = mean[ch], is = inv_std[ch];
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double* p = x.data() + (i * c + ch) * v;
            const double* q = go + (i * c + ch) * v;
            for (std::size_t k = 0; k < v; ++k) {
              sum_g += q[k];
              sum_gx += q[k] * (p[k] - m) * is;
            }
          }
          if (gb) gb[ch] += sum_g;
          if (gg) gg[ch] += sum_gx;
          if (!gx) continue;
          const double scale_in = gam[ch] * is;
          for (std::size_t i = 0; i < n; ++i) {
            const double* p = x.data() + (i * c + ch) * v;
            const double* q = go + (i * c + ch) * v;
            double* r = gx + (i * c + ch) * v;
            if (batch_stats) {
              const double inv_count = 1.0 / static_cast<double>(count);
              for (std::size_t k = 0; k < v; ++k) {
                const double xhat = (p[k] - m) * is;
                r[k] += scale_in * (q[k] - inv_count * sum_g - xhat * inv_count * sum_gx);
              }
            } else {
              for (std::size_t k = 0; k < v; ++k) r[k] += scale_in * q[k];
            }
          }
        }
      });
}

Tensor relu(const Tensor& input) {
  return elementwise(
      input, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& input) {
  return elementwise(
      input, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax_channels(const Tensor& input) {
  if (input.rank() < 2) {
    throw std::invalid_argument("softmax_channels needs a channel axis, got " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), v = input.numel() / (n * c);
  const auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = x.data() + i * c * v;
    double* q = out.data() + i * c * v;
    for (std::size_t k = 0; k < v; ++k) {
      double mx = p[k];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, p[ch * v + k]);
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double e = std::exp(p[ch * v + k] - mx);
        q[ch * v + k] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (std::size_t ch = 0; ch < c; ++ch) q[ch * v + k] *= inv;
    }
  }
  Tensor in_t = input;
  return Tensor::make_result(input.shape(), std::move(out), {input}, "softmax_channels",
                             [in_t, n, c, v](const detail::TensorImpl& o) mutable {
                               double* gx = in_t.mutable_grad().data();
                               for (std::size_t i = 0; i < n; ++i) {
                                 const double* q = o.data.data() + i * c * v;
                                 const double* g = o.grad.data() + i * c * v;
                                 double* r = gx + i * c * v;
                                 for (std::size_t k = 0; k < v; ++k) {
                                   double dot = 0.0;
                                   for (std::size_t ch = 0; ch < c; ++ch) dot += g[ch * v + k] * q[ch * v + k];
                                   for (std::size_t ch = 0; ch < c; ++ch)
                                     r[ch * v + k] += q[ch * v + k] * (g[ch * v + k] - dot);
                                 }
                               }
                             });
}

Tensor trilinear_upsample(const Tensor& input, const Triple& factor) {
  require_rank5(input, "trilinear_upsample");
  for (auto f : factor) {
    if (f == 0) throw std::invalid_argument("trilinear_upsample factors must be >= 1");
  }
  const Shape& s = input.shape();
  const std::size_t nc = s[0] * s[1];
  const std::size_t d = s[2], h = s[3], w = s[4];
  const std::size_t od = d * factor[0], oh = h * factor[1], ow = w * factor[2];
  const auto tw = lerp_table(w, factor[2]);
  const auto th = lerp_table(h, factor[1]);
  const auto td = lerp_table(d, factor[0]);

  std::vector<double> cur(input.data().begin(), input.data().end());
  cur = resample_axis(cur, nc * d * h, w, 1, tw);
  cur = resample_axis(cur, nc * d, h, ow, th);
  cur = resample_axis(cur, nc, d, oh * ow, td);

  Tensor in_t = input;
  return Tensor::make_result(
      {s[0], s[1], od, oh, ow}, std::move(cur), {input}, "trilinear_upsample",
      [in_t, tw, th, td, nc, d, h, w, oh, ow](const detail::TensorImpl& o) mutable {
        auto g = resample_axis_transpose(o.grad, nc, d, oh * ow, td);
        g = resample_axis_transpose(g, nc * d, h, ow, th);
        g = resample_axis_transpose(g, nc * d * h, w, 1, tw);
        auto gx = in_t.mutable_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank5(input, "global_avg_pool");
  const std::size_t nc = input.dim(0) * input.dim(1), v = spatial_size(input.shape());
  const auto x = input.data();
  std::vector<double> out(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < v; ++k) s += x[i * v + k];
    out[i] = s / static_cast<double>(v);
  }
  Tensor in_t = input;
  return Tensor::make_result({input.dim(0), input.dim(1), 1, 1, 1}, std::move(out), {input},
                             "global_avg_pool", [in_t, nc, v](const detail::TensorImpl& o) mutable {
                               auto gx = in_t.mutable_grad();
                               const double inv = 1.0 / static_cast<double>(v);
                               for (std::size_t i = 0; i < nc; ++i) {
                                 const double g = o.grad[i] * inv;
                                 for (std::size_t k = 0; k < v; ++k) gx[i * v + k] += g;
                               }
                             });
}

Tensor channel_mean(const Tensor& input) {
  require_rank5(input, "channel_mean");
  const std::size_t n = input.dim(0), c = input.dim(1), v = spatial_size(input.shape());
  const auto x = input.data();
  std::vector<double> out(n * v, 0.0);
  const double inv = 1.0 / static_cast<double>(c);
  for (std::size_t i = 0; i < n; ++i) {
    double* q = out.data() + i * v;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (i * c + ch) * v;
      for (std::size_t k = 0; k < v; ++k) q[k] += p[k];
    }
    for (std::size_t k = 0; k < v; ++k) q[k] *= inv;
  }
  Tensor in_t = input;
  return Tensor::make_result({n, 1, input.dim(2), input.dim(3), input.dim(4)}, std::move(out), {input},
                             "channel_mean", [in_t, n, c, v, inv](const detail::TensorImpl& o) mutable {
                               auto gx = in_t.mutable_grad();
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t ch = 0; ch < c; ++ch)
                                   for (std::size_t k = 0; k < v; ++k)
                                     gx[(i * c + ch) * v + k] += inv * o.grad[i * v + k];
                             });
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat_channels needs at least one input");
  for (const auto& t : inputs) require_rank5(t, "concat_channels");
  const Shape& first = inputs.front().shape();
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3] || s[4] != first[4]) {
      throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(first) + " and " +
                                  shape_str(s));
    }
    channels += s[1];
  }
  const std::size_t n = first[0], v = spatial_size(first);
  std::vector<double> out(n * channels * v);
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    const std::size_t c = t.dim(1);
    const auto x = t.data();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.data() + i * c * v, c * v, out.data() + (i * channels + offset) * v);
    offset += c;
  }
  std::vector<Tensor> ins = inputs;
  return Tensor::make_result({n, channels, first[2], first[3], first[4]}, std::move(out), inputs,
                             "concat_channels", [ins, n, channels, v](const detail::TensorImpl& o) mutable {
                               std::size_t off = 0;
                               for (auto& t : ins) {
                                 const std::size_t c = t.dim(1);
                                 if (t.requires_grad()) {
                                   auto gx = t.mutable_grad();
                                   for (std::size_t i = 0; i < n; ++i) {
                                     const double* src = o.grad.data() + (i * channels + off) * v;
                                     double* dst = gx.data() + i * c * v;
                                     for (std::size_t k = 0; k < c * v; ++k) dst[k] += src[k];
                                   }
                                 }
                                 off += c;
                               }
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  Tensor a_t = a, b_t = b;
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "add",
                             [a_t, b_t](const detail::TensorImpl& o) mutable {
                               for (Tensor* t : {&a_t, &b_t}) {
                                 if (!t->requires_grad()) continue;
                                 auto g = t->mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                               }
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  Tensor a_t = a, b_t = b;
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "mul",
                             [a_t, b_t](const detail::TensorImpl& o) mutable {
                               // Read both operands before writing: a and b may alias.
                               const auto x = a_t.data(), y = b_t.data();
                               if (a_t.requires_grad()) {
                                 auto g = a_t.mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * y[i];
                               }
                               if (b_t.requires_grad()) {
                                 auto g = b_t.mutable_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * x[i];
                               }
                             });
}

Tensor mul_channel_broadcast(const Tensor& features, const Tensor& map) {
  require_rank5(features, "mul_channel_broadcast");
  require_rank5(map, "mul_channel_broadcast");
  const Shape& fs = features.shape();
  const Shape& ms = map.shape();
  if (ms[0] != fs[0] || ms[1] != 1 || ms[2] != fs[2] || ms[3] != fs[3] || ms[4] != fs[4]) {
    throw std::invalid_argument("mul_channel_broadcast: map " + shape_str(ms) +
                                " cannot broadcast over features " + shape_str(fs));
  }
  const std::size_t n = fs[0], c = fs[1], v = spatial_size(fs);
  const auto x = features.data(), m = map.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < v; ++k) out[(i * c + ch) * v + k] = x[(i * c + ch) * v + k] * m[i * v + k];
  Tensor f_t = features, m_t = map;
  return Tensor::make_result(fs, std::move(out), {features, map}, "mul_channel_broadcast",
                             [f_t, m_t, n, c, v](const detail::TensorImpl& o) mutable {
                               const auto x = f_t.data(), m = m_t.data();
                               if (f_t.requires_grad()) {
                                 auto g = f_t.mutable_grad();
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t ch = 0; ch < c; ++ch)
                                     for (std::size_t k = 0; k < v; ++k)
                                       g[(i * c + ch) * v + k] += o.grad[(i * c + ch) * v + k] * m[i * v + k];
                               }
                               if (m_t.requires_grad()) {
                                 auto g = m_t.mutable_grad();
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t ch = 0; ch < c; ++ch)
                                     for (std::size_t k = 0; k < v; ++k)
                                       g[i * v + k] += o.grad[(i * c + ch) * v + k] * x[(i * c + ch) * v + k];
                               }
                             });
}

Tensor scale(const Tensor& a, double factor) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  Tensor a_t = a;
  return Tensor::make_result(a.shape(), std::move(out), {a}, "scale",
                             [a_t, factor](const detail::TensorImpl& o) mutable {
                               auto g = a_t.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
                             });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor a_t = a;
  return Tensor::make_result({1}, {s}, {a}, "sum", [a_t](const detail::TensorImpl& o) mutable {
    auto g = a_t.mutable_grad();
    for (auto& gi : g) gi += o.grad[0];
  });
}

}  // namespace mdl
