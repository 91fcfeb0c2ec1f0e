#include "mdl/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mdl {

namespace {

void require_match(const Tensor& probs, const OneHotTarget& target, const char* op) {
  if (probs.shape() != target.shape) {
    throw std::invalid_argument(std::string(op) + ": prediction shape " + shape_str(probs.shape()) +
                                " does not match target shape " + shape_str(target.shape));
  }
  if (probs.rank() < 2) throw std::invalid_argument(std::string(op) + ": needs a class axis");
}

}  // namespace

OneHotTarget OneHotTarget::from_labels(const LabelVolume& labels, std::size_t num_classes) {
  const auto& e = labels.extents;
  const std::size_t v = e.voxels();
  OneHotTarget t;
  t.shape = {1, num_classes, e.d, e.h, e.w};
  t.values.assign(num_classes * v, 0.0);
  for (std::size_t i = 0; i < v; ++i) {
    const std::size_t c = labels.labels[i];
    if (c >= num_classes) throw DataError("label " + std::to_string(c) + " outside the class range");
    t.values[c * v + i] = 1.0;
  }
  return t;
}

Tensor cross_entropy(const Tensor& probs, const OneHotTarget& target, double clamp_floor) {
  require_match(probs, target, "cross_entropy");
  const std::size_t c = probs.dim(1);
  const std::size_t voxels = probs.numel() / c;
  const double norm = 1.0 / static_cast<double>(voxels * c);
  const auto q = probs.data();
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (target.values[i] != 0.0) s += target.values[i] * std::log(std::max(q[i], clamp_floor));
  }
  Tensor q_t = probs;
  std::vector<double> pv = target.values;
  return Tensor::make_result({1}, {-s * norm}, {probs}, "cross_entropy",
                             [q_t, pv = std::move(pv), norm, clamp_floor](const detail::TensorImpl& o) mutable {
                               auto g = q_t.mutable_grad();
                               const auto q = q_t.data();
                               const double go = o.grad[0];
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 if (pv[i] != 0.0 && q[i] > clamp_floor) g[i] -= go * norm * pv[i] / q[i];
                               }
                             });
}

Tensor dice_loss(const Tensor& probs, const OneHotTarget& target, double smooth) {
  require_match(probs, target, "dice_loss");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  const std::size_t v = probs.numel() / (n * c);
  const auto q = probs.data();
  const auto& p = target.values;
  std::vector<double> inter(c, 0.0), denom(c, smooth);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t base = (b * c + k) * v;
      for (std::size_t i = 0; i < v; ++i) {
        inter[k] += p[base + i] * q[base + i];
        denom[k] += p[base + i] * p[base + i] + q[base + i] * q[base + i];
      }
    }
  double ratio_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) ratio_sum += inter[k] / denom[k];
  const double loss = 1.0 - 2.0 / static_cast<double>(c) * ratio_sum;

  Tensor q_t = probs;
  std::vector<double> pv = p;
  return Tensor::make_result(
      {1}, {loss}, {probs}, "dice_loss",
      [q_t, pv = std::move(pv), inter, denom, n, c, v](const detail::TensorImpl& o) mutable {
        auto g = q_t.mutable_grad();
        const auto q = q_t.data();
        const double scale = -2.0 / static_cast<double>(c) * o.grad[0];
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t k = 0; k < c; ++k) {
            const double in = inter[k], de = denom[k];
            const std::size_t base = (b * c + k) * v;
            for (std::size_t i = 0; i < v; ++i) {
              // d/dq [I / D] = p / D - I * 2q / D^2
              g[base + i] += scale * (pv[base + i] / de - in * 2.0 * q[base + i] / (de * de));
            }
          }
      });
}

LabelVolume downsample_label_volume(const LabelVolume& labels, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("downsample factor must be >= 1");
  const auto& e = labels.extents;
  if (e.d % factor || e.h % factor || e.w % factor) {
    throw std::invalid_argument("label extents " + e.str() + " not divisible by factor " + std::to_string(factor));
  }
  if (factor == 1) return labels;
  const Extents out_e{e.d / factor, e.h / factor, e.w / factor};
  LabelVolume out = LabelVolume::filled(out_e, {labels.spacing.d * static_cast<double>(factor),
                                                labels.spacing.h * static_cast<double>(factor),
                                                labels.spacing.w * static_cast<double>(factor)});
  out.orientation = labels.orientation;
  std::array<std::size_t, 256> tally{};
  for (std::size_t z = 0; z < out_e.d; ++z)
    for (std::size_t y = 0; y < out_e.h; ++y)
      for (std::size_t x = 0; x < out_e.w; ++x) {
        tally.fill(0);
        for (std::size_t dz = 0; dz < factor; ++dz)
          for (std::size_t dy = 0; dy < factor; ++dy)
            for (std::size_t dx = 0; dx < factor; ++dx)
              ++tally[labels.at(z * factor + dz, y * factor + dy, x * factor + dx)];
        std::size_t best = 0;
        for (std::size_t k = 1; k < tally.size(); ++k) {
          if (tally[k] > tally[best]) best = k;
        }
        out.labels[out_e.index(z, y, x)] = static_cast<std::uint8_t>(best);
      }
  return out;
}

OneHotTarget downsample_labels(const LabelVolume& labels, std::size_t factor, std::size_t num_classes) {
  return OneHotTarget::from_labels(downsample_label_volume(labels, factor), num_classes);
}

LossTerms deep_supervision_loss(const SegmentationOutput& output, const LabelVolume& labels, double clamp_floor,
                                double smooth) {
  const auto& e = labels.extents;
  std::vector<Tensor> heads{output.main_probs};
  for (const auto& a : output.aux_probs) heads.push_back(a);

  LossTerms terms;
  std::vector<Tensor> parts;
  for (const auto& q : heads) {
    if (q.rank() != 5) throw std::invalid_argument("deep_supervision_loss: head output must be [N,C,D,H,W]");
    const std::size_t qd = q.dim(2), qh = q.dim(3), qw = q.dim(4);
    if (qd == 0 || e.d % qd != 0 || e.h % qh != 0 || e.w % qw != 0 || e.d / qd != e.h / qh || e.d / qd != e.w / qw) {
      throw std::invalid_argument("deep_supervision_loss: head resolution " + shape_str(q.shape()) +
                                  " is not an isotropic integer downsampling of " + e.str());
    }
    const OneHotTarget target = downsample_labels(labels, e.d / qd, q.dim(1));
    Tensor ce = cross_entropy(q, target, clamp_floor);
    Tensor dl = dice_loss(q, target, smooth);
    terms.cross_entropy.push_back(ce.item());
    terms.dice.push_back(dl.item());
    parts.push_back(add(ce, dl));
  }
  Tensor total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  terms.total = total;
  return terms;
}

}  // namespace mdl
