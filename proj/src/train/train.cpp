#include "mdl/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>

#include "mdl/csv.hpp"
#include "mdl/preprocess.hpp"

namespace mdl {

namespace {

double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in (0, 1)");
  }
  if (!(epsilon > 0.0) || !(clamp_floor > 0.0) || !(dice_smooth > 0.0)) {
    throw std::invalid_argument("epsilon, clamp_floor and dice_smooth must be > 0");
  }
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (ensemble_size == 0) throw std::invalid_argument("ensemble_size must be >= 1");
}

void adam_step(std::span<Tensor> params, std::span<const std::string> names, AdamState& state,
               const TrainConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("Adam state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel()) {
      throw std::invalid_argument("Adam moment shape mismatch for parameter " + std::to_string(i));
    }
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) {
        const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw std::runtime_error("non-finite gradient in parameter " + name);
      }
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    const auto g = params[i].grad();
    if (g.empty()) continue;  // never reached by the loss: zero gradient
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

Sample make_sample(std::string id, const VolumeGrid& raw, LabelVolume labels) {
  if (!(raw.extents == labels.extents)) {
    throw DataError("sample " + id + ": volume extents " + raw.extents.str() + " differ from label extents " +
                    labels.extents.str());
  }
  labels.validate();
  return {std::move(id), volume_tensor(standardize(raw)), std::move(labels)};
}

EpochRecord evaluate_loss(const Model& model, const std::vector<Sample>& set, const TrainConfig& cfg) {
  EpochRecord r;
  if (set.empty()) return r;
  NoGradGuard guard;
  double total = 0.0, ce = 0.0, dice = 0.0;
  for (const auto& s : set) {
    const auto out = model.forward(s.volume, Mode::eval);
    const auto terms = deep_supervision_loss(out, s.labels, cfg.clamp_floor, cfg.dice_smooth);
    total += terms.total.item();
    ce += sum_of(terms.cross_entropy);
    dice += sum_of(terms.dice);
  }
  const auto n = static_cast<double>(set.size());
  r.val_loss = total / n;
  r.val_ce = ce / n;
  r.val_dice = dice / n;
  return r;
}

TrainResult train(const NetworkConfig& net, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  Model model = build_model(net);
  std::vector<Tensor> params = model.trainable_parameters();
  const std::vector<std::string> names = model.trainable_names();
  AdamState adam;
  std::mt19937_64 rng(cfg.seed);

  const bool track_best = cfg.selection == Selection::best_validation && !val_set.empty();
  std::optional<Model> best;
  double best_val = std::numeric_limits<double>::infinity();

  TrainResult result{Model(net), {}, 0};
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t idx : order) {
      const Sample& s = train_set[idx];
      for (auto& p : params) p.zero_grad();
      const auto out = model.forward(s.volume, Mode::train);
      const auto terms = deep_supervision_loss(out, s.labels, cfg.clamp_floor, cfg.dice_smooth);
      const double loss = terms.total.item();
      if (!std::isfinite(loss)) {
        throw DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch) + " on volume " + s.id);
      }
      backward(terms.total);
      try {
        adam_step(params, names, adam, cfg);
      } catch (const std::runtime_error& e) {
        throw DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch) + " on volume " + s.id +
                                         ": " + e.what());
      }
      rec.train_loss += loss;
      rec.train_ce += sum_of(terms.cross_entropy);
      rec.train_dice += sum_of(terms.dice);
    }
    const auto n = static_cast<double>(train_set.size());
    rec.train_loss /= n;
    rec.train_ce /= n;
    rec.train_dice /= n;
    if (!val_set.empty()) {
      const EpochRecord v = evaluate_loss(model, val_set, cfg);
      rec.val_loss = v.val_loss;
      rec.val_ce = v.val_ce;
      rec.val_dice = v.val_dice;
      if (!std::isfinite(rec.val_loss)) {
        throw DivergenceError(epoch, "validation loss diverged at epoch " + std::to_string(epoch));
      }
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (track_best && rec.val_loss < best_val) {
      best_val = rec.val_loss;
      if (!best) best.emplace(model.clone());
      else best->copy_values_from(model);
      result.selected_epoch = epoch;
    }
  }
  if (track_best) {
    result.model = std::move(*best);
  } else {
    result.model = std::move(model);
    result.selected_epoch = cfg.epochs - 1;
  }
  return result;
}

std::vector<TrainResult> train_ensemble(const NetworkConfig& net, const std::vector<Sample>& train_set,
                                        const std::vector<Sample>& val_set, const TrainConfig& cfg,
                                        const EpochCallback& on_epoch) {
  std::vector<TrainResult> members;
  for (std::size_t k = 0; k < cfg.ensemble_size; ++k) {
    NetworkConfig member = net;
    member.seed = net.seed + k;
    TrainConfig member_cfg = cfg;
    member_cfg.seed = cfg.seed + k;
    members.push_back(train(member, train_set, val_set, member_cfg, on_epoch));
  }
  return members;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"epoch", "train_loss", "val_loss", "train_ce", "train_dice", "val_ce", "val_dice"};
  for (const auto& r : history) {
    t.rows.push_back({std::to_string(r.epoch), csv::format(r.train_loss), csv::format(r.val_loss),
                      csv::format(r.train_ce), csv::format(r.train_dice), csv::format(r.val_ce),
                      csv::format(r.val_dice)});
  }
  csv::write(t, path);
}

}  // namespace mdl
