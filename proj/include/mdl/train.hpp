#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mdl/loss.hpp"
#include "mdl/network.hpp"

namespace mdl {

enum class Selection { best_validation, last_epoch };

struct TrainConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 300;
  std::uint64_t seed = 0;
  std::size_t ensemble_size = 3;
  double clamp_floor = kDefaultClampFloor;
  double dice_smooth = kDefaultDiceSmooth;
  Selection selection = Selection::best_validation;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update over `params` using their accumulated
/// gradients. Throws std::runtime_error naming the first parameter whose
/// gradient is not finite; nothing is modified in that case.
void adam_step(std::span<Tensor> params, std::span<const std::string> names, AdamState& state,
               const TrainConfig& cfg);

/// A standardized training volume with its labels.
struct Sample {
  std::string id;
  Tensor volume;  // [1,1,D,H,W]
  LabelVolume labels;
};

/// Standardizes the intensities and packages them for the network.
Sample make_sample(std::string id, const VolumeGrid& raw, LabelVolume labels);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_ce = 0.0;
  double train_dice = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_ce = std::numeric_limits<double>::quiet_NaN();
  double val_dice = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::size_t selected_epoch = 0;
};

/// Raised when the loss or a gradient becomes non-finite; carries the epoch index.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Epochs x volumes with batch size 1. With Selection::best_validation and a
/// non-empty validation set the returned parameters are those of the epoch
/// with the lowest validation loss; otherwise those of the final epoch.
TrainResult train(const NetworkConfig& net, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Evaluation-mode loss over a set, averaged per volume.
EpochRecord evaluate_loss(const Model& model, const std::vector<Sample>& set, const TrainConfig& cfg);

/// Member k is trained from network seed net.seed + k.
std::vector<TrainResult> train_ensemble(const NetworkConfig& net, const std::vector<Sample>& train_set,
                                        const std::vector<Sample>& val_set, const TrainConfig& cfg,
                                        const EpochCallback& on_epoch = {});

/// epoch,train_loss,val_loss,train_ce,train_dice,val_ce,val_dice
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace mdl
