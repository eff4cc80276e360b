#pragma once

// Snapshot-per-epoch GRPO-RM training, the cross-entropy baseline, Adam, and
// the batch-size-scaled cosine learning-rate schedule.

#include "grm/data.hpp"
#include "grm/grporm.hpp"
#include "grm/model.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace grm {

struct TrainConfig {
  TaskKind task = TaskKind::Classification;
  int epochs = 100;
  int batch_size = 1024;
  /// Learning-rate endpoints before the m/256 batch scaling.
  double lr_start_base = 1e-3;
  double lr_end_base = 1e-5;
  double epsilon = 0.2;
  double beta = 0.0;
  double weight_decay = 0.0;
  RewardMode reward_mode = RewardMode::Uniformity;
  double std_guard = 1e-8;
  bool background_punishment = true;  // segmentation only
  std::uint64_t init_seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t shuffle_seed = 0;

  /// Segmentation defaults: 1e-5 -> 1e-7 before scaling.
  static TrainConfig segmentation_defaults();

  void validate() const;
  SurrogateConfig surrogate() const;
};

/// Cosine decay from lr_start_base*m/256 at epoch 0 to lr_end_base*m/256 at
/// the final epoch.
double effective_lr(double lr_start_base, double lr_end_base, int batch_size,
                    int epoch, int epochs);

struct AdamState {
  ParamGrads first;
  ParamGrads second;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam with coupled L2 weight decay (0 unless configured).
void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state,
               double lr, double weight_decay = 0.0);

double grad_norm(const ParamGrads& grads);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double wall_time_s = 0.0;
  double lr = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::string reward_mode;
};

struct RunLog {
  std::string method;
  std::vector<EpochRecord> records;

  double mean_epoch_time() const;
};

/// Emitted after every optimisation step.
struct BatchEvent {
  int epoch = 0;
  int batch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  /// Checksum of the epoch snapshot when it was taken, and whether it still matches.
  std::uint64_t snapshot_checksum = 0;
  bool snapshot_intact = true;
};

using BatchObserver = std::function<void(const BatchEvent&)>;

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams model;
  RunLog log;
};

TrainResult train_grporm(const TrainConfig& cfg, ModelParams model,
                         const ClassDataset& train, const ClassDataset& test,
                         const BatchObserver& observer = {});
TrainResult train_grporm(const TrainConfig& cfg, ModelParams model,
                         const SegDataset& train, const SegDataset& test,
                         const BatchObserver& observer = {});

TrainResult train_baseline(const TrainConfig& cfg, ModelParams model,
                           const ClassDataset& train, const ClassDataset& test,
                           const BatchObserver& observer = {});
TrainResult train_baseline(const TrainConfig& cfg, ModelParams model,
                           const SegDataset& train, const SegDataset& test,
                           const BatchObserver& observer = {});

/// Ground-truth labels at the model's output resolution (masks replicated by
/// the architecture's upsample factor).
std::vector<int> seg_targets(const SegDataset& ds, int upsample);

double accuracy(const ModelParams& model, const ClassDataset& ds);
double pixel_accuracy(const ModelParams& model, const SegDataset& ds);

}  // namespace grm
