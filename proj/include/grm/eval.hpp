#pragma once

// Frozen-feature evaluation: softmax-regression probe, kNN, segmentation
// metrics, and convergence-curve export.

#include "grm/data.hpp"
#include "grm/model.hpp"
#include "grm/train.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace grm {

/// Probe learning rates are not given by the method; these defaults are sized
/// so a few hundred samples converge within the 50 epochs.
struct ProbeConfig {
  int epochs = 50;
  int hidden = 256;
  int batch_size = 64;
  double lr_start_base = 1e-2;
  double lr_end_base = 1e-4;
  std::uint64_t seed = 0;
};

/// Trains a freshly initialised two-layer head with cross-entropy on the
/// train rows of `features` and returns accuracy on the test rows.
double sr_probe(const Matrix& features, const std::vector<int>& labels, int classes,
                const Split& split, const ProbeConfig& cfg);

/// L2-normalised Euclidean kNN with majority vote. Vote ties go to the class
/// with the larger summed inverse distance, then to the smaller class index.
int knn_predict(const Matrix& train_emb, const std::vector<int>& train_labels,
                const Eigen::RowVectorXd& query, int k);
double knn_accuracy(const Matrix& train_emb, const std::vector<int>& train_labels,
                    const Matrix& test_emb, const std::vector<int>& test_labels,
                    int k = 5);

struct SegMetrics {
  double pixel_accuracy = 0.0;
  /// Per-class IoU; nullopt for classes absent from both prediction and truth.
  std::vector<std::optional<double>> class_iou;
  double miou = 0.0;
  /// IoU weighted by ground-truth class frequency.
  double iou = 0.0;
};

SegMetrics seg_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                       int classes);

struct MetricsReport {
  TaskKind task = TaskKind::Classification;
  std::optional<double> sr_accuracy;
  std::optional<double> knn_accuracy;
  std::optional<SegMetrics> segmentation;
  int probe_epochs = 0;
  std::uint64_t probe_seed = 0;
};

/// Classification report for a trained encoder: SR probe on the split's train
/// rows, kNN from train to test rows.
MetricsReport evaluate_classification(const ModelParams& model, const ClassDataset& ds,
                                      const Split& split, const ProbeConfig& probe,
                                      int knn_k = 5, bool run_sr = true,
                                      bool run_knn = true);
MetricsReport evaluate_segmentation(const ModelParams& model, const SegDataset& test);

struct NamedRunLog {
  std::string method;
  RunLog log;
};

/// CSV: method,epoch,loss,lr,accuracy,wall_time_s (accuracy = test accuracy).
std::string export_curves(const std::vector<NamedRunLog>& runs);
std::vector<NamedRunLog> parse_curves(const std::string& csv);

/// Deterministic per-epoch series (no wall time):
/// epoch,loss,lr,train_accuracy,test_accuracy,reward_mode
std::string metrics_csv(const RunLog& log);

}  // namespace grm
