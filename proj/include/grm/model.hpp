#pragma once

// MLP encoder plus task heads.
//
// Classification: encoder -> Linear(feature, hidden) -> ReLU -> Linear(hidden, c)
// Segmentation:   per-cell encoder -> Linear(feature, c) -> nearest upsample
//
// Segmentation inputs are flattened to rows in (image, y, x) order, one row
// per cell. Class index 0 is the background class.

#include "grm/autodiff.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace grm {

using Matrix = Eigen::MatrixXd;

enum class TaskKind { Classification, Segmentation };

std::string_view task_name(TaskKind task);
TaskKind parse_task(std::string_view name);

inline constexpr int kBackgroundClass = 0;

struct Architecture {
  TaskKind task = TaskKind::Classification;
  int input_dim = 0;
  /// Output widths of the encoder layers; empty means the raw input is the
  /// feature vector.
  std::vector<int> encoder_widths;
  /// Hidden width of the two-layer classification head (unused for segmentation).
  int hidden = 256;
  int classes = 0;
  /// Segmentation only: cells per side of each upsampled block.
  int upsample = 1;
  /// Segmentation only: cell grid of one image.
  int grid_h = 0;
  int grid_w = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  int feature_dim() const;
  int encoder_layers() const { return static_cast<int>(encoder_widths.size()); }
  /// (fan_in, fan_out) for every layer, encoder first.
  std::vector<std::pair<int, int>> layer_shapes() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Layer {
  Matrix weight;  // fan_in x fan_out
  Matrix bias;    // 1 x fan_out
};

using ParamGrads = std::vector<Layer>;

struct ModelParams {
  Architecture arch;
  std::vector<Layer> layers;

  std::size_t parameter_count() const;
  /// FNV-1a over the raw parameter bytes in layer order.
  std::uint64_t checksum() const;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
ModelParams init_params(std::uint64_t seed, const Architecture& arch);

/// ModelParams bound to a tape as leaves.
struct BoundParams {
  std::vector<ad::Tensor> weights;
  std::vector<ad::Tensor> biases;
};

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool trainable);
ParamGrads gradients(const BoundParams& bound);

// Differentiable forward passes.
ad::Tensor encode(const Architecture& arch, const BoundParams& bound,
                  const ad::Tensor& input);
ad::Tensor head_logits(const Architecture& arch, const BoundParams& bound,
                       const ad::Tensor& features);
/// Pre-softmax scores; segmentation scores are already upsampled.
ad::Tensor logits(const Architecture& arch, const BoundParams& bound,
                  const ad::Tensor& input);
ad::Tensor class_probs(const Architecture& arch, const BoundParams& bound,
                       const ad::Tensor& batch);
ad::Tensor seg_probs(const Architecture& arch, const BoundParams& bound,
                     const ad::Tensor& cells);

/// Row indices that replicate a (images x grid_h x grid_w) cell grid into its
/// nearest-neighbour upsampled grid of (u*grid_h) x (u*grid_w).
std::vector<Eigen::Index> upsample_index(int images, int grid_h, int grid_w,
                                         int factor);

// Gradient-free evaluation.
Matrix encode(const ModelParams& params, const Matrix& input);
Matrix class_probs(const ModelParams& params, const Matrix& batch);
Matrix seg_probs(const ModelParams& params, const Matrix& cells);
std::vector<int> argmax_rows(const Matrix& probs);

/// Frozen copy of a model. Its forward passes never record trainable leaves.
class PolicySnapshot {
 public:
  PolicySnapshot(const ModelParams& params, int epoch_taken);

  const ModelParams& params() const { return params_; }
  int epoch_taken() const { return epoch_taken_; }
  std::uint64_t checksum_at_copy() const { return checksum_; }
  bool intact() const { return params_.checksum() == checksum_; }

  Matrix class_probs(const Matrix& batch) const;
  Matrix seg_probs(const Matrix& cells) const;
  /// Binds the frozen parameters as constants on `tape`.
  BoundParams bind(ad::Tape& tape) const;

 private:
  ModelParams params_;
  int epoch_taken_;
  std::uint64_t checksum_;
};

PolicySnapshot snapshot(const ModelParams& params, int epoch);

}  // namespace grm
