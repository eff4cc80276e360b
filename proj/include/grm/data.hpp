#pragma once

// Synthetic generators and small-file loaders.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace grm {

using Matrix = Eigen::MatrixXd;

/// Malformed input files or impossible generator arguments.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClassDataset {
  Matrix inputs;            // N x d
  std::vector<int> labels;  // N, in [0, classes)
  int classes = 0;
  std::string name;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }
  /// Throws DataError when row counts disagree, labels are out of range, or
  /// a class has no sample.
  void validate() const;
};

/// Segmentation grids flattened to one row per cell in (image, y, x) order.
struct SegDataset {
  int images = 0;
  int height = 0;
  int width = 0;
  int classes = 0;
  Matrix cells;            // (images * height * width) x d
  std::vector<int> masks;  // images * height * width, background = 0

  Eigen::Index cells_per_image() const {
    return static_cast<Eigen::Index>(height) * width;
  }
  Eigen::Index dim() const { return cells.cols(); }
  double background_fraction() const;
  void validate() const;
};

ClassDataset gen_blobs(std::uint64_t seed, int classes, int n_per_class, int dim,
                       double spread);

struct ShapesOptions {
  int classes = 4;
  int height = 16;
  int width = 16;
  int images = 100;
  double bg_fraction = 0.8;
  double noise = 0.3;
};

SegDataset gen_shapes_seg(std::uint64_t seed, const ShapesOptions& opts);

/// IDX image file (magic 2051) + IDX label file (magic 2049).
ClassDataset load_idx(const std::filesystem::path& images,
                      const std::filesystem::path& labels);
/// CSV with a header; the "label" column is the class, the rest are features.
ClassDataset load_csv(const std::filesystem::path& path);

/// Binary grid file written by `save_grid`; layout documented in docs/formats.md.
SegDataset load_grid(const std::filesystem::path& path);
void save_grid(const SegDataset& ds, const std::filesystem::path& path);
std::string blobs_csv(const ClassDataset& ds);

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};

/// Stratified seeded split; every class with >= 2 samples lands in both halves.
Split split(const ClassDataset& ds, double test_frac, std::uint64_t seed);
ClassDataset subset(const ClassDataset& ds, const std::vector<int>& rows);
SegDataset subset(const SegDataset& ds, const std::vector<int>& images);

/// Deterministic per-(seed, epoch) shuffled index batches; last short batch kept.
std::vector<std::vector<int>> batches(Eigen::Index n, int batch_size,
                                      std::uint64_t seed, int epoch);

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows);
std::vector<int> gather(const std::vector<int>& v, const std::vector<int>& idx);

/// Hex FNV-1a over inputs and labels.
std::string fingerprint(const ClassDataset& ds);
std::string fingerprint(const SegDataset& ds);

}  // namespace grm
