#include "grm/model.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

namespace grm {

std::string_view task_name(TaskKind task) {
  return task == TaskKind::Classification ? "classification" : "segmentation";
}

TaskKind parse_task(std::string_view name) {
  if (name == "classification") return TaskKind::Classification;
  if (name == "segmentation") return TaskKind::Segmentation;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

void Architecture::validate() const {
  auto positive = [](int v, const char* field) {
    if (v <= 0) {
      throw std::invalid_argument(std::string("architecture: ") + field +
                                  " must be positive, got " + std::to_string(v));
    }
  };
  positive(input_dim, "input_dim");
  for (int w : encoder_widths) positive(w, "encoder width");
  if (task == TaskKind::Classification) positive(hidden, "hidden");
  positive(classes, "classes");
  if (classes < 2) throw std::invalid_argument("architecture: classes must be >= 2");
  positive(upsample, "upsample");
  if (task == TaskKind::Segmentation) {
    positive(grid_h, "grid_h");
    positive(grid_w, "grid_w");
  }
}

int Architecture::feature_dim() const {
  return encoder_widths.empty() ? input_dim : encoder_widths.back();
}

std::vector<std::pair<int, int>> Architecture::layer_shapes() const {
  std::vector<std::pair<int, int>> shapes;
  int fan_in = input_dim;
  for (int w : encoder_widths) {
    shapes.emplace_back(fan_in, w);
    fan_in = w;
  }
  if (task == TaskKind::Classification) {
    shapes.emplace_back(fan_in, hidden);
    shapes.emplace_back(hidden, classes);
  } else {
    shapes.emplace_back(fan_in, classes);
  }
  return shapes;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::uint64_t ModelParams::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Matrix& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& l : layers) {
    mix(l.weight);
    mix(l.bias);
  }
  return h;
}

ModelParams init_params(std::uint64_t seed, const Architecture& arch) {
  arch.validate();
  ModelParams params;
  params.arch = arch;
  std::mt19937_64 rng(seed);
  for (auto [fan_in, fan_out] : arch.layer_shapes()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer;
    layer.weight.resize(fan_in, fan_out);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight(i) = dist(rng);
    }
    layer.bias = Matrix::Zero(1, fan_out);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool trainable) {
  BoundParams bound;
  for (const auto& l : params.layers) {
    bound.weights.push_back(tape.leaf(l.weight, trainable));
    bound.biases.push_back(tape.leaf(l.bias, trainable));
  }
  return bound;
}

ParamGrads gradients(const BoundParams& bound) {
  ParamGrads grads(bound.weights.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    grads[i].weight = bound.weights[i].grad();
    grads[i].bias = bound.biases[i].grad();
  }
  return grads;
}

namespace {

ad::Tensor linear(const BoundParams& bound, std::size_t i, const ad::Tensor& x) {
  return ad::add(ad::matmul(x, bound.weights[i]), bound.biases[i]);
}

void check_input(const Architecture& arch, const ad::Tensor& input) {
  if (input.cols() != arch.input_dim) {
    throw ad::ShapeError("model input has " + std::to_string(input.cols()) +
                         " features, architecture expects " +
                         std::to_string(arch.input_dim));
  }
}

}  // namespace

ad::Tensor encode(const Architecture& arch, const BoundParams& bound,
                  const ad::Tensor& input) {
  check_input(arch, input);
  ad::Tensor x = input;
  for (std::size_t i = 0; i < arch.encoder_widths.size(); ++i) {
    x = ad::relu(linear(bound, i, x));
  }
  return x;
}

ad::Tensor head_logits(const Architecture& arch, const BoundParams& bound,
                       const ad::Tensor& features) {
  const auto first = arch.encoder_widths.size();
  if (arch.task == TaskKind::Classification) {
    ad::Tensor h = ad::relu(linear(bound, first, features));
    return linear(bound, first + 1, h);
  }
  return linear(bound, first, features);
}

ad::Tensor logits(const Architecture& arch, const BoundParams& bound,
                  const ad::Tensor& input) {
  ad::Tensor scores = head_logits(arch, bound, encode(arch, bound, input));
  if (arch.task == TaskKind::Segmentation && arch.upsample != 1) {
    const Eigen::Index cells_per_image =
        static_cast<Eigen::Index>(arch.grid_h) * arch.grid_w;
    if (input.rows() % cells_per_image != 0) {
      throw ad::ShapeError("segmentation input rows not a multiple of grid size");
    }
    const auto idx = upsample_index(static_cast<int>(input.rows() / cells_per_image),
                                    arch.grid_h, arch.grid_w, arch.upsample);
    scores = ad::gather_rows(scores, idx);
  }
  return scores;
}

ad::Tensor class_probs(const Architecture& arch, const BoundParams& bound,
                       const ad::Tensor& batch) {
  return ad::softmax_rows(head_logits(arch, bound, encode(arch, bound, batch)));
}

ad::Tensor seg_probs(const Architecture& arch, const BoundParams& bound,
                     const ad::Tensor& cells) {
  check_input(arch, cells);
  const Eigen::Index cells_per_image =
      static_cast<Eigen::Index>(arch.grid_h) * arch.grid_w;
  if (cells.rows() % cells_per_image != 0) {
    throw ad::ShapeError("segmentation input has " + std::to_string(cells.rows()) +
                         " rows, not a multiple of the " +
                         std::to_string(arch.grid_h) + "x" +
                         std::to_string(arch.grid_w) + " grid");
  }
  ad::Tensor probs =
      ad::softmax_rows(head_logits(arch, bound, encode(arch, bound, cells)));
  if (arch.upsample == 1) return probs;
  const auto idx = upsample_index(static_cast<int>(cells.rows() / cells_per_image),
                                  arch.grid_h, arch.grid_w, arch.upsample);
  return ad::gather_rows(probs, idx);
}

std::vector<Eigen::Index> upsample_index(int images, int grid_h, int grid_w,
                                         int factor) {
  if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
  const int out_h = grid_h * factor;
  const int out_w = grid_w * factor;
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(images) * out_h * out_w);
  for (int n = 0; n < images; ++n) {
    const Eigen::Index base = static_cast<Eigen::Index>(n) * grid_h * grid_w;
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        idx.push_back(base + static_cast<Eigen::Index>(y / factor) * grid_w +
                      x / factor);
      }
    }
  }
  return idx;
}

Matrix encode(const ModelParams& params, const Matrix& input) {
  ad::Tape tape;
  auto bound = bind(tape, params, false);
  return encode(params.arch, bound, tape.constant(input)).value();
}

Matrix class_probs(const ModelParams& params, const Matrix& batch) {
  ad::Tape tape;
  auto bound = bind(tape, params, false);
  return class_probs(params.arch, bound, tape.constant(batch)).value();
}

Matrix seg_probs(const ModelParams& params, const Matrix& cells) {
  ad::Tape tape;
  auto bound = bind(tape, params, false);
  return seg_probs(params.arch, bound, tape.constant(cells)).value();
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index best = 0;
    probs.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

PolicySnapshot::PolicySnapshot(const ModelParams& params, int epoch_taken)
    : params_(params), epoch_taken_(epoch_taken), checksum_(params_.checksum()) {}

Matrix PolicySnapshot::class_probs(const Matrix& batch) const {
  return grm::class_probs(params_, batch);
}

Matrix PolicySnapshot::seg_probs(const Matrix& cells) const {
  return grm::seg_probs(params_, cells);
}

BoundParams PolicySnapshot::bind(ad::Tape& tape) const {
  return grm::bind(tape, params_, false);
}

PolicySnapshot snapshot(const ModelParams& params, int epoch) {
  return PolicySnapshot(params, epoch);
}

}  // namespace grm
