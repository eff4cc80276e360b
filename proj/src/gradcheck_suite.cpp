#include "grm/gradcheck.hpp"

#include "grm/autodiff.hpp"
#include "grm/grporm.hpp"
#include "grm/model.hpp"

#include <cmath>
#include <random>

namespace grm {

namespace {

using ad::Matrix;
using ad::Tape;
using ad::Tensor;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  Matrix uniform(Eigen::Index r, Eigen::Index c, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = d(rng_);
    return m;
  }

  /// Uniform in [lo, hi] but at least `gap` away from every kink.
  Matrix avoiding(Eigen::Index r, Eigen::Index c, double lo, double hi,
                  std::vector<double> kinks, double gap = 1e-3) {
    Matrix m = uniform(r, c, lo, hi);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      for (double k : kinks) {
        if (std::abs(m(i) - k) < gap) m(i) = k + (m(i) < k ? -gap : gap) * 2.0;
      }
    }
    return m;
  }

  int index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// sum(op(x) * weights) so every output coordinate carries a distinct weight.
Tensor weighted(Tape& tape, const Tensor& y, const Matrix& w) {
  return ad::sum_all(ad::mul(y, tape.constant(w)));
}

struct ModelCase {
  Architecture arch;
  ModelParams old_params;
  ModelParams params;
  Matrix inputs;
  std::vector<int> labels;  // at output resolution
};

ModelCase make_model_case(TaskKind task, Sampler& s, std::uint64_t seed) {
  ModelCase mc;
  mc.arch.task = task;
  mc.arch.input_dim = 2;
  mc.arch.classes = 4;
  if (task == TaskKind::Classification) {
    mc.arch.hidden = 8;  // 2 -> 8 -> 4
    mc.inputs = s.uniform(4, 2, -1.0, 1.0);
  } else {
    mc.arch.encoder_widths = {8};  // per cell 2 -> 8 -> 4, 2x2 grid upsampled x2
    mc.arch.grid_h = 2;
    mc.arch.grid_w = 2;
    mc.arch.upsample = 2;
    mc.inputs = s.uniform(4 * 2 * 2, 2, -1.0, 1.0);
  }
  mc.old_params = init_params(seed, mc.arch);
  for (auto& l : mc.old_params.layers) l.bias = s.uniform(1, l.bias.cols(), -0.1, 0.1);
  mc.params = mc.old_params;
  for (auto& l : mc.params.layers) {
    l.weight += s.uniform(l.weight.rows(), l.weight.cols(), -0.05, 0.05);
    l.bias += s.uniform(1, l.bias.cols(), -0.05, 0.05);
  }
  const Eigen::Index groups =
      task == TaskKind::Classification ? 4 : 4 * 4 * 4;
  for (Eigen::Index g = 0; g < groups; ++g) mc.labels.push_back(s.index(4));
  return mc;
}

std::vector<Matrix> flatten_points(const ModelParams& p) {
  std::vector<Matrix> pts;
  for (const auto& l : p.layers) {
    pts.push_back(l.weight);
    pts.push_back(l.bias);
  }
  return pts;
}

BoundParams from_leaves(std::span<const Tensor> leaves) {
  BoundParams b;
  for (std::size_t i = 0; i + 1 < leaves.size(); i += 2) {
    b.weights.push_back(leaves[i]);
    b.biases.push_back(leaves[i + 1]);
  }
  return b;
}

double check_grpo(TaskKind task, RewardMode mode, Sampler& s) {
  ModelCase mc = make_model_case(task, s, 11);
  SurrogateConfig cfg;
  cfg.reward_mode = mode;
  cfg.background_punishment = task == TaskKind::Segmentation;
  const Matrix old_p = task == TaskKind::Classification
                           ? class_probs(mc.old_params, mc.inputs)
                           : seg_probs(mc.old_params, mc.inputs);
  const Matrix adv = group_advantages(old_p, mc.labels, cfg);
  const auto points = flatten_points(mc.params);
  ad::ScalarFn f = [&](Tape& tape, std::span<const Tensor> leaves) {
    const BoundParams bound = from_leaves(leaves);
    const Tensor x = tape.constant(mc.inputs);
    const Tensor p = task == TaskKind::Classification ? class_probs(mc.arch, bound, x)
                                                      : seg_probs(mc.arch, bound, x);
    return grpo_loss(p, old_p, adv, cfg);
  };
  return ad::check_gradients(f, points);
}

double check_ce(TaskKind task, Sampler& s) {
  ModelCase mc = make_model_case(task, s, 13);
  const auto points = flatten_points(mc.params);
  ad::ScalarFn f = [&](Tape& tape, std::span<const Tensor> leaves) {
    const BoundParams bound = from_leaves(leaves);
    return ce_loss(logits(mc.arch, bound, tape.constant(mc.inputs)), mc.labels);
  };
  return ad::check_gradients(f, points);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(double threshold, std::uint64_t seed) {
  Sampler s(seed);
  std::vector<GradCheckCase> out;
  auto record = [&](std::string name, double err) {
    out.push_back({std::move(name), err, err < threshold});
  };

  const Matrix w34 = s.uniform(3, 4, -1.0, 1.0);
  const Matrix w33 = s.uniform(3, 3, -1.0, 1.0);

  {
    std::vector<Matrix> pts{s.uniform(3, 5, -1, 1), s.uniform(5, 4, -1, 1)};
    ad::ScalarFn f = [&](Tape& t, std::span<const Tensor> x) {
      return weighted(t, ad::matmul(x[0], x[1]), w34);
    };
    record("matmul", ad::check_gradients(f, pts));
  }
  {
    std::vector<Matrix> pts{s.uniform(3, 4, -1, 1), s.uniform(1, 4, -1, 1)};
    ad::ScalarFn f = [&](Tape& t, std::span<const Tensor> x) {
      return weighted(t, ad::add(x[0], x[1]), w34);
    };
    record("add", ad::check_gradients(f, pts));
  }
  {
    std::vector<Matrix> pts{s.uniform(3, 4, -1, 1), s.uniform(3, 4, -1, 1)};
    ad::ScalarFn f = [&](Tape& t, std::span<const Tensor> x) {
      return weighted(t, ad::mul(x[0], x[1]), w34);
    };
    record("mul", ad::check_gradients(f, pts));
  }
  {
    std::vector<Matrix> pts{s.uniform(3, 4, -1, 1), s.uniform(3, 4, 0.5, 2.0)};
    ad::ScalarFn f = [&](Tape& t, std::span<const Tensor> x) {
      return weighted(t, ad::div(x[0], x[1]), w34);
    };
    record("div", ad::check_gradients(f, pts));
  }
  auto unary = [&](std::string name, Matrix point, auto op) {
    auto f = [&](Tape& t, const Tensor& x) { return weighted(t, op(x), w34); };
    record(std::move(name), ad::check_gradients(f, point));
  };
  unary("scale", s.uniform(3, 4, -1, 1), [](const Tensor& x) { return ad::scale(x, -2.5); });
  unary("relu", s.avoiding(3, 4, -1, 1, {0.0}), [](const Tensor& x) { return ad::relu(x); });
  unary("log", s.uniform(3, 4, 0.2, 3.0), [](const Tensor& x) { return ad::log(x); });
  unary("exp", s.uniform(3, 4, -2, 2), [](const Tensor& x) { return ad::exp(x); });
  unary("softmax_rows", s.uniform(3, 4, -2, 2),
        [](const Tensor& x) { return ad::softmax_rows(x); });
  unary("log_softmax_rows", s.uniform(3, 4, -2, 2),
        [](const Tensor& x) { return ad::log_softmax_rows(x); });
  unary("clamp", s.avoiding(3, 4, 0.5, 1.5, {0.8, 1.2}),
        [](const Tensor& x) { return ad::clamp(x, 0.8, 1.2); });
  {
    Matrix a = s.uniform(3, 4, -1, 1);
    Matrix b = s.uniform(3, 4, -1, 1);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      if (std::abs(a(i) - b(i)) < 1e-3) b(i) += 0.01;
    }
    std::vector<Matrix> pts{a, b};
    ad::ScalarFn f = [&](Tape& t, std::span<const Tensor> x) {
      return weighted(t, ad::pairwise_min(x[0], x[1]), w34);
    };
    record("pairwise_min", ad::check_gradients(f, pts));
  }
  {
    const std::vector<int> cols{2, 0, 3};
    const Matrix w = s.uniform(3, 1, -1, 1);
    auto f = [&](Tape& t, const Tensor& x) { return weighted(t, ad::gather_cols(x, cols), w); };
    record("gather_cols", ad::check_gradients(f, s.uniform(3, 4, -1, 1)));
  }
  {
    const std::vector<Eigen::Index> rows{1, 1, 0};
    auto f = [&](Tape& t, const Tensor& x) { return weighted(t, ad::gather_rows(x, rows), w33); };
    record("gather_rows", ad::check_gradients(f, s.uniform(2, 3, -1, 1)));
  }
  {
    auto f = [&](Tape& t, const Tensor& x) {
      return ad::mean_all(ad::mul(x, t.constant(w34)));
    };
    record("mean_all", ad::check_gradients(f, s.uniform(3, 4, -1, 1)));
  }
  {
    auto f = [&](Tape&, const Tensor& x) { return ad::sum_all(ad::exp(x)); };
    record("sum_all", ad::check_gradients(f, s.uniform(3, 4, -1, 1)));
  }

  for (TaskKind task : {TaskKind::Classification, TaskKind::Segmentation}) {
    for (RewardMode mode :
         {RewardMode::AccuracyOnly, RewardMode::Uniformity, RewardMode::AltUniformity}) {
      record("grpo_loss/" + std::string(task_name(task)) + "/" +
                 std::string(reward_mode_name(mode)),
             check_grpo(task, mode, s));
    }
    record("ce_loss/" + std::string(task_name(task)), check_ce(task, s));
  }
  return out;
}

}  // namespace grm
