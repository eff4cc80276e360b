#pragma once

// Group-relative rewards, advantages, and the clipped surrogate objective for
// a fixed candidate set: every input is a question whose c possible answers
// are the c classes, and the softmax head supplies the group distribution.

#include "grm/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace grm {

enum class RewardMode {
  AccuracyOnly,  // r = r_acc
  Uniformity,    // r = r_acc - p
  AltUniformity, // r = r_acc + asymmetric uniformity term
};

std::string_view reward_mode_name(RewardMode mode);
RewardMode parse_reward_mode(std::string_view name);

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct RewardVector {
  Vec<Scalar> values;
  int correct = 0;
  RewardMode mode = RewardMode::AccuracyOnly;

  Eigen::Index size() const { return values.size(); }
};

using RewardVectorXd = RewardVector<double>;
using AdvantageVectorXd = Vec<double>;

struct SurrogateConfig {
  double epsilon = 0.2;
  double beta = 0.0;  // KL weight; must stay 0, there is no reference model
  RewardMode reward_mode = RewardMode::Uniformity;
  bool background_punishment = false;
  double std_guard = 1e-8;

  void validate() const;
};

namespace detail {

inline void check_group(Eigen::Index c, int k) {
  if (c < 2) {
    throw std::invalid_argument("reward group needs at least 2 outputs, got " +
                                std::to_string(c));
  }
  if (k < 0 || k >= c) {
    throw std::out_of_range("correct index " + std::to_string(k) +
                            " outside [0, " + std::to_string(c) + ")");
  }
}

template <typename Derived>
void check_distribution(const Eigen::MatrixBase<Derived>& p) {
  using std::abs;
  const double total = static_cast<double>(p.sum());
  if (abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("probability row sums to " + std::to_string(total) +
                                ", expected 1");
  }
}

}  // namespace detail

/// r[k] = c, 0 elsewhere; the group mean is exactly 1.
template <typename Scalar = double>
RewardVector<Scalar> accuracy_rewards(int c, int k) {
  detail::check_group(c, k);
  RewardVector<Scalar> r;
  r.values = Vec<Scalar>::Zero(c);
  r.values(k) = static_cast<Scalar>(c);
  r.correct = k;
  r.mode = RewardMode::AccuracyOnly;
  return r;
}

/// r[i] = -p[i] for every candidate, the correct one included.
template <typename Derived>
RewardVector<typename Derived::Scalar> uniformity_rewards(
    const Eigen::MatrixBase<Derived>& p, int k = 0) {
  detail::check_group(p.size(), k);
  detail::check_distribution(p);
  RewardVector<typename Derived::Scalar> r;
  r.values = -p.reshaped();
  r.correct = k;
  r.mode = RewardMode::Uniformity;
  return r;
}

/// r[k] = p[k]; r[i] = (1 - p[k]) / (c - 1) - p[i] for i != k.
/// Note the components sum to +p[k].
template <typename Derived>
RewardVector<typename Derived::Scalar> alt_uniformity_rewards(
    const Eigen::MatrixBase<Derived>& p, int k) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index c = p.size();
  detail::check_group(c, k);
  detail::check_distribution(p);
  const Scalar pk = p(k);
  const Scalar share = (Scalar(1) - pk) / static_cast<Scalar>(c - 1);
  RewardVector<Scalar> r;
  r.values = (Vec<Scalar>::Constant(c, share) - p.reshaped()).eval();
  r.values(k) = pk;
  r.correct = k;
  r.mode = RewardMode::AltUniformity;
  return r;
}

template <typename Scalar>
RewardVector<Scalar> total_rewards(const RewardVector<Scalar>& acc,
                                   const RewardVector<Scalar>& uni) {
  if (acc.size() != uni.size()) {
    throw std::invalid_argument("total_rewards: length mismatch " +
                                std::to_string(acc.size()) + " vs " +
                                std::to_string(uni.size()));
  }
  if (acc.correct != uni.correct) {
    throw std::invalid_argument("total_rewards: correct index mismatch");
  }
  RewardVector<Scalar> r;
  r.values = acc.values + uni.values;
  r.correct = acc.correct;
  r.mode = uni.mode;
  return r;
}

/// Lowers the background reward by c/2. Not idempotent: apply once per group.
template <typename Scalar>
RewardVector<Scalar> apply_background_punishment(RewardVector<Scalar> r, int c,
                                                 int background = 0) {
  r.values(background) -= static_cast<Scalar>(c) / Scalar(2);
  return r;
}

/// (r - mean) / (population std + guard).
template <typename Derived>
Vec<typename Derived::Scalar> advantages(const Eigen::MatrixBase<Derived>& r,
                                         double guard = 1e-8) {
  using Scalar = typename Derived::Scalar;
  using std::sqrt;
  if (r.size() < 2) throw std::invalid_argument("advantages: group size < 2");
  const Scalar mean = r.mean();
  Vec<Scalar> centered = r.reshaped().array() - mean;
  const Scalar popstd = sqrt(centered.squaredNorm() / static_cast<Scalar>(r.size()));
  return centered / (popstd + static_cast<Scalar>(guard));
}

template <typename Scalar>
Vec<Scalar> advantages(const RewardVector<Scalar>& r, double guard = 1e-8) {
  return advantages(r.values, guard);
}

/// Rewards for one group under `cfg`, computed from old-policy probabilities.
template <typename Derived>
RewardVector<typename Derived::Scalar> group_rewards(
    const Eigen::MatrixBase<Derived>& old_p, int k, const SurrogateConfig& cfg) {
  using Scalar = typename Derived::Scalar;
  const int c = static_cast<int>(old_p.size());
  RewardVector<Scalar> acc = accuracy_rewards<Scalar>(c, k);
  RewardVector<Scalar> r;
  switch (cfg.reward_mode) {
    case RewardMode::AccuracyOnly:
      r = acc;
      break;
    case RewardMode::Uniformity:
      r = total_rewards(acc, uniformity_rewards(old_p, k));
      break;
    case RewardMode::AltUniformity:
      r = total_rewards(acc, alt_uniformity_rewards(old_p, k));
      break;
  }
  if (cfg.background_punishment) {
    r = apply_background_punishment(std::move(r), c, 0);
  }
  return r;
}

/// Advantages for every row of `old_p` (groups x c). Row g uses label labels[g].
Eigen::MatrixXd group_advantages(const Eigen::MatrixXd& old_p,
                                 std::span<const int> labels,
                                 const SurrogateConfig& cfg);

/// -mean over groups and candidates of min(rho * A, clamp(rho, 1-eps, 1+eps) * A)
/// with rho = new_p / old_p. old_p and A enter as constants.
ad::Tensor grpo_loss(const ad::Tensor& new_p, const Eigen::MatrixXd& old_p,
                     const Eigen::MatrixXd& adv, const SurrogateConfig& cfg);

/// -mean log softmax(logits)[label].
ad::Tensor ce_loss(const ad::Tensor& logits, std::span<const int> labels);

}  // namespace grm
