#include "grm/grporm.hpp"

namespace grm {

std::string_view reward_mode_name(RewardMode mode) {
  switch (mode) {
    case RewardMode::AccuracyOnly: return "accuracy-only";
    case RewardMode::Uniformity: return "eq4";
    case RewardMode::AltUniformity: return "eq5";
  }
  return "unknown";
}

RewardMode parse_reward_mode(std::string_view name) {
  if (name == "accuracy-only") return RewardMode::AccuracyOnly;
  if (name == "eq4" || name == "uniformity") return RewardMode::Uniformity;
  if (name == "eq5" || name == "alt-uniformity") return RewardMode::AltUniformity;
  throw std::invalid_argument("unknown reward mode '" + std::string(name) +
                              "' (expected accuracy-only, eq4, eq5)");
}

void SurrogateConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (beta != 0.0) throw std::invalid_argument("beta must be 0 (no reference model)");
  if (!(std_guard >= 0.0)) throw std::invalid_argument("std_guard must be >= 0");
}

Eigen::MatrixXd group_advantages(const Eigen::MatrixXd& old_p,
                                 std::span<const int> labels,
                                 const SurrogateConfig& cfg) {
  if (static_cast<Eigen::Index>(labels.size()) != old_p.rows()) {
    throw std::invalid_argument("group_advantages: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(old_p.rows()) +
                                " groups");
  }
  Eigen::MatrixXd adv(old_p.rows(), old_p.cols());
  for (Eigen::Index g = 0; g < old_p.rows(); ++g) {
    const auto r = group_rewards(old_p.row(g), labels[static_cast<std::size_t>(g)], cfg);
    adv.row(g) = advantages(r.values, cfg.std_guard).transpose();
  }
  return adv;
}

ad::Tensor grpo_loss(const ad::Tensor& new_p, const Eigen::MatrixXd& old_p,
                     const Eigen::MatrixXd& adv, const SurrogateConfig& cfg) {
  cfg.validate();
  if (new_p.rows() != old_p.rows() || new_p.cols() != old_p.cols() ||
      adv.rows() != old_p.rows() || adv.cols() != old_p.cols()) {
    throw ad::ShapeError("grpo_loss: shapes new_p [" + std::to_string(new_p.rows()) +
                         "x" + std::to_string(new_p.cols()) + "], old_p [" +
                         std::to_string(old_p.rows()) + "x" +
                         std::to_string(old_p.cols()) + "], advantages [" +
                         std::to_string(adv.rows()) + "x" +
                         std::to_string(adv.cols()) + "]");
  }
  if (!(old_p.array() > 0.0).all()) {
    throw ad::DomainError("grpo_loss: old-policy probabilities must be strictly positive");
  }
  ad::Tape& tape = *new_p.tape();
  ad::Tensor old_t = tape.constant(old_p);
  ad::Tensor adv_t = tape.constant(adv);
  ad::Tensor ratio = ad::div(new_p, old_t);
  ad::Tensor unclipped = ad::mul(ratio, adv_t);
  ad::Tensor clipped =
      ad::mul(ad::clamp(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon), adv_t);
  ad::Tensor surrogate = ad::pairwise_min(unclipped, clipped);
  return ad::scale(ad::mean_all(surrogate), -1.0);
}

ad::Tensor ce_loss(const ad::Tensor& logits, std::span<const int> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) {
      throw std::out_of_range("ce_loss: label " + std::to_string(labels[i]) +
                              " at row " + std::to_string(i) + " outside [0, " +
                              std::to_string(logits.cols()) + ")");
    }
  }
  ad::Tensor picked = ad::gather_cols(ad::log_softmax_rows(logits), labels);
  return ad::scale(ad::mean_all(picked), -1.0);
}

}  // namespace grm
