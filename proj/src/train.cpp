#include "grm/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace grm {

TrainConfig TrainConfig::segmentation_defaults() {
  TrainConfig cfg;
  cfg.task = TaskKind::Segmentation;
  cfg.batch_size = 256;
  cfg.lr_start_base = 1e-5;
  cfg.lr_end_base = 1e-7;
  cfg.background_punishment = true;
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr_end_base > 0.0)) throw std::invalid_argument("lr_end_base must be > 0");
  if (!(lr_start_base >= lr_end_base)) {
    throw std::invalid_argument("lr_start_base must be >= lr_end_base");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  surrogate().validate();
}

SurrogateConfig TrainConfig::surrogate() const {
  SurrogateConfig s;
  s.epsilon = epsilon;
  s.beta = beta;
  s.reward_mode = reward_mode;
  s.background_punishment =
      background_punishment && task == TaskKind::Segmentation;
  s.std_guard = std_guard;
  return s;
}

double effective_lr(double lr_start_base, double lr_end_base, int batch_size,
                    int epoch, int epochs) {
  const double scale = static_cast<double>(batch_size) / 256.0;
  const double start = lr_start_base * scale;
  const double end = lr_end_base * scale;
  if (epochs <= 1) return start;
  if (epoch >= epochs - 1) return end;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return end + (start - end) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state,
               double lr, double weight_decay) {
  if (grads.size() != params.layers.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) +
                                " gradient layers for " +
                                std::to_string(params.layers.size()) + " parameter layers");
  }
  if (state.first.empty()) {
    for (const auto& l : params.layers) {
      Layer zero{Matrix::Zero(l.weight.rows(), l.weight.cols()),
                 Matrix::Zero(l.bias.rows(), l.bias.cols())};
      state.first.push_back(zero);
      state.second.push_back(zero);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  auto update = [&](Matrix& p, const Matrix& g_in, Matrix& m, Matrix& v) {
    if (g_in.rows() != p.rows() || g_in.cols() != p.cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    Matrix g = weight_decay != 0.0 ? Matrix(g_in + weight_decay * p) : g_in;
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weight, grads[i].weight, state.first[i].weight,
           state.second[i].weight);
    update(params.layers[i].bias, grads[i].bias, state.first[i].bias,
           state.second[i].bias);
  }
}

double grad_norm(const ParamGrads& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.weight.squaredNorm() + g.bias.squaredNorm();
  return std::sqrt(sq);
}

double RunLog::mean_epoch_time() const {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += r.wall_time_s;
  return total / static_cast<double>(records.size());
}

std::vector<int> seg_targets(const SegDataset& ds, int upsample) {
  if (upsample == 1) return ds.masks;
  const auto idx = upsample_index(ds.images, ds.height, ds.width, upsample);
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ds.masks[static_cast<std::size_t>(i)]);
  return out;
}

double accuracy(const ModelParams& model, const ClassDataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto pred = argmax_rows(class_probs(model, ds.inputs));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ds.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double pixel_accuracy(const ModelParams& model, const SegDataset& ds) {
  if (ds.images == 0) return 0.0;
  const auto pred = argmax_rows(seg_probs(model, ds.cells));
  const auto truth = seg_targets(ds, model.arch.upsample);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

namespace {

enum class Method { Grporm, Baseline };

/// Task-specific pieces of the loop.
struct TaskView {
  Eigen::Index count = 0;  // samples or images
  std::function<std::pair<Matrix, std::vector<int>>(const std::vector<int>&)> batch;
  std::function<ad::Tensor(const Architecture&, const BoundParams&, const ad::Tensor&)> probs;
  std::function<Matrix(const PolicySnapshot&, const Matrix&)> old_probs;
  std::function<double(const ModelParams&)> train_accuracy;
  std::function<double(const ModelParams&)> test_accuracy;
};

TaskView classification_view(const ClassDataset& train, const ClassDataset& test) {
  TaskView v;
  v.count = train.size();
  v.batch = [&train](const std::vector<int>& idx) {
    return std::make_pair(gather_rows(train.inputs, idx), gather(train.labels, idx));
  };
  v.probs = [](const Architecture& a, const BoundParams& b, const ad::Tensor& x) {
    return class_probs(a, b, x);
  };
  v.old_probs = [](const PolicySnapshot& s, const Matrix& x) { return s.class_probs(x); };
  v.train_accuracy = [&train](const ModelParams& m) { return accuracy(m, train); };
  v.test_accuracy = [&test](const ModelParams& m) { return accuracy(m, test); };
  return v;
}

TaskView segmentation_view(const SegDataset& train, const SegDataset& test, int upsample) {
  TaskView v;
  v.count = train.images;
  v.batch = [&train, upsample](const std::vector<int>& idx) {
    SegDataset part = subset(train, idx);
    return std::make_pair(std::move(part.cells), seg_targets(part, upsample));
  };
  v.probs = [](const Architecture& a, const BoundParams& b, const ad::Tensor& x) {
    return seg_probs(a, b, x);
  };
  v.old_probs = [](const PolicySnapshot& s, const Matrix& x) { return s.seg_probs(x); };
  v.train_accuracy = [&train](const ModelParams& m) { return pixel_accuracy(m, train); };
  v.test_accuracy = [&test](const ModelParams& m) { return pixel_accuracy(m, test); };
  return v;
}

TrainResult run(const TrainConfig& cfg, ModelParams model, const TaskView& task,
                Method method, const BatchObserver& observer) {
  cfg.validate();
  if (model.arch.task != cfg.task) {
    throw TrainError("model architecture task does not match config task");
  }
  const SurrogateConfig surrogate = cfg.surrogate();
  AdamState adam;
  TrainResult result;
  result.log.method = method == Method::Grporm ? "grporm" : "baseline";
  const std::string mode_label =
      method == Method::Grporm ? std::string(reward_mode_name(cfg.reward_mode)) : "ce";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr =
        effective_lr(cfg.lr_start_base, cfg.lr_end_base, cfg.batch_size, epoch, cfg.epochs);
    const PolicySnapshot old_policy = snapshot(model, epoch);
    std::vector<std::vector<int>> plan;
    try {
      plan = batches(task.count, cfg.batch_size, cfg.shuffle_seed, epoch);
    } catch (const std::exception& e) {
      throw TrainError(result.log.method + " epoch " + std::to_string(epoch) + ": " +
                       e.what());
    }

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      try {
        auto [inputs, labels] = task.batch(plan[b]);
        ad::Tape tape;
        const BoundParams bound = bind(tape, model, true);
        const ad::Tensor x = tape.constant(std::move(inputs));
        ad::Tensor loss;
        if (method == Method::Grporm) {
          const Matrix old_p = task.old_probs(old_policy, x.value());
          const Matrix adv = group_advantages(old_p, labels, surrogate);
          loss = grpo_loss(task.probs(model.arch, bound, x), old_p, adv, surrogate);
        } else {
          loss = ce_loss(logits(model.arch, bound, x), labels);
        }
        tape.backward(loss);
        const ParamGrads grads = gradients(bound);
        const double norm = grad_norm(grads);
        if (!std::isfinite(loss.item()) || !std::isfinite(norm)) {
          throw ad::DomainError("non-finite loss or gradient");
        }
        adam_step(model, grads, adam, lr, cfg.weight_decay);
        loss_sum += loss.item();
        if (observer) {
          observer(BatchEvent{epoch, static_cast<int>(b), loss.item(), norm,
                              old_policy.checksum_at_copy(), old_policy.intact()});
        }
      } catch (const std::exception& e) {
        throw TrainError(result.log.method + " epoch " + std::to_string(epoch) +
                         " batch " + std::to_string(b) + ": " + e.what());
      }
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = loss_sum / static_cast<double>(plan.size());
    rec.wall_time_s = wall;
    rec.lr = lr;
    rec.train_accuracy = task.train_accuracy(model);
    rec.test_accuracy = task.test_accuracy(model);
    rec.reward_mode = mode_label;
    result.log.records.push_back(std::move(rec));
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

TrainResult train_grporm(const TrainConfig& cfg, ModelParams model,
                         const ClassDataset& train, const ClassDataset& test,
                         const BatchObserver& observer) {
  return run(cfg, std::move(model), classification_view(train, test), Method::Grporm,
             observer);
}

TrainResult train_grporm(const TrainConfig& cfg, ModelParams model,
                         const SegDataset& train, const SegDataset& test,
                         const BatchObserver& observer) {
  const int u = model.arch.upsample;
  return run(cfg, std::move(model), segmentation_view(train, test, u), Method::Grporm,
             observer);
}

TrainResult train_baseline(const TrainConfig& cfg, ModelParams model,
                           const ClassDataset& train, const ClassDataset& test,
                           const BatchObserver& observer) {
  return run(cfg, std::move(model), classification_view(train, test), Method::Baseline,
             observer);
}

TrainResult train_baseline(const TrainConfig& cfg, ModelParams model,
                           const SegDataset& train, const SegDataset& test,
                           const BatchObserver& observer) {
  const int u = model.arch.upsample;
  return run(cfg, std::move(model), segmentation_view(train, test, u), Method::Baseline,
             observer);
}

}  // namespace grm
