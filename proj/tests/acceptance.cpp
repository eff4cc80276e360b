// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Artifacts go to $TMPDIR/grm_acceptance.

#include "grm/commands.hpp"
#include "grm/gradcheck.hpp"
#include "grm/grporm.hpp"

#include "oracle.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

using namespace grm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

Eigen::VectorXd to_eigen(const oracle::Vec& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double max_diff(const Eigen::VectorXd& a, const oracle::Vec& b) {
  return (a - to_eigen(b)).cwiseAbs().maxCoeff();
}

const fs::path& out_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "grm_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// 10-class blobs with the full encoder. m = 256 keeps six optimiser steps per
// epoch on the 1500 training rows; learning rates follow the m/256 rule.
const char* kClassificationConfig =
    "task = classification\n"
    "data = blobs\n"
    "classes = 10\n"
    "n_per_class = 200\n"
    "dim = 8\n"
    "spread = 0.15\n"
    "test_frac = 0.25\n"
    "encoder = 64,32\n"
    "hidden = 256\n"
    "reward_mode = eq4\n"
    "epochs = 50\n"
    "batch_size = 256\n"
    "lr_start_base = 1e-3\n"
    "lr_end_base = 1e-5\n"
    "knn_k = 5\n";

const char* kSegmentationConfig =
    "task = segmentation\n"
    "data = shapes\n"
    "classes = 4\n"
    "grid_h = 16\n"
    "grid_w = 16\n"
    "bg_fraction = 0.8\n"
    "n_train = 500\n"
    "n_test = 100\n"
    "encoder = 16\n"
    "background_punishment = true\n"
    "epochs = 100\n"
    "batch_size = 64\n"
    "lr_start_base = 3e-2\n"
    "lr_end_base = 3e-4\n";

Outcome reward_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> csize(2, 50);
  const double guard = 1e-8;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = csize(rng);
    const int k = std::uniform_int_distribution<int>(0, c - 1)(rng);
    const oracle::Vec p = oracle::random_distribution(rng, c);
    const Eigen::VectorXd pe = to_eigen(p);

    const auto acc = accuracy_rewards(c, k);
    const auto uni = uniformity_rewards(pe, k);
    const auto alt = alt_uniformity_rewards(pe, k);
    const oracle::Vec t4 = oracle::plus(oracle::accuracy(c, k), oracle::uniformity(p));
    const oracle::Vec t5 = oracle::plus(oracle::accuracy(c, k), oracle::alt_uniformity(p, k));
    const double diffs[] = {
        max_diff(acc.values, oracle::accuracy(c, k)),
        max_diff(uni.values, oracle::uniformity(p)),
        max_diff(alt.values, oracle::alt_uniformity(p, k)),
        max_diff(total_rewards(acc, uni).values, t4),
        max_diff(total_rewards(acc, alt).values, t5),
        max_diff(apply_background_punishment(total_rewards(acc, uni), c).values,
                 oracle::punish(t4, c)),
        max_diff(apply_background_punishment(total_rewards(acc, alt), c).values,
                 oracle::punish(t5, c)),
        max_diff(advantages(acc, guard), oracle::advantages(oracle::accuracy(c, k), guard)),
        max_diff(advantages(total_rewards(acc, uni), guard), oracle::advantages(t4, guard)),
        max_diff(advantages(total_rewards(acc, alt), guard), oracle::advantages(t5, guard)),
        max_diff(advantages(apply_background_punishment(total_rewards(acc, uni), c), guard),
                 oracle::advantages(oracle::punish(t4, c), guard)),
    };
    for (double d : diffs) worst = std::max(worst, d);
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-12 && t < 1.0,
          fmt("1000 groups, max |diff| %.3g (limit 1e-12), %.3f s (limit 1 s)", worst, t)};
}

Outcome closed_form_advantages() {
  double worst = 0.0;
  for (int c : {2, 4, 10, 100}) {
    for (int k : {0, c - 1}) {
      const Eigen::VectorXd a = advantages(accuracy_rewards(c, k));
      const double hi = std::sqrt(c - 1.0);
      for (int i = 0; i < c; ++i) {
        worst = std::max(worst, std::abs(a(i) - (i == k ? hi : -1.0 / hi)));
      }
    }
  }
  return {worst <= 1e-7, fmt("c in {2,4,10,100}, max |A - closed form| %.3g (limit 1e-7)", worst)};
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const auto cases = run_gradcheck_suite(1e-4);
  double worst = 0.0;
  bool all = true;
  int grpo = 0;
  for (const auto& c : cases) {
    worst = std::max(worst, c.max_rel_error);
    all = all && c.passed;
    grpo += c.name.rfind("grpo", 0) == 0;
  }
  std::ostringstream out, err;
  const int code = cli::cmd_gradcheck(std::nullopt, out, err);
  const double t = seconds_since(t0);
  return {all && code == 0 && grpo >= 6 && t < 30.0,
          fmt("%zu cases (%d GRPO-RM), max rel err %.3g (limit 1e-4), gradcheck exit %d, "
              "%.2f s (limit 30 s)",
              cases.size(), grpo, worst, code, t)};
}

Outcome epoch_start_zero_loss(const ClassData& data, const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  cfg.set("epochs", "10");
  const ClassDataset train = subset(data.dataset, data.split.train);
  const ClassDataset test = subset(data.dataset, data.split.test);
  const TrainConfig tc = cfg.train_config();
  const Architecture arch = cfg.architecture(static_cast<int>(data.dataset.dim()), 10);
  double worst_loss = 0.0;
  double min_norm = 1e300;
  int starts = 0;
  bool intact = true;
  train_grporm(tc, init_params(tc.init_seed, arch), train, test, [&](const BatchEvent& e) {
    intact = intact && e.snapshot_intact;
    if (e.batch != 0) return;
    ++starts;
    worst_loss = std::max(worst_loss, std::abs(e.loss));
    min_norm = std::min(min_norm, e.grad_norm);
  });
  return {starts == 10 && worst_loss <= 1e-8 && min_norm > 0.0 && intact,
          fmt("%d epoch starts, max |loss| %.3g (limit 1e-8), min grad norm %.3g", starts,
              worst_loss, min_norm)};
}

Outcome clipped_batches() {
  std::mt19937_64 rng(5);
  SurrogateConfig cfg;  // epsilon 0.2
  int exact_zero = 0;
  int outside = 0;
  const int trials = 200;
  for (int trial = 0; trial < trials; ++trial) {
    const int c = 2 + trial % 9;
    const int k = trial % c;
    const int groups = 1 + trial % 4;
    Eigen::MatrixXd old_p(groups, c);
    Eigen::MatrixXd new_p(groups, c);
    std::vector<int> labels(static_cast<std::size_t>(groups), k);
    for (int g = 0; g < groups; ++g) {
      // p[k] <= 0.5 so halving the rest pushes every ratio past the clip range:
      // off-label ratios become 0.5 and the label ratio at least 1.5.
      oracle::Vec p = oracle::random_distribution(rng, c);
      if (p[k] > 0.5) {
        const double excess = p[k] - 0.4;
        p[k] = 0.4;
        for (int i = 0; i < c; ++i) {
          if (i != k) p[i] += excess / (c - 1);
        }
      }
      old_p.row(g) = to_eigen(p).transpose();
      new_p.row(g) = old_p.row(g) * 0.5;
      new_p(g, k) = 1.0 - (new_p.row(g).sum() - new_p(g, k));
    }
    const Eigen::ArrayXXd rho = new_p.array() / old_p.array();
    outside += ((rho < 0.8) || (rho > 1.2)).all();

    const Eigen::MatrixXd adv = group_advantages(old_p, labels, cfg);
    Eigen::MatrixXd x(groups, 3);
    for (int g = 0; g < groups; ++g) x.row(g) << 0.3 * g, -1.1, 0.7;
    // The bias absorbs the logits so the first forward pass reproduces new_p.
    Eigen::MatrixXd w = Eigen::MatrixXd::Random(3, c);
    Eigen::MatrixXd b = new_p.array().log().matrix() - x * w;
    ad::Tape tape;
    auto W = tape.leaf(w);
    auto B = tape.leaf(b);
    auto probs = ad::softmax_rows(ad::add(ad::matmul(tape.constant(x), W), B));
    tape.backward(grpo_loss(probs, old_p, adv, cfg));
    exact_zero += (W.grad().array() == 0.0).all() && (B.grad().array() == 0.0).all();
  }
  return {exact_zero == trials && outside == trials,
          fmt("%d/%d batches with every ratio outside [0.8, 1.2]; %d/%d with exactly zero "
              "gradient",
              outside, trials, exact_zero, trials)};
}

struct ClassificationRuns {
  cli::RunOutcome grpo;
  cli::RunOutcome baseline;
  double oracle_accuracy = 0.0;
  double seconds = 0.0;
};

Outcome scaled_classification(const ClassificationRuns& r) {
  const auto& m = r.grpo.metrics;
  const double sr = m.sr_accuracy.value_or(0.0);
  const double knn = m.knn_accuracy.value_or(0.0);
  const bool baseline_done = r.baseline.log.records.size() == 50;
  return {sr >= 0.95 && knn >= 0.95 && r.grpo.log.records.size() == 50 && baseline_done &&
              r.oracle_accuracy >= 0.99 && r.seconds < 120.0,
          fmt("SR %.4f, kNN %.4f (limit 0.95); baseline SR %.4f kNN %.4f; oracle %.4f "
              "(limit 0.99); %.1f s (limit 120 s)",
              sr, knn, r.baseline.metrics.sr_accuracy.value_or(0.0),
              r.baseline.metrics.knn_accuracy.value_or(0.0), r.oracle_accuracy, r.seconds)};
}

Outcome convergence_shape(const ClassificationRuns& r) {
  const auto& rec = r.grpo.log.records;
  const int epochs = static_cast<int>(rec.size());
  const double first = rec.front().loss;
  const double total = first - rec.back().loss;
  int reached = -1;
  for (int e = 0; e < epochs && total > 0.0; ++e) {
    if (first - rec[static_cast<std::size_t>(e)].loss >= 0.9 * total) {
      reached = e + 1;
      break;
    }
  }
  const fs::path curves = out_dir() / "curves.csv";
  write_text(curves, export_curves({{"grporm", r.grpo.log}, {"baseline", r.baseline.log}}));
  const auto back = parse_curves(slurp(curves));
  const bool emitted = back.size() == 2 && back[0].log.records.size() == rec.size() &&
                       back[1].log.records.size() == r.baseline.log.records.size();
  return {total > 0.0 && reached > 0 && reached <= 0.4 * epochs && emitted,
          fmt("loss %.5f -> %.5f, 90%% of decrease by epoch %d of %d (limit %d); curves at %s",
              first, rec.back().loss, reached, epochs, static_cast<int>(0.4 * epochs),
              curves.c_str())};
}

Outcome ablation(const fs::path& config) {
  std::ostringstream out, err;
  const fs::path dir = out_dir() / "ablate";
  const int code = cli::cmd_ablate(config, {}, dir, out, err);
  if (code != 0) return {false, "ablate exited " + std::to_string(code) + ": " + err.str()};
  std::istringstream csv(slurp(dir / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  std::map<std::string, std::vector<double>> rows;
  while (std::getline(csv, line)) {
    std::istringstream cells(line);
    std::string mode, cell;
    std::getline(cells, mode, ',');
    for (int i = 0; i < 3 && std::getline(cells, cell, ','); ++i) {
      rows[mode].push_back(std::stod(cell));
    }
  }
  for (const char* mode : {"accuracy-only", "eq5", "eq4", "baseline"}) {
    if (rows[mode].size() != 3) return {false, std::string("missing row ") + mode};
  }
  const double sr4 = rows["eq4"][0];
  const double sr0 = rows["accuracy-only"][0];
  const double ratio = rows["eq4"][2] / rows["accuracy-only"][2];
  return {rows.size() == 4 && sr4 >= sr0 - 0.02 && ratio <= 1.3,
          fmt("4 rows; SR eq4 %.4f vs accuracy-only %.4f (eq5 %.4f, baseline %.4f); epoch "
              "time ratio %.3f (limit 1.3)",
              sr4, sr0, rows["eq5"][0], rows["baseline"][0], ratio)};
}

Outcome scaled_segmentation(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  const ExperimentData data = load_experiment_data(cfg);
  const cli::RunOutcome r = cli::run_experiment(cfg, data, "grporm");
  const double t = seconds_since(t0);
  const auto& seg = *r.metrics.segmentation;

  // Hand-counted 3x3 fixture: foreground IoU 3/5, background IoU 4/6.
  const std::vector<int> gt{0, 0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<int> pred{0, 0, 1, 0, 0, 1, 0, 1, 1};
  const SegMetrics fx = seg_metrics(pred, gt, 2);
  const bool fixture = fx.pixel_accuracy == 7.0 / 9.0 && *fx.class_iou[1] == 3.0 / 5.0 &&
                       *fx.class_iou[0] == 4.0 / 6.0;

  std::mt19937_64 rng(31);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + trial % 5;
    std::vector<int> p(64), g(64);
    for (std::size_t i = 0; i < 64; ++i) {
      g[i] = rng() % 3 == 0 ? static_cast<int>(rng() % c) : 0;
      p[i] = rng() % 3 == 0 ? static_cast<int>(rng() % c) : g[i];
    }
    const oracle::Confusion conf(p, g, c);
    const SegMetrics m = seg_metrics(p, g, c);
    bool same = m.pixel_accuracy == conf.pixel_accuracy();
    double sum = 0.0;
    int present = 0;
    for (int k = 0; k < c; ++k) {
      const double iou = conf.iou(k);
      const auto& got = m.class_iou[static_cast<std::size_t>(k)];
      if (iou < 0.0) {
        same = same && !got.has_value();
        continue;
      }
      same = same && got.has_value() && *got == iou;
      sum += iou;
      ++present;
    }
    exact += same && m.miou == sum / present;
  }
  return {seg.miou >= 0.80 && r.log.records.size() == 100 && fixture && exact == 100 &&
              t < 300.0,
          fmt("mIoU %.4f (limit 0.80), pixel acc %.4f, bg fraction %.3f; 3x3 fixture %s; "
              "%d/100 brute-force cases exact; %.1f s (limit 300 s)",
              seg.miou, seg.pixel_accuracy, std::get<SegData>(data).train.background_fraction(),
              fixture ? "ok" : "wrong", exact, t)};
}

Outcome determinism(const fs::path& cls_config, const fs::path& seg_config) {
  std::ostringstream out, err;
  std::string detail;
  bool pass = true;
  const std::pair<const char*, fs::path> runs[] = {{"classification", cls_config},
                                                   {"segmentation", seg_config}};
  for (const auto& [name, config] : runs) {
    const std::vector<std::string> overrides{"--epochs=8"};
    const fs::path a = out_dir() / (std::string(name) + "_a");
    const fs::path b = out_dir() / (std::string(name) + "_b");
    const int ca = cli::cmd_train(config, overrides, a, out, err);
    const int cb = cli::cmd_train(config, overrides, b, out, err);
    const std::string ma = slurp(a / "metrics.csv");
    const bool same = ca == 0 && cb == 0 && !ma.empty() && ma == slurp(b / "metrics.csv") &&
                      slurp(a / "model.grmc") == slurp(b / "model.grmc");
    pass = pass && same;
    detail += fmt("%s metrics.csv %s (%zu bytes); ", name, same ? "identical" : "DIFFERS",
                  ma.size());
  }
  if (!pass) detail += err.str();
  return {pass, detail};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&failures](int id, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail
              << std::endl;
  };

  const fs::path cls_path = out_dir() / "classification.cfg";
  const fs::path seg_path = out_dir() / "segmentation.cfg";
  write_text(cls_path, kClassificationConfig);
  write_text(seg_path, kSegmentationConfig);
  const ExperimentConfig cls_cfg = ExperimentConfig::from_file(cls_path);
  const ExperimentConfig seg_cfg = ExperimentConfig::from_file(seg_path);

  report(1, reward_oracle);
  report(2, closed_form_advantages);
  report(3, gradient_checks);

  const ExperimentData cls_data = load_experiment_data(cls_cfg);
  const auto& blobs = std::get<ClassData>(cls_data);
  report(4, [&] { return epoch_start_zero_loss(blobs, cls_cfg); });
  report(5, clipped_batches);

  std::optional<ClassificationRuns> runs;
  auto classification = [&]() -> const ClassificationRuns& {
    if (!runs) {
      ClassificationRuns r;
      const ClassDataset train = subset(blobs.dataset, blobs.split.train);
      const ClassDataset test = subset(blobs.dataset, blobs.split.test);
      r.oracle_accuracy = oracle::softmax_regression(train.inputs, train.labels, test.inputs,
                                                     test.labels, 10);
      const auto t0 = Clock::now();
      r.grpo = cli::run_experiment(cls_cfg, cls_data, "grporm");
      r.baseline = cli::run_experiment(cls_cfg, cls_data, "baseline");
      r.seconds = seconds_since(t0);
      runs = std::move(r);
    }
    return *runs;
  };
  report(6, [&] { return scaled_classification(classification()); });
  report(7, [&] { return convergence_shape(classification()); });
  report(8, [&] { return ablation(cls_path); });
  report(9, [&] { return scaled_segmentation(seg_cfg); });
  report(10, [&] { return determinism(cls_path, seg_path); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
