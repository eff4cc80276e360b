#include "grm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace grm {

double sr_probe(const Matrix& features, const std::vector<int>& labels, int classes,
                const Split& split, const ProbeConfig& cfg) {
  ClassDataset all;
  all.inputs = features;
  all.labels = labels;
  all.classes = classes;
  all.name = "probe";
  const ClassDataset train = subset(all, split.train);
  const ClassDataset test = subset(all, split.test);

  std::vector<int> seen(static_cast<std::size_t>(classes), 0);
  for (int l : train.labels) ++seen.at(static_cast<std::size_t>(l));
  for (int c = 0; c < classes; ++c) {
    if (seen[static_cast<std::size_t>(c)] == 0) {
      throw std::invalid_argument("sr_probe: class " + std::to_string(c) +
                                  " absent from the train split");
    }
  }

  Architecture arch;
  arch.task = TaskKind::Classification;
  arch.input_dim = static_cast<int>(features.cols());
  arch.hidden = cfg.hidden;
  arch.classes = classes;

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = static_cast<int>(std::min<Eigen::Index>(cfg.batch_size, train.size()));
  tc.lr_start_base = cfg.lr_start_base;
  tc.lr_end_base = cfg.lr_end_base;
  tc.shuffle_seed = cfg.seed;
  auto result = train_baseline(tc, init_params(cfg.seed, arch), train, test);
  return accuracy(result.model, test);
}

int knn_predict(const Matrix& train_emb, const std::vector<int>& train_labels,
                const Eigen::RowVectorXd& query, int k) {
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  if (k > train_emb.rows()) {
    throw std::invalid_argument("knn: k = " + std::to_string(k) + " exceeds " +
                                std::to_string(train_emb.rows()) + " train points");
  }
  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(train_emb.rows()));
  for (Eigen::Index i = 0; i < train_emb.rows(); ++i) {
    dist[static_cast<std::size_t>(i)] = {(train_emb.row(i) - query).norm(), i};
  }
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());

  std::map<int, std::pair<int, double>> votes;  // label -> (count, sum 1/d)
  for (int j = 0; j < k; ++j) {
    const auto [d, i] = dist[static_cast<std::size_t>(j)];
    auto& v = votes[train_labels[static_cast<std::size_t>(i)]];
    ++v.first;
    v.second += d > 0.0 ? 1.0 / d : std::numeric_limits<double>::infinity();
  }
  int best = -1;
  std::pair<int, double> best_vote{-1, 0.0};
  for (const auto& [label, vote] : votes) {  // ascending label order
    if (vote.first > best_vote.first ||
        (vote.first == best_vote.first && vote.second > best_vote.second)) {
      best = label;
      best_vote = vote;
    }
  }
  return best;
}

namespace {

Matrix l2_normalize(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0.0) out.row(r) /= n;
  }
  return out;
}

}  // namespace

double knn_accuracy(const Matrix& train_emb, const std::vector<int>& train_labels,
                    const Matrix& test_emb, const std::vector<int>& test_labels, int k) {
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  if (test_emb.rows() == 0) return 0.0;
  const Matrix train = l2_normalize(train_emb);
  const Matrix test = l2_normalize(test_emb);
  std::size_t hit = 0;
  for (Eigen::Index r = 0; r < test.rows(); ++r) {
    hit += knn_predict(train, train_labels, test.row(r), k) ==
           test_labels[static_cast<std::size_t>(r)];
  }
  return static_cast<double>(hit) / static_cast<double>(test.rows());
}

SegMetrics seg_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                       int classes) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("seg_metrics: " + std::to_string(pred.size()) +
                                " predictions vs " + std::to_string(truth.size()) +
                                " ground-truth pixels");
  }
  const auto c = static_cast<std::size_t>(classes);
  std::vector<long> inter(c, 0), pred_n(c, 0), gt_n(c, 0);
  long correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i];
    const int t = truth[i];
    if (p < 0 || p >= classes || t < 0 || t >= classes) {
      throw std::invalid_argument("seg_metrics: label outside [0, " +
                                  std::to_string(classes) + ") at pixel " +
                                  std::to_string(i));
    }
    ++pred_n[static_cast<std::size_t>(p)];
    ++gt_n[static_cast<std::size_t>(t)];
    if (p == t) {
      ++inter[static_cast<std::size_t>(p)];
      ++correct;
    }
  }
  SegMetrics m;
  m.pixel_accuracy = pred.empty() ? 0.0 : double(correct) / double(pred.size());
  m.class_iou.resize(c);
  double iou_sum = 0.0, weighted = 0.0;
  int present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const long uni = pred_n[k] + gt_n[k] - inter[k];
    if (uni == 0) continue;
    const double iou = double(inter[k]) / double(uni);
    m.class_iou[k] = iou;
    iou_sum += iou;
    ++present;
    weighted += iou * double(gt_n[k]);
  }
  m.miou = present ? iou_sum / present : 0.0;
  m.iou = truth.empty() ? 0.0 : weighted / double(truth.size());
  return m;
}

MetricsReport evaluate_classification(const ModelParams& model, const ClassDataset& ds,
                                      const Split& split, const ProbeConfig& probe,
                                      int knn_k, bool run_sr, bool run_knn) {
  if (ds.dim() != model.arch.input_dim) {
    throw std::invalid_argument("dataset has " + std::to_string(ds.dim()) +
                                " features, checkpoint expects " +
                                std::to_string(model.arch.input_dim));
  }
  MetricsReport report;
  report.task = TaskKind::Classification;
  report.probe_epochs = probe.epochs;
  report.probe_seed = probe.seed;
  const Matrix features = encode(model, ds.inputs);
  if (run_sr) {
    report.sr_accuracy = sr_probe(features, ds.labels, ds.classes, split, probe);
  }
  if (run_knn) {
    report.knn_accuracy =
        knn_accuracy(gather_rows(features, split.train), gather(ds.labels, split.train),
                     gather_rows(features, split.test), gather(ds.labels, split.test),
                     knn_k);
  }
  return report;
}

MetricsReport evaluate_segmentation(const ModelParams& model, const SegDataset& test) {
  if (test.dim() != model.arch.input_dim || test.height != model.arch.grid_h ||
      test.width != model.arch.grid_w) {
    throw std::invalid_argument(
        "dataset cells " + std::to_string(test.height) + "x" + std::to_string(test.width) +
        "x" + std::to_string(test.dim()) + " do not match checkpoint " +
        std::to_string(model.arch.grid_h) + "x" + std::to_string(model.arch.grid_w) + "x" +
        std::to_string(model.arch.input_dim));
  }
  MetricsReport report;
  report.task = TaskKind::Segmentation;
  const auto pred = argmax_rows(seg_probs(model, test.cells));
  report.segmentation =
      seg_metrics(pred, seg_targets(test, model.arch.upsample), model.arch.classes);
  return report;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string export_curves(const std::vector<NamedRunLog>& runs) {
  std::string out = "method,epoch,loss,lr,accuracy,wall_time_s\n";
  for (const auto& run : runs) {
    for (const auto& r : run.log.records) {
      out += run.method + "," + std::to_string(r.epoch) + "," + num(r.loss) + "," +
             num(r.lr) + "," + num(r.test_accuracy) + "," + num(r.wall_time_s) + "\n";
    }
  }
  return out;
}

std::vector<NamedRunLog> parse_curves(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  if (line != "method,epoch,loss,lr,accuracy,wall_time_s") {
    throw std::invalid_argument("curve csv: unexpected header '" + line + "'");
  }
  std::vector<NamedRunLog> runs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string method, field;
    std::getline(row, method, ',');
    EpochRecord rec;
    std::getline(row, field, ',');
    rec.epoch = std::stoi(field);
    std::getline(row, field, ',');
    rec.loss = std::strtod(field.c_str(), nullptr);
    std::getline(row, field, ',');
    rec.lr = std::strtod(field.c_str(), nullptr);
    std::getline(row, field, ',');
    rec.test_accuracy = std::strtod(field.c_str(), nullptr);
    std::getline(row, field, ',');
    rec.wall_time_s = std::strtod(field.c_str(), nullptr);
    if (runs.empty() || runs.back().method != method) {
      runs.push_back({method, RunLog{method, {}}});
    }
    runs.back().log.records.push_back(rec);
  }
  return runs;
}

std::string metrics_csv(const RunLog& log) {
  std::string out = "epoch,loss,lr,train_accuracy,test_accuracy,reward_mode\n";
  for (const auto& r : log.records) {
    out += std::to_string(r.epoch) + "," + num(r.loss) + "," + num(r.lr) + "," +
           num(r.train_accuracy) + "," + num(r.test_accuracy) + "," + r.reward_mode + "\n";
  }
  return out;
}

}  // namespace grm
