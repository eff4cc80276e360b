#include "grm/eval.hpp"

#include "oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace grm;

namespace {

Matrix on_circle(std::initializer_list<double> angles) {
  Matrix m(static_cast<Eigen::Index>(angles.size()), 2);
  Eigen::Index r = 0;
  for (double a : angles) {
    m(r, 0) = std::cos(a);
    m(r, 1) = std::sin(a);
    ++r;
  }
  return m;
}

}  // namespace

TEST(Knn, MajorityOfFiveNearest) {
  // Five nearest to angle 0 carry labels [1, 1, 1, 0, 0]; the far point is a 0.
  const Matrix train = on_circle({0.1, 0.2, -0.1, 0.3, -0.3, 3.0});
  const std::vector<int> labels{1, 1, 1, 0, 0, 0};
  EXPECT_EQ(knn_predict(train, labels, on_circle({0.0}).row(0), 5), 1);
  // k = 6 brings in the far 0, flipping the vote to 3 vs 3; inverse distance still favours 1.
  EXPECT_EQ(knn_predict(train, labels, on_circle({0.0}).row(0), 6), 1);
  EXPECT_EQ(knn_accuracy(train, labels, on_circle({0.0}), {1}, 5), 1.0);
}

TEST(Knn, SelfMatchWithKOne) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix emb(30, 5);
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb(i) = d(rng);
  std::vector<int> labels(30);
  for (int i = 0; i < 30; ++i) labels[static_cast<std::size_t>(i)] = i % 7;
  EXPECT_EQ(knn_accuracy(emb, labels, emb, labels, 1), 1.0);
}

TEST(Knn, TieBreaks) {
  // Identical embeddings with conflicting labels: both distances are 0, so the
  // inverse-distance sums tie at infinity and the smaller class wins.
  const Matrix dup = on_circle({0.4, 0.4});
  EXPECT_EQ(knn_predict(dup, {5, 2}, on_circle({0.4}).row(0), 2), 2);
  EXPECT_EQ(knn_predict(dup, {2, 5}, on_circle({0.4}).row(0), 2), 2);
  // One vote each: the closer neighbour's class wins on inverse distance.
  const Matrix two = on_circle({0.1, 0.5});
  EXPECT_EQ(knn_predict(two, {3, 2}, on_circle({0.0}).row(0), 2), 3);
  EXPECT_THROW(knn_predict(two, {3, 2}, on_circle({0.0}).row(0), 0), std::invalid_argument);
  EXPECT_THROW(knn_accuracy(two, {3, 2}, two, {3, 2}, 0), std::invalid_argument);
}

TEST(Knn, InvariantToGlobalScale) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix train(40, 6), test(15, 6);
    for (Eigen::Index i = 0; i < train.size(); ++i) train(i) = d(rng);
    for (Eigen::Index i = 0; i < test.size(); ++i) test(i) = d(rng);
    std::vector<int> labels(40);
    for (auto& l : labels) l = static_cast<int>(rng() % 4);
    const Matrix tn = train.rowwise().normalized();
    const Matrix tn7 = (train * 7.3).rowwise().normalized();
    for (Eigen::Index r = 0; r < test.rows(); ++r) {
      const Eigen::RowVectorXd q = test.row(r).normalized();
      const Eigen::RowVectorXd q7 = (test.row(r) * 7.3).normalized();
      EXPECT_EQ(knn_predict(tn, labels, q, 5), knn_predict(tn7, labels, q7, 5));
    }
    std::vector<int> test_labels(15, 0);
    EXPECT_EQ(knn_accuracy(train, labels, test, test_labels, 5),
              knn_accuracy(train * 7.3, labels, test * 7.3, test_labels, 5));
  }
}

TEST(SegMetrics, PerfectPrediction) {
  const std::vector<int> gt{0, 1, 2, 0, 0, 1};
  const auto m = seg_metrics(gt, gt, 3);
  EXPECT_EQ(m.pixel_accuracy, 1.0);
  EXPECT_EQ(m.miou, 1.0);
  EXPECT_EQ(m.iou, 1.0);
}

TEST(SegMetrics, HandCountedThreeByThree) {
  // gt:   0 0 0     pred: 0 0 1
  //       0 0 1           0 0 1
  //       1 1 1           0 1 1
  // Foreground: 3 of 4 hit, one background cell predicted foreground.
  const std::vector<int> gt{0, 0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<int> pred{0, 0, 1, 0, 0, 1, 0, 1, 1};
  const auto m = seg_metrics(pred, gt, 2);
  EXPECT_DOUBLE_EQ(m.pixel_accuracy, 7.0 / 9.0);
  // Foreground: intersection 3, union 3 + 1 + 1 = 5.
  EXPECT_DOUBLE_EQ(*m.class_iou[1], 3.0 / 5.0);
  // Background: intersection 4, union 4 + 1 + 1 = 6.
  EXPECT_DOUBLE_EQ(*m.class_iou[0], 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(m.miou, (3.0 / 5.0 + 4.0 / 6.0) / 2.0);
  EXPECT_DOUBLE_EQ(m.iou, (5.0 * (4.0 / 6.0) + 4.0 * (3.0 / 5.0)) / 9.0);
}

TEST(SegMetrics, AllBackgroundPrediction) {
  const std::vector<int> gt{0, 0, 1, 1};
  const auto m = seg_metrics(std::vector<int>(4, 0), gt, 3);
  EXPECT_EQ(*m.class_iou[1], 0.0);
  EXPECT_FALSE(m.class_iou[2].has_value());
  EXPECT_DOUBLE_EQ(m.miou, (0.5 + 0.0) / 2.0);
  EXPECT_THROW(seg_metrics({0, 1}, gt, 3), std::invalid_argument);
}

TEST(SegMetrics, MatchesBruteForceConfusion) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + trial % 5;
    std::vector<int> pred(64), gt(64);
    // Skew towards background so some classes go missing.
    for (int i = 0; i < 64; ++i) {
      gt[static_cast<std::size_t>(i)] = rng() % 3 == 0 ? static_cast<int>(rng() % c) : 0;
      pred[static_cast<std::size_t>(i)] = rng() % 3 == 0 ? static_cast<int>(rng() % c) : gt[static_cast<std::size_t>(i)];
    }
    const oracle::Confusion conf(pred, gt, c);
    const auto m = seg_metrics(pred, gt, c);
    EXPECT_EQ(m.pixel_accuracy, conf.pixel_accuracy());
    double sum = 0.0;
    double weighted = 0.0;
    int present = 0;
    for (int k = 0; k < c; ++k) {
      const double iou = conf.iou(k);
      if (iou < 0.0) {
        EXPECT_FALSE(m.class_iou[static_cast<std::size_t>(k)].has_value());
        continue;
      }
      EXPECT_EQ(*m.class_iou[static_cast<std::size_t>(k)], iou);
      sum += iou;
      ++present;
      long gt_k = 0;
      for (int j = 0; j < c; ++j) gt_k += conf.at(k, j);
      weighted += iou * static_cast<double>(gt_k);
    }
    EXPECT_EQ(m.miou, sum / present);
    EXPECT_EQ(m.iou, weighted / 64.0);
  }
}

TEST(Curves, RoundTripAtFullPrecision) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<NamedRunLog> runs;
  for (const char* method : {"grporm", "baseline"}) {
    RunLog log;
    log.method = method;
    for (int e = 1; e <= 100; ++e) {
      EpochRecord r;
      r.epoch = e;
      r.loss = u(rng) / 3.0;
      r.lr = std::abs(u(rng)) * 1e-3;
      r.test_accuracy = std::abs(u(rng));
      r.wall_time_s = std::abs(u(rng)) * 1e-2;
      log.records.push_back(r);
    }
    runs.push_back({method, log});
  }
  const std::string csv = export_curves(runs);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 201);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,epoch,loss,lr,accuracy,wall_time_s");
  const auto back = parse_curves(csv);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].method, runs[i].method);
    ASSERT_EQ(back[i].log.records.size(), 100u);
    for (std::size_t e = 0; e < 100; ++e) {
      const auto& a = runs[i].log.records[e];
      const auto& b = back[i].log.records[e];
      EXPECT_EQ(a.epoch, b.epoch);
      EXPECT_EQ(a.loss, b.loss);
      EXPECT_EQ(a.lr, b.lr);
      EXPECT_EQ(a.test_accuracy, b.test_accuracy);
      EXPECT_EQ(a.wall_time_s, b.wall_time_s);
      EXPECT_TRUE(std::isfinite(b.loss));
    }
  }
}

TEST(SrProbe, OneHotFeaturesAreSeparable) {
  const int c = 10;
  Matrix features = Matrix::Zero(200, c);
  std::vector<int> labels(200);
  for (int i = 0; i < 200; ++i) {
    labels[static_cast<std::size_t>(i)] = i % c;
    features(i, i % c) = 1.0;
  }
  ClassDataset ds{features, labels, c, "onehot", 0};
  const auto s = split(ds, 0.25, 0);
  EXPECT_EQ(sr_probe(features, labels, c, s, ProbeConfig{}), 1.0);
}

TEST(SrProbe, ShuffledLabelsAreChanceLevel) {
  const auto ds = gen_blobs(0, 10, 40, 8, 0.15);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<int> labels = ds.labels;
    std::shuffle(labels.begin(), labels.end(), std::mt19937_64(seed + 100));
    ClassDataset shuffled{ds.inputs, labels, 10, "shuffled", seed};
    const auto s = split(shuffled, 0.25, seed);
    ProbeConfig cfg;
    cfg.seed = seed;
    total += sr_probe(ds.inputs, labels, 10, s, cfg);
  }
  EXPECT_NEAR(total / 5.0, 0.1, 0.05);
}

TEST(SrProbe, MissingTrainClassThrows) {
  Matrix f = Matrix::Identity(4, 4);
  const std::vector<int> labels{0, 1, 2, 2};
  Split s{{0, 1, 2}, {3}};
  EXPECT_THROW(sr_probe(f, labels, 4, s, ProbeConfig{}), std::invalid_argument);
}

TEST(Evaluate, LeavesEncoderUntouched) {
  const auto ds = gen_blobs(1, 3, 30, 4, 0.2);
  const auto s = split(ds, 0.25, 0);
  Architecture a;
  a.input_dim = 4;
  a.encoder_widths = {8};
  a.hidden = 8;
  a.classes = 3;
  const auto model = init_params(0, a);
  const auto before = model.checksum();
  ProbeConfig cfg;
  cfg.epochs = 3;
  cfg.hidden = 8;
  const auto rep = evaluate_classification(model, ds, s, cfg, 5);
  EXPECT_EQ(model.checksum(), before);
  ASSERT_TRUE(rep.sr_accuracy && rep.knn_accuracy);
  EXPECT_GE(*rep.sr_accuracy, 0.0);
  EXPECT_LE(*rep.knn_accuracy, 1.0);
  a.input_dim = 5;
  EXPECT_THROW(evaluate_classification(init_params(0, a), ds, s, cfg), std::invalid_argument);
}

TEST(MetricsCsv, HasNoWallTime) {
  RunLog log;
  log.records.push_back({1, -0.5, 0.123, 1e-3, 0.5, 0.25, "eq4"});
  EXPECT_EQ(metrics_csv(log),
            "epoch,loss,lr,train_accuracy,test_accuracy,reward_mode\n1,-0.5,0.001,0.5,0.25,eq4\n");
}
