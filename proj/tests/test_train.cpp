#include "grm/train.hpp"

#include "oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

using namespace grm;

namespace {

struct Blobs {
  ClassDataset train;
  ClassDataset test;
};

Blobs small_blobs(int classes = 4) {
  const auto ds = gen_blobs(1, classes, 40, 8, 0.1);
  const auto s = split(ds, 0.25, 0);
  return {subset(ds, s.train), subset(ds, s.test)};
}

Architecture class_arch(int classes) {
  Architecture a;
  a.input_dim = 8;
  a.encoder_widths = {16};
  a.hidden = 16;
  a.classes = classes;
  return a;
}

TrainConfig quick_config(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.lr_start_base = 8e-2;
  cfg.lr_end_base = 8e-4;
  return cfg;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (std::memcmp(x.weight.data(), y.weight.data(), sizeof(double) * x.weight.size()) != 0 ||
        std::memcmp(x.bias.data(), y.bias.data(), sizeof(double) * x.bias.size()) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST(EffectiveLr, ScalesAndDecays) {
  EXPECT_NEAR(effective_lr(1e-3, 1e-5, 1024, 0, 100), 4e-3, 1e-18);
  EXPECT_EQ(effective_lr(1e-3, 1e-5, 1024, 99, 100), 1e-5 * 1024 / 256.0);
  EXPECT_NEAR(effective_lr(1e-3, 1e-5, 1024, 99, 100), 4e-5, 1e-18);
  // Midpoint of 0..10 is epoch 5.
  EXPECT_NEAR(effective_lr(1e-3, 1e-5, 256, 5, 11), (1e-3 + 1e-5) / 2, 1e-15);
  EXPECT_NEAR(effective_lr(1e-5, 1e-7, 256, 0, 100), 1e-5, 1e-20);
  double prev = 1e9;
  for (int e = 0; e < 100; ++e) {
    const double lr = effective_lr(1e-3, 1e-5, 512, e, 100);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Adam, FirstStepIsLrTimesSign) {
  auto p = init_params(0, class_arch(3));
  const auto before = p;
  ParamGrads g;
  for (const auto& l : p.layers) {
    g.push_back({Matrix::Constant(l.weight.rows(), l.weight.cols(), 0.3),
                 Matrix::Constant(l.bias.rows(), l.bias.cols(), -5.0)});
  }
  AdamState st;
  const double lr = 1e-2;
  adam_step(p, g, st, lr);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const Matrix dw = p.layers[i].weight - before.layers[i].weight;
    const Matrix db = p.layers[i].bias - before.layers[i].bias;
    EXPECT_LT((dw.array() + lr).abs().maxCoeff(), 1e-6);
    EXPECT_LT((db.array() - lr).abs().maxCoeff(), 1e-6);
  }
}

TEST(Adam, ZeroGradientLeavesParamsAndShapeMismatchThrows) {
  auto p = init_params(0, class_arch(3));
  const auto before = p;
  ParamGrads g;
  for (const auto& l : p.layers) {
    g.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()),
                 Matrix::Zero(l.bias.rows(), l.bias.cols())});
  }
  AdamState st;
  for (int i = 0; i < 20; ++i) adam_step(p, g, st, 1e-2);
  EXPECT_TRUE(same_params(p, before));
  g.pop_back();
  EXPECT_THROW(adam_step(p, g, st, 1e-2), std::invalid_argument);
}

TEST(TrainGrporm, EpochStartLossIsZeroAndSnapshotFrozen) {
  const auto b = small_blobs();
  const auto init = init_params(2, class_arch(4));
  std::vector<BatchEvent> events;
  train_grporm(quick_config(6), init, b.train, b.test,
               [&events](const BatchEvent& e) { events.push_back(e); });
  ASSERT_FALSE(events.empty());
  std::set<std::uint64_t> per_epoch;
  std::uint64_t current = 0;
  for (const auto& e : events) {
    EXPECT_TRUE(e.snapshot_intact);
    if (e.batch == 0) {
      EXPECT_LE(std::abs(e.loss), 1e-8) << "epoch " << e.epoch;
      EXPECT_GT(e.grad_norm, 0.0);
      current = e.snapshot_checksum;
      per_epoch.insert(current);
    } else {
      EXPECT_EQ(e.snapshot_checksum, current);
    }
  }
  EXPECT_EQ(events.front().snapshot_checksum, init.checksum());
  EXPECT_EQ(per_epoch.size(), 6u);
}

TEST(TrainGrporm, LearnsAndIsDeterministic) {
  const auto b = small_blobs();
  const auto init = init_params(2, class_arch(4));
  const auto r1 = train_grporm(quick_config(15), init, b.train, b.test);
  const auto r2 = train_grporm(quick_config(15), init, b.train, b.test);
  ASSERT_GE(oracle::softmax_regression(b.train.inputs, b.train.labels, b.test.inputs,
                                       b.test.labels, 4),
            0.95);
  EXPECT_LT(accuracy(init, b.test), 0.6);
  EXPECT_TRUE(same_params(r1.model, r2.model));
  ASSERT_EQ(r1.log.records.size(), 15u);
  for (std::size_t i = 0; i < r1.log.records.size(); ++i) {
    EXPECT_EQ(r1.log.records[i].epoch, static_cast<int>(i) + 1);
    EXPECT_EQ(r1.log.records[i].loss, r2.log.records[i].loss);
    EXPECT_EQ(r1.log.records[i].reward_mode, "eq4");
  }
  EXPECT_GE(r1.log.records.back().test_accuracy, 0.9);
}

TEST(TrainGrporm, EveryRewardModeCompletes) {
  const auto b = small_blobs();
  for (auto mode : {RewardMode::AccuracyOnly, RewardMode::AltUniformity}) {
    auto cfg = quick_config(3);
    cfg.reward_mode = mode;
    const auto r = train_grporm(cfg, init_params(2, class_arch(4)), b.train, b.test);
    EXPECT_EQ(r.log.records.size(), 3u);
    EXPECT_EQ(r.log.records[0].reward_mode, reward_mode_name(mode));
  }
}

TEST(TrainBaseline, BeatsUniformAfterOneEpoch) {
  const auto ds = gen_blobs(0, 10, 200, 8, 0.15);
  const auto s = split(ds, 0.25, 0);
  const auto train = subset(ds, s.train);
  const auto test = subset(ds, s.test);
  Architecture a;
  a.input_dim = 8;
  a.encoder_widths = {64, 32};
  a.classes = 10;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 256;
  const auto r = train_baseline(cfg, init_params(0, a), train, test);
  // Cross-entropy of the model after one epoch, recomputed from its probabilities.
  const Matrix p = class_probs(r.model, train.inputs);
  double ce = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    ce -= std::log(p(i, train.labels[static_cast<std::size_t>(i)]));
  }
  EXPECT_LT(ce / static_cast<double>(p.rows()), std::log(10.0));
  EXPECT_EQ(r.log.method, "baseline");
  EXPECT_EQ(r.log.records[0].reward_mode, "ce");
  const auto again = train_baseline(cfg, init_params(0, a), train, test);
  EXPECT_TRUE(same_params(r.model, again.model));
}

TEST(TrainGrporm, SegmentationRunsWithUpsample) {
  ShapesOptions o;
  o.height = 4;
  o.width = 4;
  o.images = 12;
  o.bg_fraction = 0.75;
  const auto train = gen_shapes_seg(0, o);
  const auto test = gen_shapes_seg(1, o);
  Architecture a;
  a.task = TaskKind::Segmentation;
  a.input_dim = 4;
  a.encoder_widths = {8};
  a.classes = 4;
  a.grid_h = 4;
  a.grid_w = 4;
  a.upsample = 2;
  auto cfg = TrainConfig::segmentation_defaults();
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.lr_start_base = 1e-2;
  cfg.lr_end_base = 1e-3;
  std::vector<BatchEvent> events;
  const auto r = train_grporm(cfg, init_params(0, a), train, test,
                              [&events](const BatchEvent& e) { events.push_back(e); });
  EXPECT_EQ(r.log.records.size(), 3u);
  for (const auto& e : events) {
    if (e.batch == 0) EXPECT_LE(std::abs(e.loss), 1e-8);
  }
  EXPECT_EQ(seg_targets(train, 2).size(), train.masks.size() * 4);
}

TEST(Train, ErrorsCarryContext) {
  const auto b = small_blobs();
  auto cfg = quick_config(2);
  cfg.batch_size = 100000;
  try {
    train_grporm(cfg, init_params(0, class_arch(4)), b.train, b.test);
    FAIL();
  } catch (const TrainError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
  }
  cfg = quick_config(2);
  cfg.beta = 0.5;
  EXPECT_THROW(train_grporm(cfg, init_params(0, class_arch(4)), b.train, b.test),
               std::invalid_argument);
}
