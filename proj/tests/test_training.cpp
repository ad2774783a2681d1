// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "epsa/defaults.hpp"
#include "epsa/training.hpp"
#include "json.hpp"

namespace epsa {
namespace {

TEST(LabelSmoothedCe, MatchesDirectFormula) {
  const Tensor z({2, 3, 1, 1}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  const std::vector<std::size_t> y{1, 0};
  const double alpha = 0.1;
  double expected = 0.0;
  for (std::size_t n = 0; n < 2; ++n) {
    const double denom = std::exp(z[3 * n]) + std::exp(z[3 * n + 1]) + std::exp(z[3 * n + 2]);
    for (std::size_t c = 0; c < 3; ++c) {
      const double q = (c == y[n] ? 1.0 - alpha : 0.0) + alpha / 3.0;
      expected -= q * std::log(std::exp(z[3 * n + c]) / denom);
    }
  }
  const LossResult r = label_smoothed_ce(z, y, alpha);
  EXPECT_NEAR(r.loss, expected / 2.0, 1e-14);
  EXPECT_EQ(r.correct, 1u);  // sample 0 predicts class 1, sample 1 predicts class 2
}

TEST(LabelSmoothedCe, CountsCorrectPredictions) {
  const Tensor z({2, 3, 1, 1}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  EXPECT_EQ(label_smoothed_ce(z, std::vector<std::size_t>{1, 2}, 0.1).correct, 2u);
  EXPECT_EQ(label_smoothed_ce(z, std::vector<std::size_t>{0, 2}, 0.1).correct, 1u);
}

TEST(LabelSmoothedCe, GradientMatchesFiniteDifferences) {
  const Tensor z = random_uniform({4, 5, 1, 1}, 3, -3, 3);
  const std::vector<std::size_t> y{0, 4, 2, 2};
  const LossResult r = label_smoothed_ce(z, y, 0.1);
  const Tensor numeric = finite_difference_gradient(
      [&](const Tensor& t) { return label_smoothed_ce(t, y, 0.1).loss; }, z);
  EXPECT_LT(max_abs_diff(r.grad, numeric), 1e-6);
}

TEST(LabelSmoothedCe, BoundedBelowBySmoothedEntropy) {
  const double h = smoothed_target_entropy(4, 0.1);
  const double on = 0.925, off = 0.025;
  EXPECT_NEAR(h, -(on * std::log(on) + 3 * off * std::log(off)), 1e-15);
  // Logits matching log q reach the bound exactly.
  const Tensor z({1, 4, 1, 1}, {std::log(on), std::log(off), std::log(off), std::log(off)});
  EXPECT_NEAR(label_smoothed_ce(z, std::vector<std::size_t>{0}, 0.1).loss, h, 1e-14);
  EXPECT_EQ(smoothed_target_entropy(4, 0.0), 0.0);
}

TEST(LabelSmoothedCe, RejectsBadLabels) {
  EXPECT_THROW(label_smoothed_ce(Tensor({1, 3, 1, 1}), std::vector<std::size_t>{3}, 0.1),
               std::invalid_argument);
  EXPECT_THROW(label_smoothed_ce(Tensor({2, 3, 1, 1}), std::vector<std::size_t>{0}, 0.1),
               std::invalid_argument);
}

TEST(Sgd, MomentumAndDecayRecurrence) {
  Tensor w({1, 2, 1, 1}, {1.0, -2.0});
  Tensor b({1, 1, 1, 1}, {0.5});
  const std::vector<ParamRef> params{{"w", &w, true}, {"b", &b, false}};
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  SgdState state;
  const std::vector<Tensor> g1{Tensor({1, 2, 1, 1}, {0.2, 0.4}), Tensor({1, 1, 1, 1}, {1.0})};
  sgd_step(params, g1, state, cfg);
  // v1 = g + wd*w, w1 = w - lr*v1
  const double v1 = 0.2 + 0.01 * 1.0;
  EXPECT_DOUBLE_EQ(w[0], 1.0 - 0.1 * v1);
  EXPECT_DOUBLE_EQ(b[0], 0.5 - 0.1 * 1.0);  // no decay on b
  const double w1 = w[0];
  sgd_step(params, g1, state, cfg);
  const double v2 = 0.9 * v1 + 0.2 + 0.01 * w1;
  EXPECT_DOUBLE_EQ(w[0], w1 - 0.1 * v2);
  EXPECT_DOUBLE_EQ(b[0], 0.4 - 0.1 * (0.9 * 1.0 + 1.0));

  const std::vector<Tensor> wrong{Tensor({1, 3, 1, 1}), Tensor({1, 1, 1, 1})};
  EXPECT_THROW(sgd_step(params, wrong, state, cfg), std::invalid_argument);
}

TEST(Schedule, StepDecayCheckpoints) {
  TrainConfig cfg;  // lr 0.1, /10 every 30 epochs
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(29, cfg), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(30, cfg), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(60, cfg), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(89, cfg), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(90, cfg), 0.0001);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.label_smoothing = -0.1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(ToyDataset, DeterministicAndBalanced) {
  const ToyDataset a = make_toy_dataset(5, 32, 4, 32), b = make_toy_dataset(5, 32, 4, 32);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(make_toy_dataset(6, 32, 4, 32).images, a.images);
  std::vector<int> counts(4, 0);
  for (std::size_t l : a.labels) ++counts[l];
  for (int c : counts) EXPECT_EQ(c, 8);
  EXPECT_EQ(a.images.shape(), (Shape{32, 3, 32, 32}));
  EXPECT_THROW(make_toy_dataset(1, 3, 4, 32), std::invalid_argument);
}

TEST(ToyDataset, LinearlySeparableFromChannelStatistics) {
  // Ridge regression on per-channel means and variances: if a linear probe
  // already fits the labels, the overfit fixture is a fair test of the
  // training loop rather than of the data.
  const ToyDataset d = make_toy_dataset(defaults::kToyDataSeed, defaults::kToySamples,
                                        defaults::kToyClasses, 32);
  const std::size_t m = d.size(), hw = 32 * 32;
  Eigen::MatrixXd X(m, 7);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(m, 4);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0, sq = 0;
      for (std::size_t q = 0; q < hw; ++q) {
        const double v = d.images(i, c, q / 32, q % 32);
        s += v;
        sq += v * v;
      }
      X(i, c) = s / hw;
      X(i, 3 + c) = sq / hw - (s / hw) * (s / hw);
    }
    X(i, 6) = 1.0;
    Y(i, d.labels[i]) = 1.0;
  }
  const Eigen::MatrixXd A = X.transpose() * X + 1e-6 * Eigen::MatrixXd::Identity(7, 7);
  const Eigen::MatrixXd W = A.ldlt().solve(X.transpose() * Y);
  const Eigen::MatrixXd P = X * W;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < m; ++i) {
    Eigen::Index arg;
    P.row(i).maxCoeff(&arg);
    correct += static_cast<std::size_t>(arg) == d.labels[i];
  }
  EXPECT_GE(correct, m * 9 / 10);
}

struct ShortRun {
  static TrainConfig config(double lr) {
    TrainConfig cfg;
    cfg.lr = lr;
    cfg.batch_size = 8;
    cfg.epochs = 3;
    cfg.seed = 4;
    return cfg;
  }
  static TrainResult run(double lr) {
    const ToyDataset d = make_toy_dataset(1, 16, 4, 32);
    Model m = Model::build(toy_model_spec(4), 2);
    return train(m, d, config(lr));
  }
};

TEST(Train, ZeroLearningRateKeepsLossFlat) {
  const TrainResult r = ShortRun::run(0.0);
  ASSERT_EQ(r.history.size(), 4u);
  for (const HistoryEntry& e : r.history) EXPECT_EQ(e.loss, r.history[0].loss);
  EXPECT_TRUE(r.no_learning());
  EXPECT_FALSE(r.diverged);
  EXPECT_EQ(r.steps, 6u);
}

TEST(Train, SameSeedGivesIdenticalHistory) {
  const TrainResult a = ShortRun::run(0.05), b = ShortRun::run(0.05);
  EXPECT_EQ(history_csv(a), history_csv(b));
  EXPECT_FALSE(a.no_learning());
  EXPECT_LT(a.final_loss(), a.initial_loss());
}

TEST(Train, MaxStepsCapsTheRun) {
  const ToyDataset d = make_toy_dataset(1, 16, 4, 32);
  Model m = Model::build(toy_model_spec(4), 2);
  TrainConfig cfg = ShortRun::config(0.05);
  cfg.epochs = 10;
  cfg.max_steps = 3;
  const TrainResult r = train(m, d, cfg);
  EXPECT_EQ(r.steps, 3u);
  EXPECT_EQ(r.history.back().step, 3u);
  EXPECT_EQ(r.history.back().epoch, 2u);
}

TEST(Train, DivergenceIsFlagged) {
  const TrainResult r = ShortRun::run(1e200);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(std::isfinite(r.final_loss()));
}

TEST(Train, RejectsMismatchedHead) {
  const ToyDataset d = make_toy_dataset(1, 16, 4, 32);
  Model m = Model::build(toy_model_spec(3), 2);
  EXPECT_THROW(train(m, d, ShortRun::config(0.1)), std::invalid_argument);
}

TEST(Train, CsvAndSummaryFormats) {
  const TrainResult r = ShortRun::run(0.0);
  const std::string csv = history_csv(r);
  EXPECT_EQ(csv.rfind("epoch,step,lr,loss,accuracy\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto j = nlohmann::json::parse(summary_json(r, ShortRun::config(0.0), "epsanet_toy"));
  EXPECT_EQ(j["no_learning"], true);
  EXPECT_EQ(j["steps"], 6);
  EXPECT_EQ(j["config"]["label_smoothing"], 0.1);
}

TEST(Parameters, SaveLoadRoundTrip) {
  Model a = Model::build(toy_model_spec(4), 1), b = Model::build(toy_model_spec(4), 2);
  const auto path = std::filesystem::temp_directory_path() / "epsakit_test_params.t4";
  save_parameters(a, path.string());
  load_parameters(b, path.string());
  const Tensor x = random_uniform({2, 3, 32, 32}, 3);
  EXPECT_EQ(a.forward(x, Mode::kBatchStats).output, b.forward(x, Mode::kBatchStats).output);
  Model other = Model::build(toy_model_spec(5), 1);
  EXPECT_THROW(load_parameters(other, path.string()), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(Defaults, ToyConfigFitsTheStepBudget) {
  const TrainConfig cfg = defaults::toy_train_config();
  EXPECT_EQ(cfg.epochs * (defaults::kToySamples / cfg.batch_size), defaults::kToyStepBudget);
  EXPECT_EQ(cfg.max_steps, defaults::kToyStepBudget);
  EXPECT_EQ(cfg.label_smoothing, 0.1);
  EXPECT_EQ(cfg.momentum, 0.9);
  EXPECT_EQ(cfg.weight_decay, 1e-4);
}

}  // namespace
}  // namespace epsa
