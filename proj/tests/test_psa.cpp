// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "epsa/gradcheck.hpp"
#include "epsa/model.hpp"
#include "epsa/psa.hpp"
#include "oracles.hpp"

namespace epsa {
namespace {

using oracle::psa_oracle;

PsaConfig small_config(BranchInput mode = BranchInput::kFull) {
  PsaConfig cfg = PsaConfig::pyramid(8);
  cfg.groups = {1, 2, 2, 2};
  cfg.branch_input = mode;
  return cfg;
}

TEST(PsaConfig, PyramidRule) {
  const PsaConfig cfg = PsaConfig::pyramid(256);
  EXPECT_EQ(cfg.kernels, (std::vector<std::size_t>{3, 5, 7, 9}));
  EXPECT_EQ(cfg.groups, (std::vector<std::size_t>{1, 4, 8, 16}));
  EXPECT_EQ(kernel_to_group(3), 1u);
  EXPECT_EQ(kernel_to_group(5), 4u);
  EXPECT_EQ(kernel_to_group(7), 8u);
  EXPECT_EQ(kernel_to_group(9), 16u);
  EXPECT_EQ(kernel_to_group(11), 32u);
  EXPECT_THROW(kernel_to_group(4), std::invalid_argument);
  EXPECT_THROW(kernel_to_group(1), std::invalid_argument);
}

TEST(PsaConfig, ValidationNamesTheProblem) {
  PsaConfig cfg = PsaConfig::pyramid(30);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);  // 30 % 4 != 0
  cfg = PsaConfig::pyramid(64);
  cfg.groups = {1, 4, 8, 32};  // 32 does not divide C/S = 16
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = PsaConfig::pyramid(64);
  cfg.kernels = {3, 5, 7};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = PsaConfig::pyramid(64);
  cfg.kernels[1] = 4;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_NO_THROW(PsaConfig::pyramid(64).validate());
}

TEST(Psa, MatchesStraightLineOracle) {
  for (BranchInput mode : {BranchInput::kFull, BranchInput::kSplit}) {
    const PsaParams p = PsaParams::make(small_config(mode), 21);
    const Tensor x = random_uniform({1, 8, 4, 4}, 22, -1, 1);
    EXPECT_LT(max_abs_diff(psa_forward(x, p), psa_oracle(x, p)), 1e-12) << to_string(mode);
  }
}

TEST(Psa, OracleAgreementWithPerBranchBiasedSe) {
  PsaConfig cfg = small_config();
  cfg.share_se = false;
  cfg.se_bias = true;
  cfg.se_reduction = 1;
  const PsaParams p = PsaParams::make(cfg, 3);
  const Tensor x = random_uniform({1, 8, 5, 3}, 4, -2, 2);
  EXPECT_LT(max_abs_diff(psa_forward(x, p), psa_oracle(x, p)), 1e-12);
}

TEST(Psa, WithGradForwardMatchesPlainForward) {
  const PsaParams p = PsaParams::make(small_config(), 5);
  const Tensor x = random_uniform({2, 8, 6, 6}, 6, -1, 1);
  EXPECT_EQ(psa_with_grad(x, p).output, psa_forward(x, p));
}

TEST(Psa, AttentionInvariantsAcrossRandomInputs) {
  for (const AblationConfig& a : ablation_configs()) {
    const PsaParams p = PsaParams::make(a.psa, 9);
    const std::size_t cb = a.psa.branch_channels();
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      const Tensor x = random_uniform({1, 64, 6, 6}, mix_seed(10, trial), -3, 3);
      const PsaTrace t = psa_trace(x, p);
      EXPECT_EQ(t.output.shape(), x.shape()) << a.label;
      for (std::size_t c = 0; c < cb; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
          const double v = t.attention[i * cb + c];
          EXPECT_GT(v, 0.0);
          EXPECT_LT(v, 1.0);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-10);
      }
    }
  }
}

TEST(Psa, SigmoidBoundsAttentionBetweenTheLimits) {
  // SE logits lie in (0, 1), so with S scales every attention weight lies in
  // (1 / (1 + (S-1)e), e / (e + S - 1)).
  const PsaParams p = PsaParams::make(small_config(), 7);
  const PsaTrace t = psa_trace(random_uniform({3, 8, 5, 5}, 8, -50, 50), p);
  const double e = std::exp(1.0);
  for (double v : t.attention.data()) {
    EXPECT_GT(v, 1.0 / (1.0 + 3.0 * e));
    EXPECT_LT(v, e / (e + 3.0));
  }
}

TEST(Psa, UniformAttentionWhenSeLogitsAreEqual) {
  PsaParams p = PsaParams::make(small_config(), 12);
  for (SeWeightParams& se : p.se_weights) se.fc1.weight = zeros(se.fc1.weight.shape());
  const Tensor x = random_uniform({2, 8, 4, 4}, 13, -1, 1);
  const PsaTrace t = psa_trace(x, p);
  for (double v : t.attention.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_LT(max_abs_diff(t.output, scale(concat_channels(t.branches), 0.25)), 1e-15);
}

TEST(Psa, SplitModeBranchesSeeOnlyTheirSlice) {
  const PsaParams p = PsaParams::make(small_config(BranchInput::kSplit), 14);
  const Tensor x = random_uniform({1, 8, 4, 4}, 15, -1, 1);
  Tensor y = x;
  for (std::size_t c = 4; c < 6; ++c)  // perturb slice 2 only
    for (std::size_t q = 0; q < 16; ++q) y(0, c, q / 4, q % 4) += 0.7;
  const std::vector<Tensor> a = spc_forward(x, p), b = spc_forward(y, p);
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(a[1], b[1]);
  EXPECT_NE(a[2], b[2]);
  EXPECT_EQ(a[3], b[3]);
}

TEST(Psa, FullModeBranchesSeeEveryChannel) {
  const PsaParams p = PsaParams::make(small_config(BranchInput::kFull), 14);
  const Tensor x = random_uniform({1, 8, 4, 4}, 15, -1, 1);
  Tensor y = x;
  y(0, 7, 1, 1) += 0.5;
  const std::vector<Tensor> a = spc_forward(x, p), b = spc_forward(y, p);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NE(a[i], b[i]) << i;
}

TEST(Psa, SpatialSizeFollowsStride) {
  PsaConfig cfg = small_config();
  cfg.stride = 2;
  const PsaParams p = PsaParams::make(cfg, 1);
  EXPECT_EQ(psa_forward(Tensor({1, 8, 7, 7}), p).shape(), (Shape{1, 8, 4, 4}));
  EXPECT_THROW(psa_forward(Tensor({1, 6, 7, 7}), p), std::invalid_argument);
}

TEST(Psa, ParamCountMatchesFormula) {
  // Full input, shared bias-free SE:
  //   sum_i (C / G_i) k_i^2 (C / S)  +  2 (C / S) max(C / (S r), 1)
  for (std::size_t channels : {64, 128, 256, 512}) {
    const PsaConfig cfg = PsaConfig::pyramid(channels);
    const std::size_t cb = channels / 4;
    std::size_t expected = 0;
    for (std::size_t i = 0; i < 4; ++i)
      expected += channels / cfg.groups[i] * cfg.kernels[i] * cfg.kernels[i] * cb;
    expected += 2 * cb * std::max<std::size_t>(cb / 16, 1);
    EXPECT_EQ(psa_param_count(cfg), expected);
    EXPECT_EQ(PsaParams::make(cfg, 0).param_count(), expected);
  }
  PsaConfig per_branch = PsaConfig::pyramid(64);
  per_branch.share_se = false;
  per_branch.se_bias = true;
  EXPECT_EQ(psa_param_count(per_branch), PsaParams::make(per_branch, 0).param_count());
}

TEST(Psa, GradcheckSuitePasses) {
  const GradcheckReport r = run_gradcheck(GradcheckScope::kPsa, {.seed = 7});
  for (const GradcheckEntry& e : r.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
  EXPECT_EQ(gradcheck_json(r), gradcheck_json(run_gradcheck(GradcheckScope::kPsa, {.seed = 7})));
}

}  // namespace
}  // namespace epsa
