// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Desk-scale defaults shared by the CLI, tests and the acceptance suite.
// Values here are frozen regression fixtures: changing any of them requires
// bumping kVersion.

#pragma once

#include <cstddef>
#include <cstdint>

#include "epsa/training.hpp"

namespace epsa::defaults {

inline constexpr int kVersion = 1;

inline namespace v1 {

// Overfit fixture.
inline constexpr std::size_t kToySamples = 32;
inline constexpr std::size_t kToyClasses = 4;
inline constexpr std::size_t kToyImageSize = 64;
inline constexpr std::uint64_t kToyDataSeed = 20260101;
inline constexpr std::uint64_t kToyModelSeed = 7;
inline constexpr std::uint64_t kToyShuffleSeed = 11;
inline constexpr std::size_t kToyBatchSize = 8;
inline constexpr std::size_t kToyStepBudget = 200;
inline constexpr double kToyLearningRate = 0.05;
inline constexpr double kToyTargetAccuracy = 0.95;

// Gradient checks.
inline constexpr double kGradcheckEpsilon = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr std::uint64_t kGradcheckSeed = 1;

// Attention invariant sweep.
inline constexpr std::size_t kAttentionTrials = 1000;
inline constexpr std::uint64_t kAttentionSeed = 2026;

/// Training configuration for the overfit fixture. The step budget covers
/// kToyStepBudget / (kToySamples / kToyBatchSize) epochs; the decay step is
/// left at the ImageNet value of 30 epochs.
inline TrainConfig toy_train_config() {
  TrainConfig cfg;
  cfg.lr = kToyLearningRate;
  cfg.batch_size = kToyBatchSize;
  cfg.epochs = kToyStepBudget / (kToySamples / kToyBatchSize);
  cfg.max_steps = kToyStepBudget;
  cfg.seed = kToyShuffleSeed;
  return cfg;
}

}  // namespace v1
}  // namespace epsa::defaults
