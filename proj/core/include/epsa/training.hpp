// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Desk-scale training: label-smoothed cross-entropy, SGD with momentum and
// L2 weight decay, step learning-rate schedule, and a synthetic dataset.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epsa/model.hpp"

namespace epsa {

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double label_smoothing = 0.1;
  double lr_decay_factor = 10.0;
  std::size_t lr_decay_every = 30;  // epochs
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: no cap
  std::uint64_t seed = 0;

  void validate() const;
};

/// lr * decay_factor^-floor(epoch / decay_every)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, same shape as the logits
  std::size_t correct = 0;
};

/// Lower bound of label_smoothed_ce: the entropy of the smoothed target.
double smoothed_target_entropy(std::size_t classes, double alpha);

/// Cross-entropy against (1 - alpha) * onehot + alpha / K, averaged over the
/// batch. `logits` is (N, K, 1, 1).
LossResult label_smoothed_ce(const Tensor& logits, std::span<const std::size_t> labels,
                             double alpha);

struct SgdState {
  std::vector<Tensor> velocity;
};

/// v <- momentum * v + grad + wd * param (wd only where ParamRef::decay);
/// param <- param - lr * v.
void sgd_step(std::span<const ParamRef> params, std::span<const Tensor> grads,
              SgdState& state, const TrainConfig& cfg);

struct ToyDataset {
  Tensor images;  // (M, 3, H, W)
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> gather_labels(std::span<const std::size_t> indices) const;
};

/// Class-dependent colour offset plus an oriented sinusoid of class-specific
/// frequency, random phase per image, Gaussian noise. Classes are balanced.
ToyDataset make_toy_dataset(std::uint64_t seed, std::size_t samples, std::size_t classes,
                            std::size_t size);

struct HistoryEntry {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;        // label-smoothed objective
  double plain_loss = 0.0;  // unsmoothed cross-entropy, same forward pass
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<HistoryEntry> history;  // row 0 is the pre-training evaluation
  bool diverged = false;
  std::size_t steps = 0;

  double initial_loss() const { return history.front().loss; }
  double final_loss() const { return history.back().loss; }
  double final_accuracy() const { return history.back().accuracy; }
  /// Net decrease of the unsmoothed cross-entropy, 1 - final / initial. The
  /// smoothed objective is bounded below by the entropy of the smoothed
  /// target, so its relative decrease is capped well short of 1.
  double plain_loss_reduction() const;
  bool no_learning() const;
};

/// Whole-dataset loss/accuracy in fixed order with batch statistics
/// (Mode::kBatchStats), so repeated evaluations of unchanged weights agree
/// bit for bit.
HistoryEntry evaluate(Model& model, const ToyDataset& data, double alpha);

/// Minibatch SGD over shuffled epochs. One history row per epoch, evaluated
/// after the epoch; stops early on a non-finite loss (diverged = true) or
/// when max_steps is reached.
TrainResult train(Model& model, const ToyDataset& data, const TrainConfig& cfg);

/// Trainable tensors in parameters() order, one .t4 record each.
void save_parameters(Model& model, const std::string& path);
/// Throws std::runtime_error if the file does not match the model layout.
void load_parameters(Model& model, const std::string& path);

std::string history_csv(const TrainResult& result);
std::string summary_json(const TrainResult& result, const TrainConfig& cfg,
                         const std::string& model_name, int indent = 2);

}  // namespace epsa
