// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Neural operators with explicit backward passes. Each differentiable op
// returns a GradPair: the forward output plus a closure mapping the upstream
// gradient to the input gradient and the parameter gradients. Parameter
// gradients are listed in the same order the parameters are enumerated by the
// corresponding `collect_params`.
//
// Backward closures hold references to the parameter structs they were
// created from; the params must outlive the closure.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "epsa/tensor.hpp"

namespace epsa {

/// kTrain normalises with batch statistics and updates BN running stats;
/// kBatchStats normalises with batch statistics without touching them;
/// kEval uses the running stats.
enum class Mode { kTrain, kEval, kBatchStats };

struct Gradients {
  Tensor input;
  std::vector<Tensor> params;
};

struct GradPair {
  Tensor output;
  std::function<Gradients(const Tensor&)> backward;
};

/// Mutable handle onto a trainable tensor, used by optimisers and
/// serialisation. `decay` marks tensors that receive weight decay.
struct ParamRef {
  std::string name;
  Tensor* value;
  bool decay;
};

// ---- convolution ----------------------------------------------------------

struct Conv2dParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  Tensor weight;                // (out, in/groups, k, k)
  std::optional<Tensor> bias;   // (1, out, 1, 1)

  /// He-uniform initialised weights, bound sqrt(6 / fan_in).
  static Conv2dParams make(std::size_t in_channels, std::size_t out_channels,
                           std::size_t kernel, std::size_t stride,
                           std::size_t padding, std::size_t groups,
                           bool with_bias, std::uint64_t seed);

  void validate() const;
  std::size_t output_extent(std::size_t extent) const {
    return (extent + 2 * padding - kernel) / stride + 1;
  }
  std::size_t param_count() const;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

/// Number of weights + biases a convolution of this geometry carries.
std::size_t conv2d_param_count(std::size_t in_channels, std::size_t out_channels,
                               std::size_t kernel, std::size_t groups,
                               bool with_bias);

GradPair conv2d(const Tensor& x, const Conv2dParams& p);

// ---- pooling --------------------------------------------------------------

Tensor global_avg_pool(const Tensor& x);
GradPair global_avg_pool_with_grad(const Tensor& x);

GradPair max_pool(const Tensor& x, std::size_t kernel = 3, std::size_t stride = 2,
                  std::size_t padding = 1);

// ---- fully connected ------------------------------------------------------

struct LinearParams {
  Tensor weight;               // (out_features, in_features, 1, 1)
  std::optional<Tensor> bias;  // (1, out_features, 1, 1)

  static LinearParams make(std::size_t in_features, std::size_t out_features,
                           bool with_bias, std::uint64_t seed);
  /// Explicit row-major matrix constructor (out x in).
  static LinearParams from_matrix(std::size_t out_features,
                                  std::size_t in_features,
                                  std::vector<double> weight,
                                  std::optional<std::vector<double>> bias = {});

  std::size_t in_features() const { return weight.shape().c; }
  std::size_t out_features() const { return weight.shape().n; }
  std::size_t param_count() const;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

/// Affine map per sample. Input (N, C, H, W) is read as N feature vectors of
/// length C*H*W; output is (N, out_features, 1, 1).
GradPair linear(const Tensor& x, const LinearParams& p);

// ---- activations ----------------------------------------------------------

GradPair relu(const Tensor& x);
GradPair sigmoid(const Tensor& x);

/// Softmax across S scales. `z` is (N, S*C', 1, 1) laid out scale-major
/// (channel i*C' + c holds scale i, position c). Max-subtracted for stability.
Tensor softmax_over_scales(const Tensor& z, std::size_t scales);
GradPair softmax_over_scales_with_grad(const Tensor& z, std::size_t scales);

// ---- batch norm -----------------------------------------------------------

struct BatchNormParams {
  Tensor gamma;         // (1, C, 1, 1)
  Tensor beta;          // (1, C, 1, 1)
  Tensor running_mean;  // (1, C, 1, 1)
  Tensor running_var;   // (1, C, 1, 1)
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormParams make(std::size_t channels);
  std::size_t channels() const { return gamma.shape().c; }
  std::size_t param_count() const { return 2 * channels(); }
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

/// Batch statistics use the biased variance; the running variance is updated
/// with the unbiased one. Only Mode::kTrain writes to `p`.
GradPair batch_norm(const Tensor& x, BatchNormParams& p, Mode mode);

// ---- verification ---------------------------------------------------------

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double epsilon = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace epsa
