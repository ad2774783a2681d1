// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Pyramid squeeze attention.
//
//   F_i   = Conv(k_i x k_i, groups G_i)(input_i)      i = 0..S-1, C' channels
//   Z_i   = SEWeight(F_i)                             (N, C', 1, 1)
//   att_i = exp(Z_i) / sum_j exp(Z_j)                 softmax across the S scales
//   out   = Cat(F_0 * att_0, ..., F_{S-1} * att_{S-1})
//
// input_i is the whole feature map (BranchInput::kFull) or the i-th C' channel
// slice of it (BranchInput::kSplit).

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "epsa/nn_ops.hpp"
#include "epsa/tensor.hpp"

namespace epsa {

enum class BranchInput { kFull, kSplit };

std::string to_string(BranchInput mode);
BranchInput branch_input_from_string(const std::string& text);

/// Group count paired with an odd kernel: 2^((k-1)/2), except 1 for k = 3.
std::size_t kernel_to_group(std::size_t kernel);

struct PsaConfig {
  std::size_t channels = 0;
  std::size_t scales = 4;
  std::vector<std::size_t> kernels{3, 5, 7, 9};
  std::vector<std::size_t> groups{1, 4, 8, 16};
  std::size_t se_reduction = 16;
  std::size_t stride = 1;
  BranchInput branch_input = BranchInput::kFull;
  bool share_se = true;
  bool se_bias = false;

  /// k_i = 2(i+1)+1 and G_i = kernel_to_group(k_i).
  static PsaConfig pyramid(std::size_t channels, std::size_t scales = 4);

  std::size_t branch_channels() const { return channels / scales; }
  std::size_t branch_in_channels() const {
    return branch_input == BranchInput::kFull ? channels : branch_channels();
  }
  std::size_t se_hidden() const;
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  bool operator==(const PsaConfig&) const = default;
};

struct SeWeightParams {
  LinearParams fc0;  // C' -> hidden
  LinearParams fc1;  // hidden -> C'

  static SeWeightParams make(std::size_t channels, std::size_t reduction,
                             bool with_bias, std::uint64_t seed);
  std::size_t channels() const { return fc0.in_features(); }
  std::size_t param_count() const { return fc0.param_count() + fc1.param_count(); }
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

/// sigmoid(fc1(relu(fc0(GAP(x))))), shape (N, C', 1, 1).
Tensor se_weight(const Tensor& x, const SeWeightParams& p);
GradPair se_weight_with_grad(const Tensor& x, const SeWeightParams& p);

struct PsaParams {
  PsaConfig config;
  std::vector<Conv2dParams> branch_convs;
  std::vector<SeWeightParams> se_weights;  // 1 if shared, else S

  static PsaParams make(const PsaConfig& config, std::uint64_t seed);

  const SeWeightParams& se_for(std::size_t branch) const {
    return se_weights[config.share_se ? 0 : branch];
  }
  std::size_t param_count() const;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

/// Analytic parameter count of a PSA module with this configuration.
std::size_t psa_param_count(const PsaConfig& config);

/// Branch outputs F_0..F_{S-1}.
std::vector<Tensor> spc_forward(const Tensor& x, const PsaParams& p);

/// Every intermediate of one PSA evaluation.
struct PsaTrace {
  std::vector<Tensor> branches;  // F_i
  Tensor logits;                 // Z = Cat(Z_i), (N, C, 1, 1)
  Tensor attention;              // att = Cat(att_i), (N, C, 1, 1)
  Tensor output;
};

PsaTrace psa_trace(const Tensor& x, const PsaParams& p);
Tensor psa_forward(const Tensor& x, const PsaParams& p);
/// Gradient order: branch conv weights 0..S-1, then each SEWeight's params.
GradPair psa_with_grad(const Tensor& x, const PsaParams& p);

}  // namespace epsa
