// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Bottleneck residual blocks: plain ResNet, squeeze-excitation, and EPSA (the
// 3x3 convolution replaced by a PSA module).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "epsa/nn_ops.hpp"
#include "epsa/psa.hpp"

namespace epsa {

enum class BlockKind { kResnet, kSe, kEpsa };

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& text);

struct BlockSpec {
  BlockKind kind = BlockKind::kResnet;
  std::size_t in_channels = 0;
  std::size_t mid_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::optional<PsaConfig> psa;  // iff kind == kEpsa; channels/stride follow the block
  std::size_t se_reduction = 16;  // kind == kSe
  bool se_bias = false;

  bool has_projection() const { return stride != 1 || in_channels != out_channels; }
  /// PSA config with channels and stride taken from this block.
  PsaConfig resolved_psa() const;
  void validate() const;
};

/// conv1x1 -> BN -> ReLU -> (conv3x3 | PSA) -> BN -> ReLU -> conv1x1 -> BN
/// [-> SE gate] + shortcut -> ReLU. The shortcut is identity, or a strided
/// 1x1 conv + BN when the shape changes.
struct Block {
  BlockSpec spec;
  Conv2dParams reduce;
  BatchNormParams bn1;
  std::optional<Conv2dParams> spatial;  // resnet / se
  std::optional<PsaParams> psa;         // epsa
  BatchNormParams bn2;
  Conv2dParams expand;
  BatchNormParams bn3;
  std::optional<SeWeightParams> se;
  std::optional<Conv2dParams> shortcut_conv;
  std::optional<BatchNormParams> shortcut_bn;

  GradPair forward(const Tensor& x, Mode mode);
  std::size_t param_count() const;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
};

Block build_block(const BlockSpec& spec, std::uint64_t seed);
/// build_block restricted to kind == kEpsa.
Block build_epsa_block(const BlockSpec& spec, std::uint64_t seed);

/// Analytic parameter count of a block built from `spec`.
std::size_t block_param_count(const BlockSpec& spec);

}  // namespace epsa
