// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Declarative network descriptions and the ResNet-style backbone built from
// them: 7x7/2 stem conv, 3x3/2 max pool, bottleneck stages, global average
// pool and a linear classifier.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "epsa/blocks.hpp"

namespace epsa {

struct StageSpec {
  std::size_t repeats = 1;
  std::size_t mid_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;  // applied by the first block
  BlockKind kind = BlockKind::kResnet;
  std::optional<PsaConfig> psa;  // template; channels/stride come from the block
  std::size_t se_reduction = 16;

  bool operator==(const StageSpec&) const = default;
};

struct ModelSpec {
  std::string name;
  std::size_t num_classes = 1000;
  std::size_t in_channels = 3;
  std::size_t stem_channels = 64;
  std::vector<StageSpec> stages;

  /// Per-block specs in execution order.
  std::vector<BlockSpec> block_specs() const;
  std::size_t feature_channels() const;
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

/// The eight canonical names: resnet50, resnet101, senet50, senet101,
/// epsanet50_small, epsanet50_large, epsanet101_small, epsanet101_large.
const std::vector<std::string>& model_names();
/// Throws std::invalid_argument for unknown names.
ModelSpec model_spec(std::string_view name);

/// Two-stage EPSA network (widths 32/64, 16-channel stem) for desk-scale
/// training runs.
ModelSpec toy_model_spec(std::size_t num_classes);

std::string model_spec_to_json(const ModelSpec& spec, int indent = 2);
ModelSpec model_spec_from_json(std::string_view text);
ModelSpec load_model_spec(const std::string& path);

class Model {
 public:
  static Model build(const ModelSpec& spec, std::uint64_t seed);

  /// Logits (N, num_classes, 1, 1). Gradient params follow parameters().
  GradPair forward(const Tensor& x, Mode mode);
  Tensor predict(const Tensor& x) { return forward(x, Mode::kEval).output; }

  std::vector<ParamRef> parameters();
  std::size_t param_count() const;

  const ModelSpec& spec() const { return spec_; }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  ModelSpec spec_;
  Conv2dParams stem_conv_;
  BatchNormParams stem_bn_;
  std::vector<Block> blocks_;
  LinearParams head_;
};

/// Spatial extent after the stem conv, after the stem pool, and after each
/// stage, for a square input of side `input_size`.
struct SpatialTrace {
  std::size_t stem = 0;
  std::size_t pool = 0;
  std::vector<std::size_t> stages;
};
SpatialTrace trace_spatial(const ModelSpec& spec, std::size_t input_size);

struct LayerRow {
  std::string output;  // e.g. "56×56"
  std::string layer;   // e.g. "[1×1,64; PSA,64; 1×1,256] ×3"
  std::size_t output_size = 0;
};

struct Description {
  ModelSpec spec;
  std::size_t input_size = 224;
  SpatialTrace trace;
  std::vector<LayerRow> rows;  // stem, pool, stages..., head
};

Description describe(const ModelSpec& spec, std::size_t input_size = 224);
/// "[1×1,64; PSA,64; 1×1,256] ×3"
std::string stage_bracket(const StageSpec& stage);
std::string describe_text(const Description& d);
/// The model-config JSON plus input_size, per-stage output_size and bracket,
/// and the layer rows. Parses back through model_spec_from_json.
std::string describe_json(const Description& d, int indent = 2);

/// Group-size ablation over kernels (3,5,7,9).
struct AblationConfig {
  std::string label;
  PsaConfig psa;
  bool is_default = false;
};
std::vector<AblationConfig> ablation_configs();
/// EPSANet-50 (Small layout) with every PSA using the ablation groups.
ModelSpec ablation_model_spec(const AblationConfig& config);

}  // namespace epsa
