// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Analytic parameter and FLOP accounting.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epsa/model.hpp"

namespace epsa {

enum class FlopConvention {
  kMacConvLinear,  // 1 multiply-accumulate = 1 FLOP, conv + linear only
  kMacAllLayers,   // as above plus one op per BN/activation/pool/elementwise output
  kTwoPerMac,      // 2 FLOPs per multiply-accumulate, conv + linear only
};

std::string to_string(FlopConvention c);
std::string describe_convention(FlopConvention c);

struct LayerCost {
  std::string name;
  std::string kind;  // conv | linear | bn | relu | sigmoid | pool | softmax | mul | add
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t other_ops = 0;  // non-MAC elementwise work
  std::int64_t flops = 0;      // under the report's convention
  Shape output;
};

struct ComplexityReport {
  std::string model_name;
  Shape input;
  std::int64_t total_params = 0;
  std::int64_t total_flops = 0;
  std::vector<LayerCost> per_layer;
  FlopConvention convention = FlopConvention::kMacConvLinear;
};

Shape default_input_shape(std::size_t input_size = 224);

ComplexityReport analyze(const ModelSpec& spec, Shape input = default_input_shape(),
                         FlopConvention convention = FlopConvention::kMacConvLinear);

/// Exact count by enumerating the model's trainable tensors.
std::int64_t count_params(Model& model);
std::int64_t count_params(const ModelSpec& spec);
std::int64_t count_flops(const ModelSpec& spec, Shape input = default_input_shape(),
                         FlopConvention convention = FlopConvention::kMacConvLinear);

/// Published ResNet-50 anchor used to fix the counting convention.
inline constexpr double kResnet50FlopAnchor = 4.12e9;
inline constexpr double kCalibrationTolerance = 0.03;

struct Calibration {
  FlopConvention convention;
  double resnet50_flops;
  double relative_miss;  // |flops / anchor - 1|
};

/// Keeps kMacConvLinear if ResNet-50 lands within 3% of the anchor, otherwise
/// switches to whichever other convention lands closest.
Calibration calibrate_convention();

/// Two-decimal, round-half-up renderings ("22.56", "3.62").
std::string format_millions(std::int64_t value);
std::string format_giga(std::int64_t value);
/// Signed percentage with one decimal ("-11.7").
std::string format_percent(double value);

struct ComparisonRow {
  std::string model_name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  double params_delta_pct = 0.0;  // relative to the baseline row
  double flops_delta_pct = 0.0;
};

std::vector<ComparisonRow> compare(std::span<const ComplexityReport> reports,
                                   std::size_t baseline = 0);

std::string report_json(const ComplexityReport& report, int indent = 2);
std::string report_text(const ComplexityReport& report, bool per_layer = false);
std::string comparison_json(std::span<const ComplexityReport> reports,
                            std::size_t baseline = 0, int indent = 2);
std::string comparison_text(std::span<const ComplexityReport> reports,
                            std::size_t baseline = 0);

}  // namespace epsa
