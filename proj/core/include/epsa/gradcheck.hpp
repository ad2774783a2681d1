// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Finite-difference verification of every backward pass. Each check draws a
// fixed random projection R and differentiates f = sum(R * op(x)) with
// respect to the input and to every parameter tensor.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "epsa/nn_ops.hpp"

namespace epsa {

enum class GradcheckScope { kOps, kPsa, kBlock };

std::string to_string(GradcheckScope scope);
/// Throws std::invalid_argument for anything but "ops", "psa" or "block".
GradcheckScope gradcheck_scope_from_string(const std::string& text);

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Test hook: perturb every analytic gradient by 1% before comparing.
  bool corrupt_backward = false;
};

struct GradcheckEntry {
  std::string name;     // e.g. "conv2d[grouped]"
  std::string shape;    // input shape
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;  // number of finite differences taken
  bool passed = false;
};

struct GradcheckReport {
  GradcheckScope scope = GradcheckScope::kOps;
  GradcheckOptions options;
  std::vector<GradcheckEntry> entries;

  bool passed() const;
  double max_rel_error() const;
};

/// Differentiates f = sum(projection * forward(x).output) against the input
/// and each tensor in `params`, which `forward` must read through. The
/// backward's param gradients must line up with `params`.
GradcheckEntry check_gradients(const std::string& name,
                               const std::function<GradPair(const Tensor&)>& forward,
                               const Tensor& x, const std::vector<Tensor*>& params,
                               const GradcheckOptions& options);

GradcheckReport run_gradcheck(GradcheckScope scope, const GradcheckOptions& options = {});

std::string gradcheck_text(const GradcheckReport& report);
std::string gradcheck_json(const GradcheckReport& report, int indent = 2);

}  // namespace epsa
