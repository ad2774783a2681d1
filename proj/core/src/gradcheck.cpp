// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "epsa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "epsa/blocks.hpp"
#include "epsa/psa.hpp"
#include "json.hpp"

namespace epsa {
namespace {

std::vector<Tensor*> pointers(std::vector<ParamRef> refs) {
  std::vector<Tensor*> out;
  out.reserve(refs.size());
  for (const ParamRef& r : refs) out.push_back(r.value);
  return out;
}

template <typename P>
std::vector<Tensor*> params_of(P& p) {
  std::vector<ParamRef> refs;
  p.collect_params("", refs);
  return pointers(std::move(refs));
}

// Seeds for the pieces of one check are derived from the scope seed and a
// per-check salt so adding a check does not perturb the others.
struct Seeds {
  std::uint64_t base;
  std::uint64_t salt = 0;
  std::uint64_t next() { return mix_seed(base, ++salt); }
};

Tensor input(Shape s, Seeds& seeds) { return random_uniform(s, seeds.next(), -1.0, 1.0); }

void ops_suite(const GradcheckOptions& o, std::vector<GradcheckEntry>& out) {
  Seeds seeds{mix_seed(o.seed, 100)};
  const auto conv_case = [&](const std::string& name, Shape s, std::size_t oc, std::size_t k,
                             std::size_t stride, std::size_t pad, std::size_t groups,
                             bool bias) {
    Conv2dParams p = Conv2dParams::make(s.c, oc, k, stride, pad, groups, bias, seeds.next());
    out.push_back(check_gradients(
        name, [&](const Tensor& x) { return conv2d(x, p); }, input(s, seeds), params_of(p),
        o));
  };
  conv_case("conv2d[3x3]", {2, 4, 6, 6}, 6, 3, 1, 1, 1, true);
  conv_case("conv2d[grouped]", {2, 8, 6, 6}, 8, 5, 1, 2, 4, false);
  conv_case("conv2d[depthwise]", {1, 4, 5, 5}, 4, 3, 1, 1, 4, false);
  conv_case("conv2d[strided]", {2, 6, 7, 7}, 4, 3, 2, 1, 2, true);
  conv_case("conv2d[1x1]", {2, 16, 4, 4}, 8, 1, 1, 0, 1, false);

  {
    LinearParams p = LinearParams::make(12, 5, true, seeds.next());
    out.push_back(check_gradients(
        "linear", [&](const Tensor& x) { return linear(x, p); }, input({2, 12, 1, 1}, seeds),
        params_of(p), o));
  }
  {
    BatchNormParams p = BatchNormParams::make(5);
    p.gamma = random_uniform(p.gamma.shape(), seeds.next(), 0.5, 1.5);
    p.beta = random_uniform(p.beta.shape(), seeds.next(), -0.5, 0.5);
    out.push_back(check_gradients(
        "batch_norm[batch]",
        [&](const Tensor& x) { return batch_norm(x, p, Mode::kBatchStats); },
        input({2, 5, 4, 4}, seeds), params_of(p), o));
    p.running_mean = random_uniform(p.running_mean.shape(), seeds.next(), -0.3, 0.3);
    p.running_var = random_uniform(p.running_var.shape(), seeds.next(), 0.5, 2.0);
    out.push_back(check_gradients(
        "batch_norm[eval]", [&](const Tensor& x) { return batch_norm(x, p, Mode::kEval); },
        input({2, 5, 4, 4}, seeds), params_of(p), o));
  }
  out.push_back(check_gradients("relu", relu, input({2, 6, 5, 5}, seeds), {}, o));
  out.push_back(check_gradients(
      "sigmoid", sigmoid, random_uniform({2, 6, 5, 5}, seeds.next(), -4.0, 4.0), {}, o));
  out.push_back(check_gradients("global_avg_pool", global_avg_pool_with_grad,
                                input({2, 6, 5, 5}, seeds), {}, o));
  out.push_back(check_gradients(
      "max_pool", [](const Tensor& x) { return max_pool(x); }, input({2, 4, 8, 8}, seeds), {},
      o));
  out.push_back(check_gradients(
      "softmax_over_scales",
      [](const Tensor& x) { return softmax_over_scales_with_grad(x, 4); },
      random_uniform({2, 12, 1, 1}, seeds.next(), -3.0, 3.0), {}, o));
  {
    SeWeightParams p = SeWeightParams::make(8, 2, true, seeds.next());
    out.push_back(check_gradients(
        "se_weight", [&](const Tensor& x) { return se_weight_with_grad(x, p); },
        input({2, 8, 5, 5}, seeds), params_of(p), o));
  }
}

void psa_suite(const GradcheckOptions& o, std::vector<GradcheckEntry>& out) {
  Seeds seeds{mix_seed(o.seed, 200)};
  const auto psa_case = [&](const std::string& name, PsaConfig cfg, Shape s) {
    PsaParams p = PsaParams::make(cfg, seeds.next());
    out.push_back(check_gradients(
        name, [&](const Tensor& x) { return psa_with_grad(x, p); }, input(s, seeds),
        params_of(p), o));
  };
  PsaConfig base = PsaConfig::pyramid(16);
  base.groups = {1, 2, 4, 4};
  base.se_reduction = 2;
  psa_case("psa[full,shared-se]", base, {2, 16, 8, 8});

  PsaConfig split = base;
  split.branch_input = BranchInput::kSplit;
  psa_case("psa[split]", split, {2, 16, 8, 8});

  PsaConfig per_branch = base;
  per_branch.share_se = false;
  per_branch.se_bias = true;
  psa_case("psa[per-branch-se,bias]", per_branch, {2, 16, 8, 8});

  PsaConfig strided = base;
  strided.stride = 2;
  psa_case("psa[stride2]", strided, {2, 16, 8, 8});

  PsaConfig two = PsaConfig::pyramid(8, 2);
  two.groups = {1, 2};
  two.se_reduction = 2;
  psa_case("psa[S=2]", two, {2, 8, 6, 6});
}

void block_suite(const GradcheckOptions& o, std::vector<GradcheckEntry>& out) {
  Seeds seeds{mix_seed(o.seed, 300)};
  const auto block_case = [&](const std::string& name, BlockSpec spec, Shape s) {
    Block b = build_block(spec, seeds.next());
    out.push_back(check_gradients(
        name, [&](const Tensor& x) { return b.forward(x, Mode::kBatchStats); },
        input(s, seeds), params_of(b), o));
  };
  PsaConfig psa = PsaConfig::pyramid(8);
  psa.groups = {1, 2, 2, 2};
  psa.se_reduction = 2;

  block_case("block[epsa,identity]", {BlockKind::kEpsa, 16, 8, 16, 1, psa}, {2, 16, 6, 6});
  block_case("block[epsa,projection]", {BlockKind::kEpsa, 8, 8, 16, 2, psa}, {2, 8, 8, 8});
  block_case("block[resnet]", {BlockKind::kResnet, 8, 4, 16, 2, std::nullopt}, {2, 8, 6, 6});
  BlockSpec se{BlockKind::kSe, 16, 4, 16, 1, std::nullopt};
  se.se_reduction = 4;
  block_case("block[se]", se, {2, 16, 5, 5});
}

}  // namespace

std::string to_string(GradcheckScope scope) {
  switch (scope) {
    case GradcheckScope::kOps: return "ops";
    case GradcheckScope::kPsa: return "psa";
    case GradcheckScope::kBlock: return "block";
  }
  return "?";
}

GradcheckScope gradcheck_scope_from_string(const std::string& text) {
  if (text == "ops") return GradcheckScope::kOps;
  if (text == "psa") return GradcheckScope::kPsa;
  if (text == "block") return GradcheckScope::kBlock;
  throw std::invalid_argument("unknown gradcheck scope '" + text +
                              "' (expected ops, psa or block)");
}

bool GradcheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const GradcheckEntry& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradcheckEntry check_gradients(const std::string& name,
                               const std::function<GradPair(const Tensor&)>& forward,
                               const Tensor& x, const std::vector<Tensor*>& params,
                               const GradcheckOptions& options) {
  GradPair pair = forward(x);
  const Tensor projection =
      random_uniform(pair.output.shape(), mix_seed(options.seed, x.size()), -1.0, 1.0);
  Gradients analytic = pair.backward(projection);
  if (analytic.params.size() != params.size())
    throw std::logic_error(name + ": backward returned " +
                           std::to_string(analytic.params.size()) + " parameter gradients for " +
                           std::to_string(params.size()) + " parameters");
  if (options.corrupt_backward) {
    analytic.input = scale(analytic.input, 1.01);
    for (Tensor& g : analytic.params) g = scale(g, 1.01);
  }

  const auto loss = [&](const Tensor& in) { return dot(projection, forward(in).output); };
  GradcheckEntry e;
  e.name = name;
  e.shape = x.shape().str();

  const Tensor numeric_x = finite_difference_gradient(loss, x, options.epsilon);
  e.max_rel_error = max_relative_error(analytic.input, numeric_x);
  e.coordinates = x.size();

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i];
    Tensor numeric(w.shape());
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + options.epsilon;
      const double up = loss(x);
      w[j] = saved - options.epsilon;
      const double down = loss(x);
      w[j] = saved;
      numeric[j] = (up - down) / (2.0 * options.epsilon);
    }
    e.max_rel_error = std::max(e.max_rel_error, max_relative_error(analytic.params[i], numeric));
    e.coordinates += w.size();
  }
  e.passed = std::isfinite(e.max_rel_error) && e.max_rel_error < options.tolerance;
  return e;
}

GradcheckReport run_gradcheck(GradcheckScope scope, const GradcheckOptions& options) {
  GradcheckReport r;
  r.scope = scope;
  r.options = options;
  switch (scope) {
    case GradcheckScope::kOps: ops_suite(options, r.entries); break;
    case GradcheckScope::kPsa: psa_suite(options, r.entries); break;
    case GradcheckScope::kBlock: block_suite(options, r.entries); break;
  }
  return r;
}

std::string gradcheck_text(const GradcheckReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "gradcheck %s  seed=%llu  eps=%.0e  tol=%.0e\n",
                to_string(r.scope).c_str(), static_cast<unsigned long long>(r.options.seed),
                r.options.epsilon, r.options.tolerance);
  os << line;
  for (const GradcheckEntry& e : r.entries) {
    std::snprintf(line, sizeof line, "  %-26s %-14s %7zu coords  max_rel_err %.3e  %s\n",
                  e.name.c_str(), e.shape.c_str(), e.coordinates, e.max_rel_error,
                  e.passed ? "ok" : "FAIL");
    os << line;
  }
  std::snprintf(line, sizeof line, "%s (%zu checks, worst %.3e)\n",
                r.passed() ? "PASSED" : "FAILED", r.entries.size(), r.max_rel_error());
  os << line;
  return os.str();
}

std::string gradcheck_json(const GradcheckReport& r, int indent) {
  nlohmann::json entries = nlohmann::json::array();
  for (const GradcheckEntry& e : r.entries)
    entries.push_back({{"name", e.name},
                       {"input_shape", e.shape},
                       {"coordinates", e.coordinates},
                       {"max_rel_error", e.max_rel_error},
                       {"passed", e.passed}});
  nlohmann::json j{{"scope", to_string(r.scope)},
                   {"seed", r.options.seed},
                   {"epsilon", r.options.epsilon},
                   {"tolerance", r.options.tolerance},
                   {"passed", r.passed()},
                   {"max_rel_error", r.max_rel_error()},
                   {"entries", entries}};
  return j.dump(indent);
}

}  // namespace epsa
