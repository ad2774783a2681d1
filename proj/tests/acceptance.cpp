// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "epsa/complexity.hpp"
#include "epsa/defaults.hpp"
#include "epsa/gradcheck.hpp"
#include "epsa/parallel.hpp"
#include "epsa/training.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace epsa {
namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool passed = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) {
    if (passed) detail += (detail.empty() ? "" : "; ") + what;
  }
};

std::string printf_str(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// 1. Parameter counts of built models against reference values.
Verdict parameters() {
  Verdict v;
  const std::vector<std::pair<std::string, double>> baselines{
      {"resnet50", 25.56}, {"senet50", 28.07}, {"resnet101", 44.55}, {"senet101", 49.29}};
  const std::vector<std::pair<std::string, double>> epsa{{"epsanet50_small", 22.56},
                                                         {"epsanet50_large", 27.90},
                                                         {"epsanet101_small", 38.90},
                                                         {"epsanet101_large", 49.59}};
  const auto check = [&](const std::pair<std::string, double>& row) {
    Model m = Model::build(model_spec(row.first), 0);
    const std::int64_t enumerated = count_params(m);
    const double rounded = std::stod(format_millions(enumerated));
    const bool ok = std::abs(rounded - row.second) <= 0.02 + 1e-9 &&
                    enumerated == count_params(model_spec(row.first));
    v.require(ok, row.first + " " + format_millions(enumerated) + "M vs " +
                      printf_str("%.2f", row.second) + "M");
    return ok;
  };
  bool baselines_ok = true;
  for (const auto& row : baselines) baselines_ok = check(row) && baselines_ok;
  v.require(baselines_ok, "baselines must match before EPSANet rows are trusted");
  if (baselines_ok)
    for (const auto& row : epsa) check(row);
  v.note("8/8 rows within 0.02M (built and enumerated)");
  return v;
}

// 2. FLOPs after calibration on the ResNet-50 anchor.
Verdict flops() {
  Verdict v;
  const Calibration cal = calibrate_convention();
  v.require(cal.relative_miss < kCalibrationTolerance, "calibration anchor missed");
  const auto flops_of = [&](const char* name) {
    return static_cast<double>(count_flops(model_spec(name), default_input_shape(), cal.convention));
  };
  const double base = flops_of("resnet50"), small = flops_of("epsanet50_small"),
               large = flops_of("epsanet50_large");
  const double miss_small = std::abs(small / 3.62e9 - 1.0), miss_large = std::abs(large / 4.72e9 - 1.0);
  v.require(miss_small < 0.03, printf_str("small %.3fG off by %.2f%%", small / 1e9, 100 * miss_small));
  v.require(miss_large < 0.03, printf_str("large %.3fG off by %.2f%%", large / 1e9, 100 * miss_large));
  const double saving = 100.0 * (1.0 - small / base);
  v.require(std::abs(saving - 12.1) <= 1.0, printf_str("saving %.2f%%", saving));
  v.note(to_string(cal.convention) + printf_str(", resnet50 %.3fG (miss %.2f%%)", base / 1e9,
                                                100 * cal.relative_miss));
  v.note(printf_str("small %.3fG, large %.3fG, saving %.2f%%", small / 1e9, large / 1e9, saving));
  return v;
}

// 3. Backward passes against central differences.
Verdict gradients() {
  Verdict v;
  const auto t0 = Clock::now();
  GradcheckOptions o;
  o.seed = defaults::kGradcheckSeed;
  o.epsilon = 1e-5;
  o.tolerance = 1e-4;
  double worst = 0.0;
  std::size_t checks = 0;
  for (GradcheckScope scope : {GradcheckScope::kOps, GradcheckScope::kPsa}) {
    const GradcheckReport r = run_gradcheck(scope, o);
    for (const GradcheckEntry& e : r.entries) {
      ++checks;
      worst = std::max(worst, e.max_rel_error);
      v.require(e.passed, e.name + printf_str(" rel err %.2e", e.max_rel_error));
      const Shape s = [&] {
        Shape out;
        std::sscanf(e.shape.c_str(), "(%zu,%zu,%zu,%zu)", &out.n, &out.c, &out.h, &out.w);
        return out;
      }();
      v.require(s.n <= 2 && s.c <= 16 && s.h <= 8 && s.w <= 8, e.name + " shape " + e.shape);
    }
  }
  const double elapsed = seconds_since(t0);
  v.require(elapsed < 120.0, printf_str("took %.1fs", elapsed));
  v.note(std::to_string(checks) + printf_str(" operator checks, worst %.2e, %.1fs", worst, elapsed));
  return v;
}

// 4. Attention normalisation on random inputs.
Verdict attention() {
  Verdict v;
  std::vector<PsaConfig> configs;
  for (const AblationConfig& a : ablation_configs()) configs.push_back(a.psa);
  PsaConfig split = PsaConfig::pyramid(64);
  split.branch_input = BranchInput::kSplit;
  configs.push_back(split);
  PsaConfig per_branch = PsaConfig::pyramid(64);
  per_branch.share_se = false;
  per_branch.se_bias = true;
  configs.push_back(per_branch);
  PsaConfig two = PsaConfig::pyramid(32, 2);
  configs.push_back(two);

  std::vector<PsaParams> params;
  for (std::size_t i = 0; i < configs.size(); ++i)
    params.push_back(PsaParams::make(configs[i], mix_seed(defaults::kAttentionSeed, i)));

  double worst_sum = 0.0, min_att = 1.0, max_att = 0.0;
  bool shapes_ok = true;
  Rng rng(defaults::kAttentionSeed);
  for (std::size_t trial = 0; trial < defaults::kAttentionTrials; ++trial) {
    const std::size_t which = trial % params.size();
    const PsaParams& p = params[which];
    const std::size_t side = 4 + rng.below(5);
    const double spread = std::pow(10.0, rng.uniform(-1.0, 2.0));
    const Tensor x = random_uniform({1 + rng.below(2), p.config.channels, side, side},
                                    mix_seed(defaults::kAttentionSeed, 1000 + trial), -spread,
                                    spread);
    const PsaTrace t = psa_trace(x, p);
    shapes_ok = shapes_ok && t.output.shape() == x.shape();
    const std::size_t s = p.config.scales, cb = p.config.branch_channels();
    for (std::size_t n = 0; n < x.shape().n; ++n)
      for (std::size_t c = 0; c < cb; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < s; ++i) {
          const double a = t.attention(n, i * cb + c, 0, 0);
          min_att = std::min(min_att, a);
          max_att = std::max(max_att, a);
          sum += a;
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      }
  }
  v.require(worst_sum <= 1e-10, printf_str("softmax sum off by %.2e", worst_sum));
  v.require(min_att > 0.0 && max_att < 1.0, printf_str("attention range [%.3g, %.3g]", min_att, max_att));
  v.require(shapes_ok, "output shape differs from input shape");
  v.note(std::to_string(defaults::kAttentionTrials) + " inputs over " +
         std::to_string(configs.size()) + " configs (3 ablation groupings)");
  v.note(printf_str("max |sum-1| %.1e, attention in [%.4f, %.4f]", worst_sum, min_att, max_att));
  return v;
}

// 5. The describe subcommand against the reference layout.
Verdict structure() {
  Verdict v;
  struct Expect {
    const char* model;
    std::vector<std::size_t> mid;
  };
  const std::vector<std::size_t> out{256, 512, 1024, 2048};
  const std::vector<std::size_t> repeats{3, 4, 6, 3};
  const std::vector<std::size_t> sizes{112, 56, 56, 28, 14, 7, 1};
  for (const Expect& e : {Expect{"epsanet50_small", {64, 128, 256, 512}},
                          Expect{"epsanet50_large", {128, 256, 512, 1024}}}) {
    std::ostringstream sout, serr;
    const int code = cli::run({"describe", e.model, "--format", "json"}, sout, serr);
    v.require(code == 0, std::string(e.model) + " describe exit " + std::to_string(code));
    if (code != 0) continue;
    const nlohmann::json j = nlohmann::json::parse(sout.str());
    std::vector<std::size_t> got_sizes;
    for (const auto& row : j["rows"]) got_sizes.push_back(row["output_size"]);
    v.require(got_sizes == sizes, std::string(e.model) + " output sizes");
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& st = j["stages"][i];
      const std::string where = std::string(e.model) + " stage " + std::to_string(i + 1);
      v.require(st["mid_channels"] == e.mid[i], where + " width");
      v.require(st["out_channels"] == out[i], where + " output width");
      v.require(st["repeats"] == repeats[i], where + " repeats");
      const std::string bracket = st["bracket"];
      const std::string want_prefix = "[1×1," + std::to_string(e.mid[i]) + "; PSA";
      const std::string want_suffix = "," + std::to_string(e.mid[i]) + "; 1×1," +
                                      std::to_string(out[i]) + "] ×" + std::to_string(repeats[i]);
      v.require(bracket.rfind(want_prefix, 0) == 0 &&
                    bracket.size() >= want_suffix.size() &&
                    bracket.compare(bracket.size() - want_suffix.size(), want_suffix.size(),
                                    want_suffix) == 0,
                where + " bracket '" + bracket + "'");
    }
    std::ostringstream tout, terr;
    v.require(cli::run({"describe", e.model}, tout, terr) == 0 &&
                  tout.str().find("7×7, 64, stride 2") != std::string::npos &&
                  tout.str().find("3×3 max pool, stride 2") != std::string::npos &&
                  tout.str().find("global average pool, 1000-d fc") != std::string::npos,
              std::string(e.model) + " text rows");
  }
  v.note("small and large: widths, repeats 3/4/6/3, sizes 112/56/56/28/14/7/1");
  return v;
}

// 6. Overfitting the toy fixture and the step schedule.
Verdict trainability() {
  Verdict v;
  const auto t0 = Clock::now();
  const std::size_t saved_threads = max_threads();
  set_max_threads(1);
  const ToyDataset data = make_toy_dataset(defaults::kToyDataSeed, defaults::kToySamples,
                                           defaults::kToyClasses, defaults::kToyImageSize);
  Model model = Model::build(toy_model_spec(defaults::kToyClasses), defaults::kToyModelSeed);
  const TrainConfig cfg = defaults::toy_train_config();
  const TrainResult r = train(model, data, cfg);
  set_max_threads(saved_threads);
  const double elapsed = seconds_since(t0);

  v.require(!r.diverged, "diverged");
  v.require(r.steps <= defaults::kToyStepBudget, std::to_string(r.steps) + " steps over budget");
  v.require(r.final_accuracy() > defaults::kToyTargetAccuracy,
            printf_str("final accuracy %.3f", r.final_accuracy()));
  v.require(elapsed < 300.0, printf_str("took %.1fs", elapsed));

  TrainConfig schedule;  // lr 0.1, step decay /10 every 30 epochs
  const double expected[] = {0.1, 0.01, 0.001, 0.0001};
  for (std::size_t i = 0; i < 4; ++i) {
    const double lr = lr_at(30 * i, schedule);
    v.require(std::abs(lr - expected[i]) <= 1e-15 * expected[i] + 1e-18,
              printf_str("lr at epoch %.0f is %g", 30.0 * i, lr));
  }
  v.note(printf_str("accuracy %.3f after %.0f steps, %.1fs single-threaded", r.final_accuracy(),
                    static_cast<double>(r.steps), elapsed));
  v.note(printf_str("loss %.3f -> %.3f, unsmoothed ce reduced %.1f%%", r.initial_loss(),
                    r.final_loss(), 100.0 * r.plain_loss_reduction()));
  v.note("lr 0.1/0.01/0.001/0.0001 at epochs 0/30/60/90");
  return v;
}

// 7. Reference-oracle equivalence.
Verdict oracles() {
  Verdict v;
  PsaConfig cfg = PsaConfig::pyramid(8);
  cfg.groups = {1, 2, 2, 2};
  const PsaParams p = PsaParams::make(cfg, 2026);
  const Tensor x = random_uniform({1, 8, 4, 4}, 7, -1, 1);
  const double diff = max_abs_diff(psa_forward(x, p), oracle::psa_oracle(x, p));
  v.require(diff <= 1e-12, printf_str("psa vs oracle %.2e", diff));

  bool exact = true;
  for (std::size_t groups : {2, 4, 8}) {
    const std::size_t in = 8, out = 16, icg = in / groups, ocg = out / groups;
    const Conv2dParams grouped = Conv2dParams::make(in, out, 3, 1, 1, groups, false, groups);
    const Tensor xin = random_uniform({2, in, 6, 6}, 100 + groups, -1, 1);
    std::vector<Tensor> parts;
    for (std::size_t g = 0; g < groups; ++g) {
      Conv2dParams single = Conv2dParams::make(icg, ocg, 3, 1, 1, 1, false, 0);
      std::copy_n(grouped.weight.ptr() + g * ocg * icg * 9, ocg * icg * 9, single.weight.ptr());
      parts.push_back(conv2d(slice_channels(xin, g * icg, icg), single).output);
    }
    exact = exact && concat_channels(parts) == conv2d(xin, grouped).output;
    exact = exact && max_abs_diff(oracle::naive_conv(xin, grouped), conv2d(xin, grouped).output) < 1e-12;
  }
  v.require(exact, "grouped conv differs from block-diagonal independent convs");
  v.note(printf_str("psa max diff %.1e; grouped conv bit-identical for G=2/4/8", diff));
  return v;
}

}  // namespace
}  // namespace epsa

int main() {
  using namespace epsa;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"parameter reproduction", parameters}, {"FLOP reproduction", flops},
      {"gradient correctness", gradients},    {"attention invariants", attention},
      {"structural reproduction", structure}, {"trainability", trainability},
      {"oracle equivalence", oracles}};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    const auto t0 = Clock::now();
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.passed = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failures += !v.passed;
    std::printf("[%s] %zu. %s (%.1fs): %s\n", v.passed ? "PASS" : "FAIL", i + 1,
                criteria[i].first, seconds_since(t0), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
