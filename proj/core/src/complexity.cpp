// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "epsa/complexity.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace epsa {
namespace {

using nlohmann::json;

std::int64_t to_i64(std::size_t v) { return static_cast<std::int64_t>(v); }

class Ledger {
 public:
  explicit Ledger(std::vector<LayerCost>& rows) : rows_(rows) {}

  Shape conv(const std::string& name, const Shape& in, std::size_t out_c,
             std::size_t k, std::size_t stride, std::size_t pad, std::size_t groups) {
    const Shape out{in.n, out_c, (in.h + 2 * pad - k) / stride + 1,
                    (in.w + 2 * pad - k) / stride + 1};
    LayerCost c{name, "conv", to_i64(conv2d_param_count(in.c, out_c, k, groups, false)),
                to_i64(out.size() * (in.c / groups) * k * k), 0, 0, out};
    rows_.push_back(std::move(c));
    return out;
  }
  Shape linear(const std::string& name, const Shape& in, std::size_t out_f, bool bias,
               std::size_t applications = 1) {
    const std::size_t in_f = in.c * in.h * in.w;
    const Shape out{in.n, out_f, 1, 1};
    const std::size_t params = in_f * out_f + (bias ? out_f : 0);
    rows_.push_back({name, "linear", to_i64(params),
                     to_i64(applications * in.n * in_f * out_f), 0, 0, out});
    return out;
  }
  void bn(const std::string& name, const Shape& s) {
    rows_.push_back({name, "bn", to_i64(2 * s.c), 0, to_i64(s.size()), 0, s});
  }
  void elementwise(const std::string& name, const std::string& kind, const Shape& s,
                   std::size_t ops_per_element = 1) {
    rows_.push_back({name, kind, 0, 0, to_i64(s.size() * ops_per_element), 0, s});
  }

 private:
  std::vector<LayerCost>& rows_;
};

Shape block_costs(Ledger& l, const std::string& p, const BlockSpec& b, Shape in) {
  Shape h = l.conv(p + ".conv1", in, b.mid_channels, 1, 1, 0, 1);
  l.bn(p + ".bn1", h);
  l.elementwise(p + ".relu1", "relu", h);
  if (b.kind == BlockKind::kEpsa) {
    const PsaConfig cfg = b.resolved_psa();
    const Shape branch_in{h.n, cfg.branch_in_channels(), h.h, h.w};
    Shape f;
    for (std::size_t i = 0; i < cfg.scales; ++i)
      f = l.conv(p + ".psa.branch" + std::to_string(i), branch_in, cfg.branch_channels(),
                 cfg.kernels[i], cfg.stride, (cfg.kernels[i] - 1) / 2, cfg.groups[i]);
    const Shape branch_out{f.n, cfg.branch_channels(), f.h, f.w};
    const std::size_t instances = cfg.share_se ? 1 : cfg.scales;
    const std::size_t per_instance = cfg.scales / instances;
    for (std::size_t s = 0; s < instances; ++s) {
      const std::string se = p + ".psa.se" + (cfg.share_se ? "" : std::to_string(s));
      l.elementwise(se + ".pool", "pool", branch_out, per_instance);
      const Shape pooled{branch_out.n, branch_out.c, 1, 1};
      const Shape hidden = l.linear(se + ".fc0", pooled, cfg.se_hidden(), cfg.se_bias,
                                    per_instance);
      l.elementwise(se + ".relu", "relu", hidden, per_instance);
      const Shape gate = l.linear(se + ".fc1", hidden, cfg.branch_channels(), cfg.se_bias,
                                  per_instance);
      l.elementwise(se + ".sigmoid", "sigmoid", gate, per_instance);
    }
    h = Shape{f.n, b.mid_channels, f.h, f.w};
    l.elementwise(p + ".psa.softmax", "softmax", Shape{h.n, h.c, 1, 1}, 3);
    l.elementwise(p + ".psa.reweight", "mul", h);
  } else {
    h = l.conv(p + ".conv2", h, b.mid_channels, 3, b.stride, 1, 1);
  }
  l.bn(p + ".bn2", h);
  l.elementwise(p + ".relu2", "relu", h);
  h = l.conv(p + ".conv3", h, b.out_channels, 1, 1, 0, 1);
  l.bn(p + ".bn3", h);
  if (b.kind == BlockKind::kSe) {
    l.elementwise(p + ".se.pool", "pool", h);
    const Shape pooled{h.n, h.c, 1, 1};
    const std::size_t hidden = std::max<std::size_t>(b.out_channels / b.se_reduction, 1);
    const Shape mid = l.linear(p + ".se.fc0", pooled, hidden, b.se_bias);
    l.elementwise(p + ".se.relu", "relu", mid);
    const Shape gate = l.linear(p + ".se.fc1", mid, b.out_channels, b.se_bias);
    l.elementwise(p + ".se.sigmoid", "sigmoid", gate);
    l.elementwise(p + ".se.scale", "mul", h);
  }
  if (b.has_projection()) {
    const Shape s = l.conv(p + ".downsample.conv", in, b.out_channels, 1, b.stride, 0, 1);
    l.bn(p + ".downsample.bn", s);
  }
  l.elementwise(p + ".add", "add", h);
  l.elementwise(p + ".relu3", "relu", h);
  return h;
}

std::int64_t flops_for(const LayerCost& c, FlopConvention conv) {
  switch (conv) {
    case FlopConvention::kMacConvLinear: return c.macs;
    case FlopConvention::kMacAllLayers: return c.macs + c.other_ops;
    case FlopConvention::kTwoPerMac: return 2 * c.macs;
  }
  return c.macs;
}

std::string hundredths(std::int64_t value, std::int64_t unit) {
  // round half up at two decimals
  const bool negative = value < 0;
  const std::int64_t mag = negative ? -value : value;
  const std::int64_t step = unit / 100;
  const std::int64_t h = (mag + step / 2) / step;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%lld.%02lld", negative ? "-" : "",
                static_cast<long long>(h / 100), static_cast<long long>(h % 100));
  return buf;
}

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

}  // namespace

std::string to_string(FlopConvention c) {
  switch (c) {
    case FlopConvention::kMacConvLinear: return "mac-conv-linear";
    case FlopConvention::kMacAllLayers: return "mac-all-layers";
    case FlopConvention::kTwoPerMac: return "two-per-mac";
  }
  return "?";
}

std::string describe_convention(FlopConvention c) {
  switch (c) {
    case FlopConvention::kMacConvLinear:
      return "1 FLOP per multiply-accumulate; conv and linear layers only; "
             "BN, activations, pooling and elementwise ops excluded";
    case FlopConvention::kMacAllLayers:
      return "1 FLOP per multiply-accumulate in conv/linear plus 1 op per output "
             "element of BN, activations, pooling and elementwise layers";
    case FlopConvention::kTwoPerMac:
      return "2 FLOPs per multiply-accumulate; conv and linear layers only";
  }
  return "?";
}

Shape default_input_shape(std::size_t input_size) { return {1, 3, input_size, input_size}; }

ComplexityReport analyze(const ModelSpec& spec, Shape input, FlopConvention convention) {
  spec.validate();
  if (input.c != spec.in_channels)
    throw std::invalid_argument("analyze: input channels do not match the model");
  ComplexityReport r;
  r.model_name = spec.name;
  r.input = input;
  r.convention = convention;
  Ledger l(r.per_layer);

  Shape h = l.conv("stem.conv", input, spec.stem_channels, 7, 2, 3, 1);
  l.bn("stem.bn", h);
  l.elementwise("stem.relu", "relu", h);
  h = Shape{h.n, h.c, (h.h + 2 - 3) / 2 + 1, (h.w + 2 - 3) / 2 + 1};
  l.elementwise("stem.pool", "pool", h, 9);
  const auto blocks = spec.block_specs();
  std::size_t index = 0;
  for (std::size_t s = 0; s < spec.stages.size(); ++s)
    for (std::size_t b = 0; b < spec.stages[s].repeats; ++b, ++index)
      h = block_costs(l, "layer" + std::to_string(s + 1) + "." + std::to_string(b),
                      blocks[index], h);
  l.elementwise("gap", "pool", h);
  l.linear("fc", Shape{h.n, h.c, 1, 1}, spec.num_classes, true);

  for (LayerCost& c : r.per_layer) {
    c.flops = flops_for(c, convention);
    r.total_params += c.params;
    r.total_flops += c.flops;
  }
  return r;
}

std::int64_t count_params(Model& model) {
  std::int64_t total = 0;
  for (const ParamRef& p : model.parameters()) total += to_i64(p.value->size());
  return total;
}

std::int64_t count_params(const ModelSpec& spec) { return analyze(spec).total_params; }

std::int64_t count_flops(const ModelSpec& spec, Shape input, FlopConvention convention) {
  return analyze(spec, input, convention).total_flops;
}

Calibration calibrate_convention() {
  const ModelSpec resnet = model_spec("resnet50");
  auto miss = [&](FlopConvention c) {
    const double f = static_cast<double>(count_flops(resnet, default_input_shape(), c));
    return Calibration{c, f, std::abs(f / kResnet50FlopAnchor - 1.0)};
  };
  Calibration best = miss(FlopConvention::kMacConvLinear);
  if (best.relative_miss <= kCalibrationTolerance) return best;
  for (FlopConvention c : {FlopConvention::kMacAllLayers, FlopConvention::kTwoPerMac}) {
    const Calibration candidate = miss(c);
    if (candidate.relative_miss < best.relative_miss) best = candidate;
  }
  return best;
}

std::string format_millions(std::int64_t value) { return hundredths(value, 1'000'000); }
std::string format_giga(std::int64_t value) { return hundredths(value, 1'000'000'000); }

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f", value);
  return buf;
}

std::vector<ComparisonRow> compare(std::span<const ComplexityReport> reports,
                                   std::size_t baseline) {
  std::vector<ComparisonRow> rows;
  if (reports.empty()) return rows;
  if (baseline >= reports.size()) throw std::invalid_argument("compare: baseline out of range");
  const auto& base = reports[baseline];
  for (const auto& r : reports) {
    ComparisonRow row;
    row.model_name = r.model_name;
    row.params = r.total_params;
    row.flops = r.total_flops;
    row.params_delta_pct =
        100.0 * (static_cast<double>(r.total_params) / static_cast<double>(base.total_params) - 1.0);
    row.flops_delta_pct =
        100.0 * (static_cast<double>(r.total_flops) / static_cast<double>(base.total_flops) - 1.0);
    rows.push_back(row);
  }
  return rows;
}

std::string report_json(const ComplexityReport& r, int indent) {
  json layers = json::array();
  for (const LayerCost& c : r.per_layer)
    layers.push_back({{"name", c.name},
                      {"kind", c.kind},
                      {"params", c.params},
                      {"flops", c.flops},
                      {"output_shape", shape_json(c.output)}});
  json j{{"model_name", r.model_name},
         {"input_shape", shape_json(r.input)},
         {"total_params", r.total_params},
         {"total_flops", r.total_flops},
         {"params_millions", format_millions(r.total_params)},
         {"flops_giga", format_giga(r.total_flops)},
         {"convention", to_string(r.convention)},
         {"convention_rule", describe_convention(r.convention)},
         {"per_layer", std::move(layers)}};
  return j.dump(indent, ' ', false);
}

std::string report_text(const ComplexityReport& r, bool per_layer) {
  std::ostringstream os;
  os << r.model_name << " @ " << r.input.str() << '\n'
     << "  params: " << r.total_params << " (" << format_millions(r.total_params) << "M)\n"
     << "  flops:  " << r.total_flops << " (" << format_giga(r.total_flops) << "G)\n"
     << "  convention: " << to_string(r.convention) << " - "
     << describe_convention(r.convention) << '\n';
  if (per_layer) {
    os << std::left << std::setw(36) << "  layer" << std::right << std::setw(12) << "params"
       << std::setw(16) << "flops" << "  output\n";
    for (const LayerCost& c : r.per_layer)
      os << "  " << std::left << std::setw(34) << c.name << std::right << std::setw(12)
         << c.params << std::setw(16) << c.flops << "  " << c.output.str() << '\n';
  }
  return os.str();
}

std::string comparison_json(std::span<const ComplexityReport> reports, std::size_t baseline,
                            int indent) {
  json rows = json::array();
  for (const ComparisonRow& row : compare(reports, baseline))
    rows.push_back({{"model_name", row.model_name},
                    {"total_params", row.params},
                    {"total_flops", row.flops},
                    {"params_millions", format_millions(row.params)},
                    {"flops_giga", format_giga(row.flops)},
                    {"params_delta_pct", format_percent(row.params_delta_pct)},
                    {"flops_delta_pct", format_percent(row.flops_delta_pct)}});
  json j{{"baseline", reports.empty() ? "" : reports[baseline].model_name},
         {"input_shape", reports.empty() ? json::array() : shape_json(reports[0].input)},
         {"convention", reports.empty() ? "" : to_string(reports[0].convention)},
         {"rows", std::move(rows)}};
  return j.dump(indent, ' ', false);
}

std::string comparison_text(std::span<const ComplexityReport> reports, std::size_t baseline) {
  std::ostringstream os;
  if (reports.empty()) return {};
  os << "input " << reports[0].input.str() << ", convention "
     << to_string(reports[0].convention) << ", deltas vs " << reports[baseline].model_name
     << '\n';
  os << std::left << std::setw(20) << "model" << std::right << std::setw(12) << "params(M)"
     << std::setw(10) << "FLOPs(G)" << std::setw(10) << "dParams%" << std::setw(10)
     << "dFLOPs%" << '\n';
  for (const ComparisonRow& row : compare(reports, baseline))
    os << std::left << std::setw(20) << row.model_name << std::right << std::setw(12)
       << format_millions(row.params) << std::setw(10) << format_giga(row.flops)
       << std::setw(10) << format_percent(row.params_delta_pct) << std::setw(10)
       << format_percent(row.flops_delta_pct) << '\n';
  return os.str();
}

}  // namespace epsa
