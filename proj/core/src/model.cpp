// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "epsa/model.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace epsa {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

constexpr std::size_t kBaseWidths[] = {64, 128, 256, 512};

StageSpec stage(std::size_t repeats, std::size_t mid, std::size_t out,
                std::size_t stride, BlockKind kind) {
  StageSpec s;
  s.repeats = repeats;
  s.mid_channels = mid;
  s.out_channels = out;
  s.stride = stride;
  s.kind = kind;
  return s;
}

ModelSpec backbone(std::string name, const std::vector<std::size_t>& repeats,
                   BlockKind kind, std::size_t width_multiplier,
                   const std::optional<PsaConfig>& psa) {
  ModelSpec spec;
  spec.name = std::move(name);
  for (std::size_t i = 0; i < repeats.size(); ++i) {
    StageSpec s = stage(repeats[i], kBaseWidths[i] * width_multiplier,
                        kBaseWidths[i] * 4, i == 0 ? 1 : 2, kind);
    s.psa = psa;
    spec.stages.push_back(std::move(s));
  }
  return spec;
}

PsaConfig small_psa() {
  PsaConfig cfg;  // kernels (3,5,7,9), groups (1,4,8,16), full-input branches
  return cfg;
}

// Doubled widths with grouped convolutions over per-branch channel slices;
// this is the grouping whose parameter/FLOP totals match the reference
// EPSANet(Large) figures.
PsaConfig large_psa() {
  PsaConfig cfg;
  cfg.groups = {4, 8, 16, 16};
  cfg.branch_input = BranchInput::kSplit;
  return cfg;
}

std::string times(std::size_t k) {
  return std::to_string(k) + "×" + std::to_string(k);
}

std::string psa_label(const StageSpec& stage) {
  const PsaConfig& cfg = *stage.psa;
  PsaConfig reference = PsaConfig::pyramid(stage.mid_channels, cfg.scales);
  if (cfg.groups == reference.groups && cfg.kernels == reference.kernels &&
      cfg.branch_input == BranchInput::kFull)
    return "PSA";
  std::string label = "PSA(G=";
  const bool uniform = std::all_of(cfg.groups.begin(), cfg.groups.end(),
                                   [&](std::size_t g) { return g == cfg.groups.front(); });
  if (uniform) {
    label += std::to_string(cfg.groups.front());
  } else {
    for (std::size_t i = 0; i < cfg.groups.size(); ++i)
      label += (i ? "/" : "") + std::to_string(cfg.groups[i]);
  }
  if (cfg.kernels != reference.kernels) {
    label += ", K=";
    for (std::size_t i = 0; i < cfg.kernels.size(); ++i)
      label += (i ? "/" : "") + std::to_string(cfg.kernels[i]);
  }
  return label + ")";
}

// ---- JSON -----------------------------------------------------------------

json psa_to_json(const PsaConfig& cfg) {
  return json{{"scales", cfg.scales},
              {"kernels", cfg.kernels},
              {"groups", cfg.groups},
              {"se_reduction", cfg.se_reduction},
              {"branch_input", to_string(cfg.branch_input)},
              {"share_se", cfg.share_se},
              {"se_bias", cfg.se_bias}};
}

template <class T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(where + ": field '" + key + "': " + e.what());
  }
}

template <class T>
T optional_field(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return required<T>(j, key, where);
}

PsaConfig psa_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) fail(where + ": psa must be an object");
  PsaConfig cfg;
  cfg.scales = optional_field<std::size_t>(j, "scales", cfg.scales, where);
  // Omitted kernels follow the pyramid; omitted groups follow the kernels.
  const PsaConfig pyramid = PsaConfig::pyramid(0, cfg.scales);
  cfg.kernels = optional_field(j, "kernels", pyramid.kernels, where);
  cfg.groups.clear();
  for (std::size_t k : cfg.kernels)
    cfg.groups.push_back(k >= 3 && k % 2 == 1 ? kernel_to_group(k) : 1);
  cfg.groups = optional_field(j, "groups", cfg.groups, where);
  cfg.se_reduction = optional_field<std::size_t>(j, "se_reduction", cfg.se_reduction, where);
  cfg.branch_input = branch_input_from_string(
      optional_field<std::string>(j, "branch_input", "full", where));
  cfg.share_se = optional_field<bool>(j, "share_se", cfg.share_se, where);
  cfg.se_bias = optional_field<bool>(j, "se_bias", cfg.se_bias, where);
  return cfg;
}

json spec_to_json(const ModelSpec& spec) {
  json stages = json::array();
  for (const StageSpec& s : spec.stages) {
    json js{{"repeats", s.repeats},
            {"mid_channels", s.mid_channels},
            {"out_channels", s.out_channels},
            {"stride", s.stride},
            {"kind", to_string(s.kind)}};
    if (s.psa) js["psa"] = psa_to_json(*s.psa);
    if (s.kind == BlockKind::kSe) js["se_reduction"] = s.se_reduction;
    stages.push_back(std::move(js));
  }
  return json{{"name", spec.name},
              {"num_classes", spec.num_classes},
              {"in_channels", spec.in_channels},
              {"stem_channels", spec.stem_channels},
              {"stages", std::move(stages)}};
}

}  // namespace

// ---- ModelSpec ------------------------------------------------------------

std::vector<BlockSpec> ModelSpec::block_specs() const {
  std::vector<BlockSpec> out;
  std::size_t in = stem_channels;
  for (const StageSpec& s : stages) {
    for (std::size_t r = 0; r < s.repeats; ++r) {
      BlockSpec b;
      b.kind = s.kind;
      b.in_channels = in;
      b.mid_channels = s.mid_channels;
      b.out_channels = s.out_channels;
      b.stride = r == 0 ? s.stride : 1;
      b.psa = s.psa;
      b.se_reduction = s.se_reduction;
      out.push_back(std::move(b));
      in = s.out_channels;
    }
  }
  return out;
}

std::size_t ModelSpec::feature_channels() const {
  return stages.empty() ? stem_channels : stages.back().out_channels;
}

void ModelSpec::validate() const {
  if (num_classes == 0) fail(name + ": num_classes must be positive");
  if (in_channels == 0 || stem_channels == 0) fail(name + ": zero stem width");
  if (stages.empty()) fail(name + ": no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    if (s.repeats == 0) fail(name + ": stage " + std::to_string(i + 1) + " has no blocks");
    if ((s.kind == BlockKind::kEpsa) != s.psa.has_value())
      fail(name + ": stage " + std::to_string(i + 1) +
           " must carry a psa config iff its kind is epsa");
  }
  for (const BlockSpec& b : block_specs()) b.validate();
}

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {
      "resnet50",        "resnet101",       "senet50",          "senet101",
      "epsanet50_small", "epsanet50_large", "epsanet101_small", "epsanet101_large"};
  return names;
}

ModelSpec model_spec(std::string_view name) {
  const std::vector<std::size_t> r50{3, 4, 6, 3};
  const std::vector<std::size_t> r101{3, 4, 23, 3};
  const std::string n(name);
  if (n == "resnet50") return backbone(n, r50, BlockKind::kResnet, 1, std::nullopt);
  if (n == "resnet101") return backbone(n, r101, BlockKind::kResnet, 1, std::nullopt);
  if (n == "senet50") return backbone(n, r50, BlockKind::kSe, 1, std::nullopt);
  if (n == "senet101") return backbone(n, r101, BlockKind::kSe, 1, std::nullopt);
  if (n == "epsanet50_small") return backbone(n, r50, BlockKind::kEpsa, 1, small_psa());
  if (n == "epsanet101_small") return backbone(n, r101, BlockKind::kEpsa, 1, small_psa());
  if (n == "epsanet50_large") return backbone(n, r50, BlockKind::kEpsa, 2, large_psa());
  if (n == "epsanet101_large") return backbone(n, r101, BlockKind::kEpsa, 2, large_psa());
  fail("unknown model '" + n + "'");
}

ModelSpec toy_model_spec(std::size_t num_classes) {
  ModelSpec spec;
  spec.name = "epsanet_toy";
  spec.num_classes = num_classes;
  spec.stem_channels = 16;
  StageSpec s1 = stage(1, 32, 64, 1, BlockKind::kEpsa);
  s1.psa = PsaConfig{};
  s1.psa->groups = {1, 2, 4, 8};  // C' = 8 caps the group count
  StageSpec s2 = stage(1, 64, 128, 2, BlockKind::kEpsa);
  s2.psa = PsaConfig{};
  spec.stages = {s1, s2};
  return spec;
}

std::string model_spec_to_json(const ModelSpec& spec, int indent) {
  return spec_to_json(spec).dump(indent, ' ', false);
}

ModelSpec model_spec_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) fail("model config: top level must be an object");
  ModelSpec spec;
  spec.name = optional_field<std::string>(j, "name", "custom", "model config");
  spec.num_classes = optional_field<std::size_t>(j, "num_classes", 1000, "model config");
  spec.in_channels = optional_field<std::size_t>(j, "in_channels", 3, "model config");
  spec.stem_channels = optional_field<std::size_t>(j, "stem_channels", 64, "model config");
  if (!j.contains("stages") || !j["stages"].is_array())
    fail("model config: 'stages' must be an array");
  std::size_t index = 0;
  for (const json& js : j["stages"]) {
    const std::string where = "stage " + std::to_string(++index);
    if (!js.is_object()) fail(where + ": must be an object");
    StageSpec s;
    s.repeats = required<std::size_t>(js, "repeats", where);
    s.mid_channels = required<std::size_t>(js, "mid_channels", where);
    s.kind = block_kind_from_string(required<std::string>(js, "kind", where));
    s.out_channels = optional_field<std::size_t>(js, "out_channels", 4 * s.mid_channels, where);
    s.stride = optional_field<std::size_t>(js, "stride", index == 1 ? 1 : 2, where);
    s.se_reduction = optional_field<std::size_t>(js, "se_reduction", 16, where);
    if (js.contains("psa")) s.psa = psa_from_json(js["psa"], where + " psa");
    else if (s.kind == BlockKind::kEpsa) s.psa = PsaConfig{};
    spec.stages.push_back(std::move(s));
  }
  spec.validate();
  return spec;
}

ModelSpec load_model_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_spec_from_json(buf.str());
}

// ---- Model ----------------------------------------------------------------

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  m.stem_conv_ = Conv2dParams::make(spec.in_channels, spec.stem_channels, 7, 2, 3, 1,
                                    false, mix_seed(seed, 0));
  m.stem_bn_ = BatchNormParams::make(spec.stem_channels);
  const auto specs = spec.block_specs();
  m.blocks_.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i)
    m.blocks_.push_back(build_block(specs[i], mix_seed(seed, 1000 + i)));
  m.head_ = LinearParams::make(spec.feature_channels(), spec.num_classes, true,
                               mix_seed(seed, 1));
  return m;
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  stem_conv_.collect_params("stem.conv", out);
  stem_bn_.collect_params("stem.bn", out);
  std::size_t index = 0;
  for (std::size_t s = 0; s < spec_.stages.size(); ++s)
    for (std::size_t r = 0; r < spec_.stages[s].repeats; ++r)
      blocks_[index++].collect_params(
          "layer" + std::to_string(s + 1) + "." + std::to_string(r), out);
  head_.collect_params("fc", out);
  return out;
}

std::size_t Model::param_count() const {
  std::size_t total = stem_conv_.param_count() + stem_bn_.param_count() + head_.param_count();
  for (const Block& b : blocks_) total += b.param_count();
  return total;
}

GradPair Model::forward(const Tensor& x, Mode mode) {
  const Shape& s = x.shape();
  if (s.c != spec_.in_channels)
    fail("model: input has " + std::to_string(s.c) + " channels, expected " +
         std::to_string(spec_.in_channels));
  if (s.h < 32 || s.w < 32) fail("model: input " + s.str() + " below 32x32");

  GradPair stem = conv2d(x, stem_conv_);
  GradPair stem_norm = batch_norm(stem.output, stem_bn_, mode);
  GradPair stem_act = relu(stem_norm.output);
  GradPair pool = max_pool(stem_act.output, 3, 2, 1);
  std::vector<GradPair> stages;
  stages.reserve(blocks_.size());
  const Tensor* h = &pool.output;
  for (Block& b : blocks_) {
    stages.push_back(b.forward(*h, mode));
    h = &stages.back().output;
  }
  GradPair gap = global_avg_pool_with_grad(*h);
  GradPair head = linear(gap.output, head_);
  Tensor logits = head.output;

  auto backward = [stem = std::move(stem), stem_norm = std::move(stem_norm),
                   stem_act = std::move(stem_act), pool = std::move(pool),
                   stages = std::move(stages), gap = std::move(gap),
                   head = std::move(head)](const Tensor& dy) -> Gradients {
    Gradients g_head = head.backward(dy);
    Tensor d = gap.backward(g_head.input).input;
    std::vector<std::vector<Tensor>> block_grads(stages.size());
    for (std::size_t i = stages.size(); i-- > 0;) {
      Gradients g = stages[i].backward(d);
      d = std::move(g.input);
      block_grads[i] = std::move(g.params);
    }
    d = pool.backward(d).input;
    d = stem_act.backward(d).input;
    Gradients g_norm = stem_norm.backward(d);
    Gradients g_stem = stem.backward(g_norm.input);

    Gradients out{std::move(g_stem.input), std::move(g_stem.params)};
    for (Tensor& t : g_norm.params) out.params.push_back(std::move(t));
    for (auto& bg : block_grads)
      for (Tensor& t : bg) out.params.push_back(std::move(t));
    for (Tensor& t : g_head.params) out.params.push_back(std::move(t));
    return out;
  };
  return {std::move(logits), std::move(backward)};
}

// ---- describe -------------------------------------------------------------

SpatialTrace trace_spatial(const ModelSpec& spec, std::size_t input_size) {
  if (input_size == 0) fail("trace_spatial: zero input size");
  SpatialTrace t;
  t.stem = (input_size + 2 * 3 - 7) / 2 + 1;
  t.pool = (t.stem + 2 * 1 - 3) / 2 + 1;
  std::size_t h = t.pool;
  for (const StageSpec& s : spec.stages) {
    h = (h - 1) / s.stride + 1;
    t.stages.push_back(h);
  }
  return t;
}

std::string stage_bracket(const StageSpec& s) {
  std::ostringstream os;
  os << "[1×1," << s.mid_channels << "; ";
  if (s.kind == BlockKind::kEpsa)
    os << psa_label(s) << "," << s.mid_channels;
  else
    os << "3×3," << s.mid_channels;
  os << "; 1×1," << s.out_channels;
  if (s.kind == BlockKind::kSe) os << "; SE(r=" << s.se_reduction << ")";
  os << "] ×" << s.repeats;
  return os.str();
}

Description describe(const ModelSpec& spec, std::size_t input_size) {
  spec.validate();
  Description d;
  d.spec = spec;
  d.input_size = input_size;
  d.trace = trace_spatial(spec, input_size);
  d.rows.push_back({times(d.trace.stem),
                    "7×7, " + std::to_string(spec.stem_channels) + ", stride 2",
                    d.trace.stem});
  d.rows.push_back({times(d.trace.pool), "3×3 max pool, stride 2", d.trace.pool});
  for (std::size_t i = 0; i < spec.stages.size(); ++i)
    d.rows.push_back({times(d.trace.stages[i]), stage_bracket(spec.stages[i]),
                      d.trace.stages[i]});
  const std::size_t last = d.trace.stages.back();
  d.rows.push_back({"1×1",
                    times(last) + " global average pool, " +
                        std::to_string(spec.num_classes) + "-d fc",
                    1});
  return d;
}

std::string describe_text(const Description& d) {
  std::ostringstream os;
  os << d.spec.name << " (input " << d.input_size << "×" << d.input_size << ")\n";
  std::size_t width = 6;
  for (const LayerRow& r : d.rows) width = std::max(width, r.output.size());
  os << "Output";
  for (std::size_t i = 6; i < width + 2; ++i) os << ' ';
  os << "Layer\n";
  for (const LayerRow& r : d.rows) {
    // "×" is two bytes but one column.
    const std::size_t columns = r.output.size() - (r.output.find("×") != std::string::npos ? 1 : 0);
    os << r.output;
    for (std::size_t i = columns; i < width + 2; ++i) os << ' ';
    os << r.layer << '\n';
  }
  return os.str();
}

std::string describe_json(const Description& d, int indent) {
  json j = spec_to_json(d.spec);
  j["input_size"] = d.input_size;
  j["stem_output_size"] = d.trace.stem;
  j["pool_output_size"] = d.trace.pool;
  for (std::size_t i = 0; i < d.spec.stages.size(); ++i) {
    j["stages"][i]["output_size"] = d.trace.stages[i];
    j["stages"][i]["bracket"] = stage_bracket(d.spec.stages[i]);
  }
  json rows = json::array();
  for (const LayerRow& r : d.rows)
    rows.push_back({{"output", r.output}, {"output_size", r.output_size}, {"layer", r.layer}});
  j["rows"] = std::move(rows);
  return j.dump(indent, ' ', false);
}

// ---- ablation -------------------------------------------------------------

std::vector<AblationConfig> ablation_configs() {
  const std::vector<std::vector<std::size_t>> settings = {
      {4, 8, 16, 16}, {16, 16, 16, 16}, {1, 4, 8, 16}};
  std::vector<AblationConfig> out;
  for (const auto& groups : settings) {
    AblationConfig a;
    a.psa.channels = 64;
    a.psa.groups = groups;
    a.label = "(" + std::to_string(groups[0]) + "," + std::to_string(groups[1]) + "," +
              std::to_string(groups[2]) + "," + std::to_string(groups[3]) + ")";
    a.is_default = groups == std::vector<std::size_t>{1, 4, 8, 16};
    out.push_back(std::move(a));
  }
  return out;
}

ModelSpec ablation_model_spec(const AblationConfig& config) {
  ModelSpec spec = model_spec("epsanet50_small");
  std::string suffix;
  for (std::size_t g : config.psa.groups) suffix += (suffix.empty() ? "" : "-") + std::to_string(g);
  spec.name = "epsanet50_g" + suffix;
  for (StageSpec& s : spec.stages) {
    PsaConfig cfg = config.psa;
    cfg.channels = 0;
    s.psa = cfg;
  }
  return spec;
}

}  // namespace epsa
