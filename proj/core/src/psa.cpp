// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "epsa/psa.hpp"

#include <stdexcept>

namespace epsa {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

Tensor channel_totals(const Tensor& a, const Tensor& b) {
  // t[n, c] = sum_{h,w} a[n,c,h,w] * b[n,c,h,w]
  const Shape& s = a.shape();
  Tensor out({s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* pa = a.ptr() + nc * plane;
    const double* pb = b.ptr() + nc * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += pa[i] * pb[i];
    out[nc] = acc;
  }
  return out;
}

void add_channel_slice(Tensor& dst, const Tensor& src, std::size_t begin) {
  const Shape& d = dst.shape();
  const Shape& s = src.shape();
  const std::size_t plane = d.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    double* out = dst.ptr() + (n * d.c + begin) * plane;
    const double* in = src.ptr() + n * s.c * plane;
    for (std::size_t i = 0; i < s.c * plane; ++i) out[i] += in[i];
  }
}

}  // namespace

std::string to_string(BranchInput mode) {
  return mode == BranchInput::kFull ? "full" : "split";
}

BranchInput branch_input_from_string(const std::string& text) {
  if (text == "full") return BranchInput::kFull;
  if (text == "split") return BranchInput::kSplit;
  fail("unknown branch_input '" + text + "' (expected full|split)");
}

std::size_t kernel_to_group(std::size_t kernel) {
  if (kernel < 3 || kernel % 2 == 0)
    fail("kernel_to_group: kernel must be odd and >= 3, got " + std::to_string(kernel));
  if (kernel == 3) return 1;
  return std::size_t{1} << ((kernel - 1) / 2);
}

PsaConfig PsaConfig::pyramid(std::size_t channels, std::size_t scales) {
  PsaConfig cfg;
  cfg.channels = channels;
  cfg.scales = scales;
  cfg.kernels.clear();
  cfg.groups.clear();
  for (std::size_t i = 0; i < scales; ++i) {
    const std::size_t k = 2 * (i + 1) + 1;
    cfg.kernels.push_back(k);
    cfg.groups.push_back(kernel_to_group(k));
  }
  return cfg;
}

std::size_t PsaConfig::se_hidden() const {
  return std::max<std::size_t>(branch_channels() / se_reduction, 1);
}

void PsaConfig::validate() const {
  if (scales == 0) fail("psa: scales must be positive");
  if (kernels.size() != scales || groups.size() != scales)
    fail("psa: need " + std::to_string(scales) + " kernels and groups, got " +
         std::to_string(kernels.size()) + " and " + std::to_string(groups.size()));
  if (channels == 0 || channels % scales != 0)
    fail("psa: channels " + std::to_string(channels) + " not divisible by scales " +
         std::to_string(scales));
  if (se_reduction == 0) fail("psa: se_reduction must be positive");
  if (stride == 0) fail("psa: stride must be positive");
  const std::size_t width = branch_channels();
  const std::size_t in = branch_in_channels();
  for (std::size_t i = 0; i < scales; ++i) {
    if (kernels[i] == 0 || kernels[i] % 2 == 0)
      fail("psa: kernel " + std::to_string(kernels[i]) + " must be odd");
    if (groups[i] == 0 || width % groups[i] != 0 || in % groups[i] != 0)
      fail("psa: branch " + std::to_string(i) + " width " + std::to_string(width) +
           " (input " + std::to_string(in) + ") not divisible by groups " +
           std::to_string(groups[i]));
  }
}

// ---- SEWeight -------------------------------------------------------------

SeWeightParams SeWeightParams::make(std::size_t channels, std::size_t reduction,
                                    bool with_bias, std::uint64_t seed) {
  const std::size_t hidden = std::max<std::size_t>(channels / reduction, 1);
  return {LinearParams::make(channels, hidden, with_bias, mix_seed(seed, 0)),
          LinearParams::make(hidden, channels, with_bias, mix_seed(seed, 1))};
}

void SeWeightParams::collect_params(const std::string& prefix,
                                    std::vector<ParamRef>& out) {
  fc0.collect_params(prefix + ".fc0", out);
  fc1.collect_params(prefix + ".fc1", out);
}

Tensor se_weight(const Tensor& x, const SeWeightParams& p) {
  return se_weight_with_grad(x, p).output;
}

GradPair se_weight_with_grad(const Tensor& x, const SeWeightParams& p) {
  if (x.shape().c != p.channels())
    fail("se_weight: input has " + std::to_string(x.shape().c) +
         " channels, expected " + std::to_string(p.channels()));
  GradPair pooled = global_avg_pool_with_grad(x);
  GradPair squeezed = linear(pooled.output, p.fc0);
  GradPair activated = relu(squeezed.output);
  GradPair expanded = linear(activated.output, p.fc1);
  GradPair gate = sigmoid(expanded.output);
  Tensor out = gate.output;
  auto backward = [pooled = std::move(pooled), squeezed = std::move(squeezed),
                   activated = std::move(activated), expanded = std::move(expanded),
                   gate = std::move(gate)](const Tensor& dy) -> Gradients {
    Gradients g_gate = gate.backward(dy);
    Gradients g_fc1 = expanded.backward(g_gate.input);
    Gradients g_act = activated.backward(g_fc1.input);
    Gradients g_fc0 = squeezed.backward(g_act.input);
    Gradients g_pool = pooled.backward(g_fc0.input);
    Gradients out{std::move(g_pool.input), std::move(g_fc0.params)};
    for (Tensor& t : g_fc1.params) out.params.push_back(std::move(t));
    return out;
  };
  return {std::move(out), std::move(backward)};
}

// ---- PSA ------------------------------------------------------------------

PsaParams PsaParams::make(const PsaConfig& config, std::uint64_t seed) {
  config.validate();
  PsaParams p;
  p.config = config;
  const std::size_t width = config.branch_channels();
  const std::size_t in = config.branch_in_channels();
  for (std::size_t i = 0; i < config.scales; ++i) {
    const std::size_t k = config.kernels[i];
    p.branch_convs.push_back(Conv2dParams::make(in, width, k, config.stride,
                                                (k - 1) / 2, config.groups[i],
                                                false, mix_seed(seed, i)));
  }
  const std::size_t se_count = config.share_se ? 1 : config.scales;
  for (std::size_t i = 0; i < se_count; ++i)
    p.se_weights.push_back(SeWeightParams::make(width, config.se_reduction,
                                                config.se_bias,
                                                mix_seed(seed, 100 + i)));
  return p;
}

std::size_t PsaParams::param_count() const {
  std::size_t total = 0;
  for (const auto& c : branch_convs) total += c.param_count();
  for (const auto& s : se_weights) total += s.param_count();
  return total;
}

void PsaParams::collect_params(const std::string& prefix,
                               std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < branch_convs.size(); ++i)
    branch_convs[i].collect_params(prefix + ".branch" + std::to_string(i), out);
  for (std::size_t i = 0; i < se_weights.size(); ++i)
    se_weights[i].collect_params(
        prefix + (config.share_se ? std::string(".se") : ".se" + std::to_string(i)),
        out);
}

std::size_t psa_param_count(const PsaConfig& config) {
  config.validate();
  const std::size_t width = config.branch_channels();
  const std::size_t in = config.branch_in_channels();
  std::size_t total = 0;
  for (std::size_t i = 0; i < config.scales; ++i)
    total += conv2d_param_count(in, width, config.kernels[i], config.groups[i], false);
  const std::size_t hidden = config.se_hidden();
  std::size_t se = 2 * width * hidden;
  if (config.se_bias) se += hidden + width;
  total += se * (config.share_se ? 1 : config.scales);
  return total;
}

namespace {

void check_input(const Tensor& x, const PsaParams& p) {
  p.config.validate();
  if (x.shape().c != p.config.channels)
    fail("psa: input has " + std::to_string(x.shape().c) + " channels, expected " +
         std::to_string(p.config.channels));
}

Tensor branch_input(const Tensor& x, const PsaConfig& cfg, std::size_t i) {
  if (cfg.branch_input == BranchInput::kFull) return x;
  return slice_channels(x, i * cfg.branch_channels(), cfg.branch_channels());
}

}  // namespace

std::vector<Tensor> spc_forward(const Tensor& x, const PsaParams& p) {
  check_input(x, p);
  std::vector<Tensor> out;
  out.reserve(p.config.scales);
  for (std::size_t i = 0; i < p.config.scales; ++i)
    out.push_back(conv2d(branch_input(x, p.config, i), p.branch_convs[i]).output);
  return out;
}

PsaTrace psa_trace(const Tensor& x, const PsaParams& p) {
  PsaTrace t;
  t.branches = spc_forward(x, p);
  std::vector<Tensor> z;
  for (std::size_t i = 0; i < p.config.scales; ++i)
    z.push_back(se_weight(t.branches[i], p.se_for(i)));
  t.logits = concat_channels(z);
  t.attention = softmax_over_scales(t.logits, p.config.scales);
  t.output = broadcast_mul_channel(concat_channels(t.branches), t.attention);
  return t;
}

Tensor psa_forward(const Tensor& x, const PsaParams& p) {
  return psa_trace(x, p).output;
}

GradPair psa_with_grad(const Tensor& x, const PsaParams& p) {
  check_input(x, p);
  const PsaConfig& cfg = p.config;
  const std::size_t scales = cfg.scales;

  std::vector<GradPair> convs;
  std::vector<GradPair> ses;
  std::vector<Tensor> features;
  std::vector<Tensor> logits;
  for (std::size_t i = 0; i < scales; ++i) {
    convs.push_back(conv2d(branch_input(x, cfg, i), p.branch_convs[i]));
    features.push_back(convs.back().output);
    ses.push_back(se_weight_with_grad(features.back(), p.se_for(i)));
    logits.push_back(ses.back().output);
  }
  GradPair softmax = softmax_over_scales_with_grad(concat_channels(logits), scales);
  Tensor stacked = concat_channels(features);
  Tensor out = broadcast_mul_channel(stacked, softmax.output);

  const Shape in_shape = x.shape();
  const PsaParams* pp = &p;
  auto backward = [pp, in_shape, convs = std::move(convs), ses = std::move(ses),
                   softmax = std::move(softmax), stacked = std::move(stacked)](
                      const Tensor& dy) -> Gradients {
    if (dy.shape() != stacked.shape())
      fail("psa backward: gradient shape " + dy.shape().str() + ", expected " +
           stacked.shape().str());
    const PsaConfig& cfg = pp->config;
    const std::size_t scales = cfg.scales;
    const std::size_t width = cfg.branch_channels();

    const Tensor& att = softmax.output;
    std::vector<Tensor> d_features = split_channels(broadcast_mul_channel(dy, att), scales);
    const Tensor d_logits = softmax.backward(channel_totals(dy, stacked)).input;
    const std::vector<Tensor> d_z = split_channels(d_logits, scales);

    std::vector<std::vector<Tensor>> se_grads(pp->se_weights.size());
    Tensor dx(in_shape);
    std::vector<Tensor> conv_grads;
    for (std::size_t i = 0; i < scales; ++i) {
      Gradients g_se = ses[i].backward(d_z[i]);
      add_inplace(d_features[i], g_se.input);
      auto& slot = se_grads[cfg.share_se ? 0 : i];
      if (slot.empty()) {
        slot = std::move(g_se.params);
      } else {
        for (std::size_t j = 0; j < slot.size(); ++j) add_inplace(slot[j], g_se.params[j]);
      }
      Gradients g_conv = convs[i].backward(d_features[i]);
      if (cfg.branch_input == BranchInput::kFull)
        add_inplace(dx, g_conv.input);
      else
        add_channel_slice(dx, g_conv.input, i * width);
      for (Tensor& t : g_conv.params) conv_grads.push_back(std::move(t));
    }
    Gradients out{std::move(dx), std::move(conv_grads)};
    for (auto& slot : se_grads)
      for (Tensor& t : slot) out.params.push_back(std::move(t));
    return out;
  };
  return {std::move(out), std::move(backward)};
}

}  // namespace epsa
