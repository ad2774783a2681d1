// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "epsa/blocks.hpp"

#include <stdexcept>

namespace epsa {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

Tensor channel_totals(const Tensor& a, const Tensor& b) {
  const Shape& s = a.shape();
  Tensor out({s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i)
      acc += a[nc * plane + i] * b[nc * plane + i];
    out[nc] = acc;
  }
  return out;
}

void append(std::vector<Tensor>& dst, std::vector<Tensor>& src) {
  for (Tensor& t : src) dst.push_back(std::move(t));
}

}  // namespace

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kResnet: return "resnet";
    case BlockKind::kSe: return "se";
    case BlockKind::kEpsa: return "epsa";
  }
  return "?";
}

BlockKind block_kind_from_string(const std::string& text) {
  if (text == "resnet") return BlockKind::kResnet;
  if (text == "se") return BlockKind::kSe;
  if (text == "epsa") return BlockKind::kEpsa;
  fail("unknown block kind '" + text + "' (expected resnet|se|epsa)");
}

PsaConfig BlockSpec::resolved_psa() const {
  PsaConfig cfg = psa.value_or(PsaConfig::pyramid(mid_channels));
  cfg.channels = mid_channels;
  cfg.stride = stride;
  return cfg;
}

void BlockSpec::validate() const {
  if (in_channels == 0 || mid_channels == 0 || out_channels == 0)
    fail("block: zero width");
  if (stride != 1 && stride != 2) fail("block: stride must be 1 or 2");
  if (kind == BlockKind::kEpsa) {
    if (!psa) fail("block: epsa block requires a psa config");
    resolved_psa().validate();
  } else if (psa) {
    fail("block: psa config given for a " + to_string(kind) + " block");
  }
  if (kind == BlockKind::kSe && se_reduction == 0) fail("block: se_reduction must be positive");
}

Block build_block(const BlockSpec& spec, std::uint64_t seed) {
  spec.validate();
  Block b;
  b.spec = spec;
  b.reduce = Conv2dParams::make(spec.in_channels, spec.mid_channels, 1, 1, 0, 1,
                                false, mix_seed(seed, 1));
  b.bn1 = BatchNormParams::make(spec.mid_channels);
  if (spec.kind == BlockKind::kEpsa)
    b.psa = PsaParams::make(spec.resolved_psa(), mix_seed(seed, 2));
  else
    b.spatial = Conv2dParams::make(spec.mid_channels, spec.mid_channels, 3,
                                   spec.stride, 1, 1, false, mix_seed(seed, 2));
  b.bn2 = BatchNormParams::make(spec.mid_channels);
  b.expand = Conv2dParams::make(spec.mid_channels, spec.out_channels, 1, 1, 0, 1,
                                false, mix_seed(seed, 3));
  b.bn3 = BatchNormParams::make(spec.out_channels);
  if (spec.kind == BlockKind::kSe)
    b.se = SeWeightParams::make(spec.out_channels, spec.se_reduction, spec.se_bias,
                                mix_seed(seed, 4));
  if (spec.has_projection()) {
    b.shortcut_conv = Conv2dParams::make(spec.in_channels, spec.out_channels, 1,
                                         spec.stride, 0, 1, false, mix_seed(seed, 5));
    b.shortcut_bn = BatchNormParams::make(spec.out_channels);
  }
  return b;
}

Block build_epsa_block(const BlockSpec& spec, std::uint64_t seed) {
  if (spec.kind != BlockKind::kEpsa)
    fail("build_epsa_block: spec kind is " + to_string(spec.kind));
  return build_block(spec, seed);
}

std::size_t block_param_count(const BlockSpec& spec) {
  spec.validate();
  std::size_t total = conv2d_param_count(spec.in_channels, spec.mid_channels, 1, 1, false);
  total += 2 * spec.mid_channels;
  if (spec.kind == BlockKind::kEpsa)
    total += psa_param_count(spec.resolved_psa());
  else
    total += conv2d_param_count(spec.mid_channels, spec.mid_channels, 3, 1, false);
  total += 2 * spec.mid_channels;
  total += conv2d_param_count(spec.mid_channels, spec.out_channels, 1, 1, false);
  total += 2 * spec.out_channels;
  if (spec.kind == BlockKind::kSe) {
    const std::size_t hidden = std::max<std::size_t>(spec.out_channels / spec.se_reduction, 1);
    total += 2 * hidden * spec.out_channels;
    if (spec.se_bias) total += hidden + spec.out_channels;
  }
  if (spec.has_projection())
    total += conv2d_param_count(spec.in_channels, spec.out_channels, 1, 1, false) +
             2 * spec.out_channels;
  return total;
}

std::size_t Block::param_count() const {
  std::size_t total = reduce.param_count() + bn1.param_count() + bn2.param_count() +
                      expand.param_count() + bn3.param_count();
  if (spatial) total += spatial->param_count();
  if (psa) total += psa->param_count();
  if (se) total += se->param_count();
  if (shortcut_conv) total += shortcut_conv->param_count() + shortcut_bn->param_count();
  return total;
}

void Block::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  reduce.collect_params(prefix + ".conv1", out);
  bn1.collect_params(prefix + ".bn1", out);
  if (spatial) spatial->collect_params(prefix + ".conv2", out);
  if (psa) psa->collect_params(prefix + ".psa", out);
  bn2.collect_params(prefix + ".bn2", out);
  expand.collect_params(prefix + ".conv3", out);
  bn3.collect_params(prefix + ".bn3", out);
  if (se) se->collect_params(prefix + ".se", out);
  if (shortcut_conv) {
    shortcut_conv->collect_params(prefix + ".downsample.conv", out);
    shortcut_bn->collect_params(prefix + ".downsample.bn", out);
  }
}

GradPair Block::forward(const Tensor& x, Mode mode) {
  if (x.shape().c != spec.in_channels)
    fail("block: input has " + std::to_string(x.shape().c) + " channels, expected " +
         std::to_string(spec.in_channels));

  GradPair c1 = conv2d(x, reduce);
  GradPair n1 = batch_norm(c1.output, bn1, mode);
  GradPair r1 = relu(n1.output);
  GradPair c2 = psa ? psa_with_grad(r1.output, *psa) : conv2d(r1.output, *spatial);
  GradPair n2 = batch_norm(c2.output, bn2, mode);
  GradPair r2 = relu(n2.output);
  GradPair c3 = conv2d(r2.output, expand);
  GradPair n3 = batch_norm(c3.output, bn3, mode);

  Tensor residual = n3.output;
  std::optional<GradPair> gate;
  if (se) {
    gate = se_weight_with_grad(residual, *se);
    residual = broadcast_mul_channel(residual, gate->output);
  }

  std::optional<GradPair> sc_conv, sc_bn;
  Tensor shortcut = x;
  if (shortcut_conv) {
    sc_conv = conv2d(x, *shortcut_conv);
    sc_bn = batch_norm(sc_conv->output, *shortcut_bn, mode);
    shortcut = sc_bn->output;
  }
  if (residual.shape() != shortcut.shape())
    fail("block: residual " + residual.shape().str() + " vs shortcut " +
         shortcut.shape().str());
  GradPair out = relu(add(residual, shortcut));
  Tensor y = out.output;

  auto backward = [c1 = std::move(c1), n1 = std::move(n1), r1 = std::move(r1),
                   c2 = std::move(c2), n2 = std::move(n2), r2 = std::move(r2),
                   c3 = std::move(c3), n3 = std::move(n3), gate = std::move(gate),
                   sc_conv = std::move(sc_conv), sc_bn = std::move(sc_bn),
                   out = std::move(out)](const Tensor& dy) -> Gradients {
    const Tensor d_sum = out.backward(dy).input;

    Tensor d_main = d_sum;
    std::vector<Tensor> se_grads;
    if (gate) {
      Gradients g = gate->backward(channel_totals(d_sum, n3.output));
      d_main = broadcast_mul_channel(d_sum, gate->output);
      add_inplace(d_main, g.input);
      se_grads = std::move(g.params);
    }
    Gradients g_n3 = n3.backward(d_main);
    Gradients g_c3 = c3.backward(g_n3.input);
    Gradients g_r2 = r2.backward(g_c3.input);
    Gradients g_n2 = n2.backward(g_r2.input);
    Gradients g_c2 = c2.backward(g_n2.input);
    Gradients g_r1 = r1.backward(g_c2.input);
    Gradients g_n1 = n1.backward(g_r1.input);
    Gradients g_c1 = c1.backward(g_n1.input);

    Gradients result{std::move(g_c1.input), {}};
    append(result.params, g_c1.params);
    append(result.params, g_n1.params);
    append(result.params, g_c2.params);
    append(result.params, g_n2.params);
    append(result.params, g_c3.params);
    append(result.params, g_n3.params);
    append(result.params, se_grads);
    if (sc_conv) {
      Gradients g_sbn = sc_bn->backward(d_sum);
      Gradients g_sc = sc_conv->backward(g_sbn.input);
      add_inplace(result.input, g_sc.input);
      append(result.params, g_sc.params);
      append(result.params, g_sbn.params);
    } else {
      add_inplace(result.input, d_sum);
    }
    return result;
  };
  return {std::move(y), std::move(backward)};
}

}  // namespace epsa
