// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "epsa/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "epsa/parallel.hpp"

namespace epsa {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

Tensor vector_tensor(std::size_t length, double value = 0.0) {
  return full({1, length, 1, 1}, value);
}

// Output columns [lo, hi) whose input column ow*stride + offset lies inside
// [0, extent).
struct ColumnRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

ColumnRange valid_columns(std::ptrdiff_t offset, std::size_t stride,
                          std::size_t extent, std::size_t out_extent) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(extent) - 1 - offset;
  std::ptrdiff_t hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvGeometry {
  std::size_t n, in_c, out_c, h, w, oh, ow, k, stride, pad, groups, in_per_group,
      out_per_group;
  std::vector<ColumnRange> cols;  // per kernel column
  std::vector<ColumnRange> rows;  // per kernel row

  ConvGeometry(const Shape& x, const Conv2dParams& p)
      : n(x.n),
        in_c(p.in_channels),
        out_c(p.out_channels),
        h(x.h),
        w(x.w),
        oh(p.output_extent(x.h)),
        ow(p.output_extent(x.w)),
        k(p.kernel),
        stride(p.stride),
        pad(p.padding),
        groups(p.groups),
        in_per_group(p.in_channels / p.groups),
        out_per_group(p.out_channels / p.groups) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const auto offset = static_cast<std::ptrdiff_t>(kk) -
                          static_cast<std::ptrdiff_t>(pad);
      cols.push_back(valid_columns(offset, stride, w, ow));
      rows.push_back(valid_columns(offset, stride, h, oh));
    }
  }

  std::ptrdiff_t offset(std::size_t kk) const {
    return static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(pad);
  }
};

}  // namespace

// ---- conv2d ---------------------------------------------------------------

std::size_t conv2d_param_count(std::size_t in_channels, std::size_t out_channels,
                               std::size_t kernel, std::size_t groups,
                               bool with_bias) {
  return out_channels * (in_channels / groups) * kernel * kernel +
         (with_bias ? out_channels : 0);
}

Conv2dParams Conv2dParams::make(std::size_t in_channels, std::size_t out_channels,
                                std::size_t kernel, std::size_t stride,
                                std::size_t padding, std::size_t groups,
                                bool with_bias, std::uint64_t seed) {
  Conv2dParams p;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.kernel = kernel;
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  if (groups == 0 || in_channels % groups != 0 || out_channels % groups != 0)
    fail("conv2d: channels " + std::to_string(in_channels) + "->" +
         std::to_string(out_channels) + " not divisible by groups " +
         std::to_string(groups));
  const std::size_t fan_in = (in_channels / groups) * kernel * kernel;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  p.weight = random_uniform({out_channels, in_channels / groups, kernel, kernel},
                            seed, -bound, bound);
  if (with_bias) {
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    p.bias = random_uniform({1, out_channels, 1, 1}, mix_seed(seed, 1), -b, b);
  }
  p.validate();
  return p;
}

void Conv2dParams::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 ||
      groups == 0)
    fail("conv2d: zero-sized geometry");
  if (kernel % 2 == 0) fail("conv2d: kernel must be odd, got " + std::to_string(kernel));
  if (in_channels % groups != 0 || out_channels % groups != 0)
    fail("conv2d: channels not divisible by groups");
  const Shape expected{out_channels, in_channels / groups, kernel, kernel};
  if (weight.shape() != expected)
    fail("conv2d: weight shape " + weight.shape().str() + ", expected " +
         expected.str());
  if (bias && bias->shape() != Shape{1, out_channels, 1, 1})
    fail("conv2d: bias shape " + bias->shape().str());
}

std::size_t Conv2dParams::param_count() const {
  return weight.size() + (bias ? bias->size() : 0);
}

void Conv2dParams::collect_params(const std::string& prefix,
                                  std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight, true});
  if (bias) out.push_back({prefix + ".bias", &*bias, false});
}

GradPair conv2d(const Tensor& x, const Conv2dParams& p) {
  p.validate();
  const Shape& xs = x.shape();
  if (xs.c != p.in_channels)
    fail("conv2d: input has " + std::to_string(xs.c) + " channels, expected " +
         std::to_string(p.in_channels));
  if (xs.h + 2 * p.padding < p.kernel || xs.w + 2 * p.padding < p.kernel)
    fail("conv2d: input " + xs.str() + " smaller than kernel");

  ConvGeometry g(xs, p);
  Tensor out({g.n, g.out_c, g.oh, g.ow});
  const double* wt = p.weight.ptr();
  const std::size_t kk2 = g.k * g.k;

  parallel_for(g.n * g.out_c, [&](std::size_t begin, std::size_t end) {
    for (std::size_t idx = begin; idx < end; ++idx) {
      const std::size_t n = idx / g.out_c;
      const std::size_t oc = idx % g.out_c;
      const std::size_t grp = oc / g.out_per_group;
      double* dst = out.ptr() + idx * g.oh * g.ow;
      if (p.bias) std::fill_n(dst, g.oh * g.ow, (*p.bias)[oc]);
      for (std::size_t ic = 0; ic < g.in_per_group; ++ic) {
        const double* src =
            x.ptr() + (n * g.in_c + grp * g.in_per_group + ic) * g.h * g.w;
        const double* wk = wt + (oc * g.in_per_group + ic) * kk2;
        for (std::size_t kh = 0; kh < g.k; ++kh) {
          const ColumnRange rr = g.rows[kh];
          for (std::size_t kw = 0; kw < g.k; ++kw) {
            const double wv = wk[kh * g.k + kw];
            const ColumnRange cr = g.cols[kw];
            for (std::size_t oy = rr.lo; oy < rr.hi; ++oy) {
              const auto iy = static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>(oy * g.stride) + g.offset(kh));
              const double* srow = src + iy * g.w;
              double* drow = dst + oy * g.ow;
              const std::ptrdiff_t off = g.offset(kw);
              if (g.stride == 1) {
                const double* s = srow + off;
                for (std::size_t ox = cr.lo; ox < cr.hi; ++ox)
                  drow[ox] += wv * s[ox];
              } else {
                for (std::size_t ox = cr.lo; ox < cr.hi; ++ox)
                  drow[ox] += wv * srow[static_cast<std::ptrdiff_t>(ox * g.stride) + off];
              }
            }
          }
        }
      }
    }
  });

  const Conv2dParams* pp = &p;
  auto backward = [x, g, pp](const Tensor& dy) -> Gradients {
    const Shape expected{g.n, g.out_c, g.oh, g.ow};
    if (dy.shape() != expected)
      fail("conv2d backward: gradient shape " + dy.shape().str() +
           ", expected " + expected.str());
    const std::size_t kk2 = g.k * g.k;
    const double* wt = pp->weight.ptr();
    Tensor dx(x.shape());
    Tensor dw(pp->weight.shape());

    parallel_for(g.n * g.in_c, [&](std::size_t begin, std::size_t end) {
      for (std::size_t idx = begin; idx < end; ++idx) {
        const std::size_t n = idx / g.in_c;
        const std::size_t c = idx % g.in_c;
        const std::size_t grp = c / g.in_per_group;
        const std::size_t ic = c % g.in_per_group;
        double* dst = dx.ptr() + idx * g.h * g.w;
        for (std::size_t j = 0; j < g.out_per_group; ++j) {
          const std::size_t oc = grp * g.out_per_group + j;
          const double* gy = dy.ptr() + (n * g.out_c + oc) * g.oh * g.ow;
          const double* wk = wt + (oc * g.in_per_group + ic) * kk2;
          for (std::size_t kh = 0; kh < g.k; ++kh) {
            const ColumnRange rr = g.rows[kh];
            for (std::size_t kw = 0; kw < g.k; ++kw) {
              const double wv = wk[kh * g.k + kw];
              const ColumnRange cr = g.cols[kw];
              const std::ptrdiff_t off = g.offset(kw);
              for (std::size_t oy = rr.lo; oy < rr.hi; ++oy) {
                const auto iy = static_cast<std::size_t>(
                    static_cast<std::ptrdiff_t>(oy * g.stride) + g.offset(kh));
                double* drow = dst + iy * g.w;
                const double* grow = gy + oy * g.ow;
                for (std::size_t ox = cr.lo; ox < cr.hi; ++ox)
                  drow[static_cast<std::ptrdiff_t>(ox * g.stride) + off] += wv * grow[ox];
              }
            }
          }
        }
      }
    });

    parallel_for(g.out_c, [&](std::size_t begin, std::size_t end) {
      for (std::size_t oc = begin; oc < end; ++oc) {
        const std::size_t grp = oc / g.out_per_group;
        for (std::size_t ic = 0; ic < g.in_per_group; ++ic) {
          double* gw = dw.ptr() + (oc * g.in_per_group + ic) * kk2;
          for (std::size_t n = 0; n < g.n; ++n) {
            const double* src =
                x.ptr() + (n * g.in_c + grp * g.in_per_group + ic) * g.h * g.w;
            const double* gy = dy.ptr() + (n * g.out_c + oc) * g.oh * g.ow;
            for (std::size_t kh = 0; kh < g.k; ++kh) {
              const ColumnRange rr = g.rows[kh];
              for (std::size_t kw = 0; kw < g.k; ++kw) {
                const ColumnRange cr = g.cols[kw];
                const std::ptrdiff_t off = g.offset(kw);
                double acc = 0.0;
                for (std::size_t oy = rr.lo; oy < rr.hi; ++oy) {
                  const auto iy = static_cast<std::size_t>(
                      static_cast<std::ptrdiff_t>(oy * g.stride) + g.offset(kh));
                  const double* srow = src + iy * g.w;
                  const double* grow = gy + oy * g.ow;
                  for (std::size_t ox = cr.lo; ox < cr.hi; ++ox)
                    acc += grow[ox] * srow[static_cast<std::ptrdiff_t>(ox * g.stride) + off];
                }
                gw[kh * g.k + kw] += acc;
              }
            }
          }
        }
      }
    });

    Gradients grads{std::move(dx), {}};
    grads.params.push_back(std::move(dw));
    if (pp->bias) {
      Tensor db({1, g.out_c, 1, 1});
      for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t oc = 0; oc < g.out_c; ++oc) {
          const double* gy = dy.ptr() + (n * g.out_c + oc) * g.oh * g.ow;
          double s = 0.0;
          for (std::size_t i = 0; i < g.oh * g.ow; ++i) s += gy[i];
          db[oc] += s;
        }
      grads.params.push_back(std::move(db));
    }
    return grads;
  };
  return {std::move(out), std::move(backward)};
}

// ---- pooling --------------------------------------------------------------

Tensor global_avg_pool(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out({s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  const double inv = 1.0 / static_cast<double>(plane);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* src = x.ptr() + nc * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    out[nc] = acc * inv;
  }
  return out;
}

GradPair global_avg_pool_with_grad(const Tensor& x) {
  const Shape xs = x.shape();
  auto backward = [xs](const Tensor& dy) -> Gradients {
    if (dy.shape() != Shape{xs.n, xs.c, 1, 1})
      fail("global_avg_pool backward: gradient shape " + dy.shape().str());
    Tensor dx(xs);
    const std::size_t plane = xs.plane();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc)
      std::fill_n(dx.ptr() + nc * plane, plane, dy[nc] * inv);
    return {std::move(dx), {}};
  };
  return {global_avg_pool(x), std::move(backward)};
}

GradPair max_pool(const Tensor& x, std::size_t kernel, std::size_t stride,
                  std::size_t padding) {
  const Shape xs = x.shape();
  if (kernel == 0 || stride == 0) fail("max_pool: zero kernel or stride");
  if (xs.h + 2 * padding < kernel || xs.w + 2 * padding < kernel)
    fail("max_pool: input " + xs.str() + " smaller than window");
  const std::size_t oh = (xs.h + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (xs.w + 2 * padding - kernel) / stride + 1;
  Tensor out({xs.n, xs.c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const double* src = x.ptr() + nc * xs.plane();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_at = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(xs.w)) continue;
            const std::size_t at = static_cast<std::size_t>(iy) * xs.w +
                                   static_cast<std::size_t>(ix);
            if (src[at] > best) {
              best = src[at];
              best_at = at;
            }
          }
        }
        const std::size_t o = (nc * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = nc * xs.plane() + best_at;
      }
  }
  const Shape os = out.shape();
  auto backward = [xs, os, argmax = std::move(argmax)](const Tensor& dy) -> Gradients {
    if (dy.shape() != os) fail("max_pool backward: gradient shape " + dy.shape().str());
    Tensor dx(xs);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
    return {std::move(dx), {}};
  };
  return {std::move(out), std::move(backward)};
}

// ---- linear ---------------------------------------------------------------

LinearParams LinearParams::make(std::size_t in_features, std::size_t out_features,
                                bool with_bias, std::uint64_t seed) {
  if (in_features == 0 || out_features == 0) fail("linear: zero features");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  LinearParams p;
  p.weight = random_uniform({out_features, in_features, 1, 1}, seed, -bound, bound);
  if (with_bias)
    p.bias = random_uniform({1, out_features, 1, 1}, mix_seed(seed, 1), -bound, bound);
  return p;
}

LinearParams LinearParams::from_matrix(std::size_t out_features,
                                       std::size_t in_features,
                                       std::vector<double> weight,
                                       std::optional<std::vector<double>> bias) {
  LinearParams p;
  p.weight = Tensor({out_features, in_features, 1, 1}, std::move(weight));
  if (bias) p.bias = Tensor({1, out_features, 1, 1}, std::move(*bias));
  return p;
}

std::size_t LinearParams::param_count() const {
  return weight.size() + (bias ? bias->size() : 0);
}

void LinearParams::collect_params(const std::string& prefix,
                                  std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight, true});
  if (bias) out.push_back({prefix + ".bias", &*bias, false});
}

GradPair linear(const Tensor& x, const LinearParams& p) {
  const Shape xs = x.shape();
  const std::size_t features = xs.c * xs.h * xs.w;
  const std::size_t in = p.in_features();
  const std::size_t outf = p.out_features();
  if (features != in)
    fail("linear: input has " + std::to_string(features) +
         " features, expected " + std::to_string(in));
  if (p.bias && p.bias->shape() != Shape{1, outf, 1, 1})
    fail("linear: bias shape " + p.bias->shape().str());
  Tensor out({xs.n, outf, 1, 1});
  const double* wt = p.weight.ptr();
  for (std::size_t n = 0; n < xs.n; ++n) {
    const double* xv = x.ptr() + n * in;
    for (std::size_t o = 0; o < outf; ++o) {
      const double* row = wt + o * in;
      double acc = p.bias ? (*p.bias)[o] : 0.0;
      for (std::size_t f = 0; f < in; ++f) acc += row[f] * xv[f];
      out[n * outf + o] = acc;
    }
  }
  const LinearParams* pp = &p;
  auto backward = [x, pp, in, outf](const Tensor& dy) -> Gradients {
    const std::size_t batch = x.shape().n;
    if (dy.shape() != Shape{batch, outf, 1, 1})
      fail("linear backward: gradient shape " + dy.shape().str());
    const double* wt = pp->weight.ptr();
    Tensor dx(x.shape());
    Tensor dw(pp->weight.shape());
    for (std::size_t n = 0; n < batch; ++n) {
      const double* xv = x.ptr() + n * in;
      double* dxv = dx.ptr() + n * in;
      for (std::size_t o = 0; o < outf; ++o) {
        const double g = dy[n * outf + o];
        if (g == 0.0) continue;
        const double* row = wt + o * in;
        double* grow = dw.ptr() + o * in;
        for (std::size_t f = 0; f < in; ++f) {
          dxv[f] += g * row[f];
          grow[f] += g * xv[f];
        }
      }
    }
    Gradients grads{std::move(dx), {}};
    grads.params.push_back(std::move(dw));
    if (pp->bias) {
      Tensor db({1, outf, 1, 1});
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < outf; ++o) db[o] += dy[n * outf + o];
      grads.params.push_back(std::move(db));
    }
    return grads;
  };
  return {std::move(out), std::move(backward)};
}

// ---- activations ----------------------------------------------------------

GradPair relu(const Tensor& x) {
  Tensor out = map_elementwise(x, [](double v) { return v > 0.0 ? v : 0.0; });
  auto backward = [x](const Tensor& dy) -> Gradients {
    if (dy.shape() != x.shape()) fail("relu backward: gradient shape " + dy.shape().str());
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    return {std::move(dx), {}};
  };
  return {std::move(out), std::move(backward)};
}

GradPair sigmoid(const Tensor& x) {
  Tensor out = map_elementwise(x, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  auto backward = [y = out](const Tensor& dy) -> Gradients {
    if (dy.shape() != y.shape()) fail("sigmoid backward: gradient shape " + dy.shape().str());
    Tensor dx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
    return {std::move(dx), {}};
  };
  return {std::move(out), std::move(backward)};
}

Tensor softmax_over_scales(const Tensor& z, std::size_t scales) {
  const Shape& s = z.shape();
  if (scales == 0 || s.h != 1 || s.w != 1 || s.c % scales != 0)
    fail("softmax_over_scales: logits " + s.str() + " incompatible with " +
         std::to_string(scales) + " scales");
  const std::size_t width = s.c / scales;
  Tensor out(s);
  std::vector<double> e(scales);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < width; ++c) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < scales; ++i)
        peak = std::max(peak, z[n * s.c + i * width + c]);
      double total = 0.0;
      for (std::size_t i = 0; i < scales; ++i) {
        e[i] = std::exp(z[n * s.c + i * width + c] - peak);
        total += e[i];
      }
      for (std::size_t i = 0; i < scales; ++i)
        out[n * s.c + i * width + c] = e[i] / total;
    }
  return out;
}

GradPair softmax_over_scales_with_grad(const Tensor& z, std::size_t scales) {
  Tensor att = softmax_over_scales(z, scales);
  auto backward = [att, scales](const Tensor& dy) -> Gradients {
    const Shape& s = att.shape();
    if (dy.shape() != s) fail("softmax backward: gradient shape " + dy.shape().str());
    const std::size_t width = s.c / scales;
    Tensor dz(s);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < width; ++c) {
        double weighted = 0.0;
        for (std::size_t i = 0; i < scales; ++i) {
          const std::size_t at = n * s.c + i * width + c;
          weighted += att[at] * dy[at];
        }
        for (std::size_t i = 0; i < scales; ++i) {
          const std::size_t at = n * s.c + i * width + c;
          dz[at] = att[at] * (dy[at] - weighted);
        }
      }
    return {std::move(dz), {}};
  };
  return {std::move(att), std::move(backward)};
}

// ---- batch norm -----------------------------------------------------------

BatchNormParams BatchNormParams::make(std::size_t channels) {
  BatchNormParams p;
  p.gamma = vector_tensor(channels, 1.0);
  p.beta = vector_tensor(channels, 0.0);
  p.running_mean = vector_tensor(channels, 0.0);
  p.running_var = vector_tensor(channels, 1.0);
  return p;
}

void BatchNormParams::collect_params(const std::string& prefix,
                                     std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma, false});
  out.push_back({prefix + ".beta", &beta, false});
}

GradPair batch_norm(const Tensor& x, BatchNormParams& p, Mode mode) {
  const Shape xs = x.shape();
  const std::size_t channels = p.channels();
  if (xs.c != channels)
    fail("batch_norm: input has " + std::to_string(xs.c) + " channels, expected " +
         std::to_string(channels));
  if (!(p.eps > 0.0)) fail("batch_norm: eps must be positive");
  const std::size_t plane = xs.plane();
  const std::size_t count = xs.n * plane;

  std::vector<double> mean(channels), inv_std(channels);
  if (mode != Mode::kEval) {
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const double* src = x.ptr() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const double* src = x.ptr() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + p.eps);
      if (mode != Mode::kTrain) continue;
      const double unbiased =
          count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mu;
      p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = p.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(p.running_var[c] + p.eps);
    }
  }

  Tensor xhat(xs);
  Tensor out(xs);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * plane;
      const double g = p.gamma[c];
      const double b = p.beta[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = (x[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = v;
        out[base + i] = g * v + b;
      }
    }

  std::vector<double> gamma(p.gamma.data().begin(), p.gamma.data().end());
  auto backward = [xhat = std::move(xhat), inv_std = std::move(inv_std),
                   gamma = std::move(gamma), mode](const Tensor& dy) -> Gradients {
    const Shape& s = xhat.shape();
    if (dy.shape() != s) fail("batch_norm backward: gradient shape " + dy.shape().str());
    const std::size_t channels = s.c;
    const std::size_t plane = s.plane();
    const double count = static_cast<double>(s.n * plane);
    Tensor dx(s);
    Tensor dgamma({1, channels, 1, 1});
    Tensor dbeta({1, channels, 1, 1});
    for (std::size_t c = 0; c < channels; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t base = (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[base + i];
          sum_dy_xhat += dy[base + i] * xhat[base + i];
        }
      }
      dgamma[c] = sum_dy_xhat;
      dbeta[c] = sum_dy;
      const double k = gamma[c] * inv_std[c];
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t base = (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (mode != Mode::kEval)
            dx[base + i] = k * (dy[base + i] - sum_dy / count -
                                xhat[base + i] * sum_dy_xhat / count);
          else
            dx[base + i] = k * dy[base + i];
        }
      }
    }
    Gradients grads{std::move(dx), {}};
    grads.params.push_back(std::move(dgamma));
    grads.params.push_back(std::move(dbeta));
    return grads;
  };
  return {std::move(out), std::move(backward)};
}

// ---- verification ---------------------------------------------------------

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double epsilon) {
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + epsilon;
    const double up = f(probe);
    probe[i] = orig - epsilon;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape())
    fail("max_relative_error: shape mismatch " + a.shape().str() + " vs " +
         b.shape().str());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace epsa
