// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// Dense NCHW tensor of doubles and the elementwise/reshaping primitives the
// rest of the library is built on.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace epsa {

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool valid() const { return n > 0 && c > 0 && h > 0 && w > 0; }
  bool operator==(const Shape&) const = default;

  std::string str() const;
};

/// Deterministic random source. mt19937_64 output is fixed by the standard;
/// the real-valued conversions are done here so streams match across
/// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [low, high).
  double uniform(double low, double high);
  /// Standard normal via Box-Muller.
  double normal();
  std::size_t below(std::size_t bound);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a salt.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* ptr() const { return data_.data(); }
  double* ptr() { return data_.data(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor zeros(Shape shape);
Tensor full(Shape shape, double value);
Tensor random_uniform(Shape shape, std::uint64_t seed, double low = 0.0,
                      double high = 1.0);

Tensor concat_channels(std::span<const Tensor> parts);
std::vector<Tensor> split_channels(const Tensor& x, std::size_t s);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);

/// out[n,c,h,w] = x[n,c,h,w] * w[n,c,0,0]
Tensor broadcast_mul_channel(const Tensor& x, const Tensor& w);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
double sum_all(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& acc, const Tensor& x);

template <class F>
Tensor map_elementwise(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

bool all_finite(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

// ---- .t4 container --------------------------------------------------------
// Four little-endian u32 shape fields (N, C, H, W) followed by N*C*H*W
// little-endian IEEE-754 doubles. Files may hold several records back to back.

void write_t4(std::ostream& out, const Tensor& t);
Tensor read_t4(std::istream& in);
void save_t4(const std::string& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_t4(const std::string& path);

}  // namespace epsa
