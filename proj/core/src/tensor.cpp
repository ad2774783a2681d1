// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include "epsa/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace epsa {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform(double low, double high) {
  const double unit =
      static_cast<double>(next_u64() >> 11) * 0x1.0p-53;  // [0, 1)
  double v = low + (high - low) * unit;
  if (v >= high) v = std::nextafter(high, low);
  return v;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform(0.0, 1.0);
  while (u1 <= 0.0) u1 = uniform(0.0, 1.0);
  const double u2 = uniform(0.0, 1.0);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::below(std::size_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below: bound must be > 0");
  return static_cast<std::size_t>(next_u64() % bound);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor::Tensor() : Tensor(Shape{}) {}

Tensor::Tensor(Shape shape) : shape_(shape) {
  if (!shape.valid())
    throw std::invalid_argument("Tensor: non-positive shape " + shape.str());
  data_.assign(shape.size(), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (!shape.valid())
    throw std::invalid_argument("Tensor: non-positive shape " + shape.str());
  if (data_.size() != shape.size())
    throw std::invalid_argument("Tensor: data length does not match shape " +
                                shape.str());
}

Tensor zeros(Shape shape) { return Tensor(shape); }

Tensor full(Shape shape, double value) {
  Tensor t(shape);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor random_uniform(Shape shape, std::uint64_t seed, double low,
                      double high) {
  if (!(low < high))
    throw std::invalid_argument("random_uniform: require low < high");
  Tensor t(shape);
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(low, high);
  return t;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_channels: no parts");
  const Shape first = parts.front().shape();
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      throw std::invalid_argument("concat_channels: mismatched dims " +
                                  s.str() + " vs " + first.str());
    channels += s.c;
  }
  Tensor out({first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (std::size_t n = 0; n < first.n; ++n) {
    double* dst = out.ptr() + n * channels * plane;
    for (const Tensor& p : parts) {
      const std::size_t len = p.shape().c * plane;
      std::copy_n(p.ptr() + n * len, len, dst);
      dst += len;
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (count == 0 || begin + count > s.c)
    throw std::invalid_argument("slice_channels: range out of bounds");
  Tensor out({s.n, count, s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n)
    std::copy_n(x.ptr() + (n * s.c + begin) * plane, count * plane,
                out.ptr() + n * count * plane);
  return out;
}

std::vector<Tensor> split_channels(const Tensor& x, std::size_t s) {
  if (s == 0 || x.shape().c % s != 0)
    throw std::invalid_argument("split_channels: " + std::to_string(x.shape().c) +
                                " channels not divisible by " +
                                std::to_string(s));
  const std::size_t part = x.shape().c / s;
  std::vector<Tensor> out;
  out.reserve(s);
  for (std::size_t i = 0; i < s; ++i)
    out.push_back(slice_channels(x, i * part, part));
  return out;
}

Tensor broadcast_mul_channel(const Tensor& x, const Tensor& w) {
  const Shape& s = x.shape();
  const Shape& ws = w.shape();
  if (ws.n != s.n || ws.c != s.c || ws.h != 1 || ws.w != 1)
    throw std::invalid_argument("broadcast_mul_channel: weight shape " +
                                ws.str() + " incompatible with " + s.str());
  Tensor out(s);
  const std::size_t plane = s.plane();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double f = w[nc];
    const double* src = x.ptr() + nc * plane;
    double* dst = out.ptr() + nc * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * f;
  }
  return out;
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  return map_elementwise(x, [factor](double v) { return v * factor; });
}

double sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void add_inplace(Tensor& acc, const Tensor& x) {
  require_same(acc, x, "add_inplace");
  double* dst = acc.ptr();
  const double* src = x.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] += src[i];
}

bool all_finite(const Tensor& x) {
  return std::all_of(x.data().begin(), x.data().end(),
                     [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- .t4 ------------------------------------------------------------------

namespace {

template <class U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <class U>
bool get_le(std::istream& in, U& v) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
    return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(bytes[i]) << (8 * i);
  return true;
}

}  // namespace

void write_t4(std::ostream& out, const Tensor& t) {
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d > 0xFFFFFFFFu)
      throw std::invalid_argument("write_t4: dimension exceeds u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("write_t4: stream failure");
}

Tensor read_t4(std::istream& in) {
  std::array<std::uint32_t, 4> dims{};
  for (auto& d : dims)
    if (!get_le(in, d)) throw std::runtime_error("read_t4: truncated header");
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  if (!shape.valid()) throw std::runtime_error("read_t4: zero dimension");
  std::vector<double> data(shape.size());
  for (double& v : data) {
    std::uint64_t bits = 0;
    if (!get_le(in, bits)) throw std::runtime_error("read_t4: truncated data");
    v = std::bit_cast<double>(bits);
  }
  return Tensor(shape, std::move(data));
}

void save_t4(const std::string& path, std::span<const Tensor> tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_t4: cannot open " + path);
  for (const Tensor& t : tensors) write_t4(out, t);
}

std::vector<Tensor> load_t4(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_t4: cannot open " + path);
  std::vector<Tensor> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_t4(in));
  return out;
}

}  // namespace epsa
