// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "epsa/parallel.hpp"
#include "epsa/tensor.hpp"

namespace epsa {
namespace {

TEST(Shape, SizeAndValidity) {
  const Shape s{2, 3, 4, 5};
  EXPECT_EQ(s.size(), 120u);
  EXPECT_EQ(s.plane(), 20u);
  EXPECT_TRUE(s.valid());
  EXPECT_FALSE((Shape{0, 3, 4, 5}).valid());
  EXPECT_EQ(s.str(), "(2,3,4,5)");
}

TEST(Tensor, RejectsInvalidShapesAndSizes) {
  EXPECT_THROW(Tensor(Shape{1, 0, 2, 2}), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<double>(3)), std::invalid_argument);
}

TEST(Tensor, IndexingIsRowMajorNchw) {
  Tensor t({2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  // Hand-computed offset of (1, 2, 3, 4): ((1*3 + 2)*4 + 3)*5 + 4 = 119.
  EXPECT_EQ(t(1, 2, 3, 4), 119.0);
  EXPECT_EQ(t(0, 1, 0, 0), 20.0);
  EXPECT_EQ(t(1, 0, 0, 0), 60.0);
}

TEST(Tensor, ConcatSplitRoundTrip) {
  const Tensor x = random_uniform({2, 8, 3, 3}, 5);
  const std::vector<Tensor> parts = split_channels(x, 4);
  ASSERT_EQ(parts.size(), 4u);
  for (const Tensor& p : parts) EXPECT_EQ(p.shape(), (Shape{2, 2, 3, 3}));
  EXPECT_EQ(parts[2](1, 1, 2, 0), x(1, 5, 2, 0));
  EXPECT_EQ(concat_channels(parts), x);
  EXPECT_THROW(split_channels(x, 3), std::invalid_argument);
  EXPECT_EQ(slice_channels(x, 6, 2), parts[3]);
}

TEST(Tensor, ConcatRejectsMismatchedParts) {
  const std::vector<Tensor> parts{Tensor({1, 2, 3, 3}), Tensor({1, 2, 4, 3})};
  EXPECT_THROW(concat_channels(parts), std::invalid_argument);
}

TEST(Tensor, BroadcastMulChannel) {
  const Tensor x = random_uniform({2, 3, 2, 2}, 1);
  const Tensor w({2, 3, 1, 1}, {1, 2, 3, 4, 5, 6});
  const Tensor y = broadcast_mul_channel(x, w);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 4; ++i)
        EXPECT_EQ(y(n, c, i / 2, i % 2), x(n, c, i / 2, i % 2) * w(n, c, 0, 0));
}

TEST(Tensor, ArithmeticAgreesWithLoops) {
  const Tensor a = random_uniform({1, 2, 3, 3}, 2, -1, 1);
  const Tensor b = random_uniform({1, 2, 3, 3}, 3, -1, 1);
  double d = 0, s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(add(a, b)[i], a[i] + b[i]);
    EXPECT_EQ(sub(a, b)[i], a[i] - b[i]);
    EXPECT_EQ(mul(a, b)[i], a[i] * b[i]);
    EXPECT_EQ(scale(a, 3.0)[i], 3.0 * a[i]);
    d += a[i] * b[i];
    s += a[i];
  }
  EXPECT_DOUBLE_EQ(dot(a, b), d);
  EXPECT_DOUBLE_EQ(sum_all(a), s);
  EXPECT_THROW(add(a, Tensor({1, 2, 3, 4})), std::invalid_argument);
}

TEST(Tensor, FinitenessAndDiff) {
  Tensor t = full({1, 1, 2, 2}, 1.0);
  EXPECT_TRUE(all_finite(t));
  t[3] = std::nan("");
  EXPECT_FALSE(all_finite(t));
  EXPECT_EQ(max_abs_diff(full({1, 1, 1, 2}, 1.0), Tensor({1, 1, 1, 2}, {1.0, 1.5})), 0.5);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform(-2.0, 3.0);
    EXPECT_EQ(u, b.uniform(-2.0, 3.0));
    EXPECT_GE(u, -2.0);
    EXPECT_LT(u, 3.0);
  }
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
  EXPECT_NE(mix_seed(1, 1), mix_seed(1, 2));
  EXPECT_THROW(random_uniform({1, 1, 1, 1}, 0, 1.0, 1.0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
  Rng r(9);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.01);
}

TEST(T4, ByteLayoutIsLittleEndian) {
  std::ostringstream os;
  write_t4(os, Tensor({1, 2, 1, 1}, {1.0, -2.5}));
  const std::string bytes = os.str();
  ASSERT_EQ(bytes.size(), 16u + 16u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);  // C, low byte first
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0u);
  // 1.0 = 0x3FF0000000000000: the top byte sits last.
  EXPECT_EQ(static_cast<unsigned char>(bytes[16 + 7]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16 + 6]), 0xF0u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16 + 0]), 0x00u);
}

TEST(T4, RoundTripsThroughFile) {
  const auto path = std::filesystem::temp_directory_path() / "epsakit_test_roundtrip.t4";
  const std::vector<Tensor> tensors{random_uniform({2, 3, 4, 5}, 1, -9, 9),
                                    Tensor({1, 1, 1, 1}, {-0.0})};
  save_t4(path.string(), tensors);
  EXPECT_EQ(load_t4(path.string()), tensors);
  std::filesystem::remove(path);
}

TEST(T4, TruncatedInputThrows) {
  std::ostringstream os;
  write_t4(os, random_uniform({1, 1, 2, 2}, 3));
  std::istringstream is(os.str().substr(0, 20));
  EXPECT_THROW(read_t4(is), std::runtime_error);
}

TEST(Parallel, CoversEveryIndexOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) ++hits[i];
  });
  for (int h : hits) EXPECT_EQ(h, 1);
}

}  // namespace
}  // namespace epsa
