// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "paft/param_set.hpp"
#include "paft/rng.hpp"
#include "paft/tensor.hpp"

namespace paft {
namespace {

TEST(Tensor, RejectsLengthMismatch) {
  try {
    Tensor({2, 3}, {1, 2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Tensor, RejectsNonFiniteValues) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  for (double bad : {nan, inf, -inf}) {
    try {
      Tensor({2}, {1.0, bad});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNonFiniteResult);
    }
  }
}

TEST(Tensor, ScalarHasOneElement) {
  Tensor s({}, {3.5});
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(element_count({}), 1u);
  EXPECT_EQ(element_count({0, 5}), 0u);
}

TEST(Tensor, AddSubMulScalar) {
  EXPECT_EQ(add(Tensor::vector({1, 2}), Tensor::vector({3, 4})), Tensor::vector({4, 6}));
  const Tensor x({2, 2}, {1.5, -2, 0, 7});
  EXPECT_EQ(sub(x, x), Tensor::zeros({2, 2}));
  const Tensor z = mul_scalar(Tensor::vector({1, -2}), 0.0);
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
}

TEST(Tensor, BinaryOpsCheckShape) {
  EXPECT_THROW(add(Tensor::vector({1, 2}), Tensor({2, 1}, {1, 2})), Error);
  EXPECT_THROW(sub(Tensor::vector({1}), Tensor::vector({1, 2})), Error);
}

TEST(Tensor, OverflowIsRejected) {
  const double big = std::numeric_limits<double>::max();
  try {
    add(Tensor::vector({big}), Tensor::vector({big}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteResult);
  }
  EXPECT_THROW(mul_scalar(Tensor::vector({big}), 2.0), Error);
}

TEST(Tensor, AddThenSubIsExactOnDyadicValues) {
  SeededRng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(17), b(17);
    // Multiples of 2^-10 in [-8, 8]: every sum and difference is exact.
    for (double& v : a) v = static_cast<double>(static_cast<int>(rng.below(16385)) - 8192) / 1024.0;
    for (double& v : b) v = static_cast<double>(static_cast<int>(rng.below(16385)) - 8192) / 1024.0;
    const Tensor ta = Tensor::vector(a), tb = Tensor::vector(b);
    EXPECT_TRUE(sub(add(ta, tb), tb).bit_equal(ta));
  }
}

TEST(Matmul, HandExamples) {
  EXPECT_EQ(matmul(Tensor({2, 1}, {1, 2}), Tensor({1, 2}, {3, 4})), Tensor({2, 2}, {3, 4, 6, 8}));
  EXPECT_EQ(matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 2}, {5, 6, 7, 8})),
            Tensor({2, 2}, {19, 22, 43, 50}));
  const Tensor m({2, 2}, {0.25, -3, 9, 1e-5});
  EXPECT_EQ(matmul(Tensor({2, 2}, {1, 0, 0, 1}), m), m);
}

TEST(Matmul, MatchesNaiveTripleLoop) {
  SeededRng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
    std::vector<double> a(m * k), b(k * n);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const Tensor c = matmul(Tensor({m, k}, a), Tensor({k, n}, b));
    const auto ref = oracle::matmul(a, b, m, k, n);
    ASSERT_EQ(c.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
  }
}

TEST(Matmul, RejectsBadShapes) {
  EXPECT_THROW(matmul(Tensor({2, 3}, std::vector<double>(6)), Tensor({2, 3}, std::vector<double>(6))), Error);
  EXPECT_THROW(matmul(Tensor::vector({1, 2}), Tensor({2, 1}, {1, 2})), Error);
}

TEST(ParamSet, RejectsBadNames) {
  ParamSet p;
  EXPECT_THROW(p.insert("", Tensor::vector({1})), Error);
  EXPECT_THROW(p.insert("__metadata__", Tensor::vector({1})), Error);
  EXPECT_THROW(p.insert("a\nb", Tensor::vector({1})), Error);
  p.insert("w", Tensor::vector({1}));
  try {
    p.insert("w", Tensor::vector({2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateName);
  }
}

TEST(ParamSet, IteratesInLexicographicOrder) {
  ParamSet p;
  p.insert("z", Tensor::vector({5}));
  p.insert("a", Tensor::vector({1}));
  p.insert("m.b", Tensor::vector({3}));
  EXPECT_EQ(p.names(), (std::vector<std::string>{"a", "m.b", "z"}));
}

TEST(ParamSet, UnknownNameThrows) {
  ParamSet p;
  try {
    (void)p.at("missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownParameter);
  }
}

TEST(FlattenConcat, FollowsNameOrder) {
  ParamSet p;
  p.insert("b", Tensor::vector({3}));
  p.insert("a", Tensor::vector({1, 2}));
  EXPECT_EQ(flatten_concat(p), Tensor::vector({1, 2, 3}));
  ParamSet q;
  q.insert("z", Tensor::vector({5}));
  q.insert("a", Tensor::vector({1}));
  EXPECT_EQ(flatten_concat(q), Tensor::vector({1, 5}));
}

TEST(FlattenConcat, RoundTripsThroughUnflatten) {
  ParamSet p;
  p.insert("w", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  p.insert("b", Tensor::vector({-1, -2}));
  p.insert("s", Tensor({}, {9}));
  EXPECT_TRUE(unflatten(flatten_concat(p), schema_of(p)).bit_equal(p));
  EXPECT_THROW(unflatten(Tensor::vector({1, 2}), schema_of(p)), Error);
}

TEST(FlattenConcat, EmptyParamSetThrows) {
  try {
    flatten_concat(ParamSet{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyParamSet);
  }
}

}  // namespace
}  // namespace paft
