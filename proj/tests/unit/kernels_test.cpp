#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../support/oracles.hpp"
#include "trips/error.hpp"
#include "trips/kernels.hpp"

namespace trips {
namespace {

TEST(Matmul, IdentityLeavesOperand) {
    SeededRng rng(1);
    const Tensor x = oracle::random_tensor(rng, {3, 4});
    EXPECT_EQ(matmul(Tensor::identity(3), x), x);
}

TEST(Matmul, HandArithmetic) {
    const Tensor y = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
    EXPECT_EQ(y, Tensor::matrix({{3}, {7}}));
}

TEST(Matmul, MatchesTripleLoop) {
    SeededRng rng(2);
    const Tensor a = oracle::random_tensor(rng, {5, 7});
    const Tensor b = oracle::random_tensor(rng, {7, 3});
    EXPECT_LE(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
}

TEST(Matmul, TransposedVariantAgrees) {
    SeededRng rng(3);
    const Tensor a = oracle::random_tensor(rng, {6, 5});
    const Tensor b = oracle::random_tensor(rng, {9, 5});
    EXPECT_LE(max_abs_diff(matmul_nt(a, b), oracle::matmul(a, transpose(b))), 1e-12);
}

TEST(Matmul, InnerDimensionMismatch) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    EXPECT_THROW(matmul_nt(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), ShapeError);
}

TEST(Softmax, ZerosGiveUniformRow) {
    const Tensor p = softmax_rows(Tensor::matrix({{0, 0, 0}}));
    for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    const Tensor p = softmax_rows(Tensor::matrix({{1000, 0}}));
    EXPECT_TRUE(p.all_finite());
    EXPECT_NEAR(p.at(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(p.at(0, 1), 0.0, 1e-15);
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
    SeededRng rng(4);
    const Tensor x = oracle::random_tensor(rng, {4, 17}, 3.0);
    EXPECT_LE(max_abs_diff(softmax_rows(x), oracle::softmax_rows(x)), 1e-12);
}

TEST(Softmax, RejectsNonFiniteInput) {
    EXPECT_THROW(softmax_rows(Tensor::matrix({{0, NAN}})), NumericError);
    EXPECT_THROW(softmax_rows(Tensor::matrix({{INFINITY, 0}})), NumericError);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
    const auto p = LayerNormParams::identity(4);
    const Tensor y = layer_norm(Tensor::matrix({{2, 2, 2, 2}}), p);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowUnchangedUpToEps) {
    const auto p = LayerNormParams::identity(2);
    const Tensor y = layer_norm(Tensor::matrix({{1, -1}}), p);
    const double expected = 1.0 / std::sqrt(1.0 + kLayerNormEps);
    EXPECT_NEAR(y.at(0, 0), expected, 1e-15);
    EXPECT_NEAR(y.at(0, 1), -expected, 1e-15);
}

TEST(LayerNorm, MatchesTwoPassOracle) {
    SeededRng rng(5);
    const Tensor x = oracle::random_tensor(rng, {6, 10}, 4.0);
    const Tensor g = oracle::random_tensor(rng, {10});
    const Tensor b = oracle::random_tensor(rng, {10});
    EXPECT_LE(max_abs_diff(layer_norm(x, g, b), oracle::layer_norm(x, g, b, kLayerNormEps)), 1e-10);
}

TEST(LayerNorm, AffineLengthMismatch) {
    EXPECT_THROW(layer_norm(Tensor::zeros({2, 3}), Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST(Gelu, FixedPoints) {
    EXPECT_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(10.0), 10.0, 1e-6);
    EXPECT_NEAR(gelu(-1.0), 0.5 * -1.0 * (1.0 + oracle::erf_series(-1.0 / std::sqrt(2.0))), 1e-15);
}

TEST(Gelu, TensorFormMatchesScalar) {
    SeededRng rng(6);
    const Tensor x = oracle::random_tensor(rng, {3, 5}, 2.0);
    const Tensor y = gelu(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(y[i], gelu(x[i]));
        // The series oracle is only trusted on |x| <= 3.
        if (std::abs(x[i]) <= 3.0) {
            EXPECT_NEAR(y[i], oracle::gelu(x[i]), 1e-14);
        }
    }
}

TEST(Linear, IdentityWeightZeroBias) {
    SeededRng rng(7);
    const Tensor x = oracle::random_tensor(rng, {3, 4});
    EXPECT_EQ(linear_apply(LinearLayer(Tensor::identity(4)), x), x);
}

TEST(Linear, ZeroWeightBroadcastsBias) {
    const LinearLayer l(Tensor::zeros({2, 3}), Tensor::vector({5, -1}));
    const Tensor y = linear_apply(l, Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
    EXPECT_EQ(y, Tensor::matrix({{5, -1}, {5, -1}}));
}

TEST(Linear, MatchesMatmulPlusBias) {
    SeededRng rng(8);
    const LinearLayer l(oracle::random_tensor(rng, {5, 6}), oracle::random_tensor(rng, {5}));
    const Tensor x = oracle::random_tensor(rng, {4, 6});
    EXPECT_LE(max_abs_diff(linear_apply(l, x), oracle::linear(l, x)), 1e-12);
}

TEST(Linear, InputWidthMismatch) {
    const LinearLayer l(Tensor::zeros({2, 3}));
    EXPECT_THROW(linear_apply(l, Tensor::zeros({1, 4})), ShapeError);
}

TEST(TopK, HandExample) {
    EXPECT_EQ(top_k_indices(Tensor::vector({0.1, 0.5, 0.4}), 2), (std::vector<std::size_t>{1, 2}));
}

TEST(TopK, TiesPreferLowerIndex) {
    EXPECT_EQ(top_k_indices(Tensor::vector({0.25, 0.25, 0.25, 0.25}), 2), (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(top_k_indices(Tensor::vector({0.1, 0.3, 0.3, 0.3}), 2), (std::vector<std::size_t>{1, 2}));
}

TEST(TopK, MatchesFullSortOracle) {
    SeededRng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor s = oracle::random_tensor(rng, {50});
        const auto got = top_k_indices(s, 20);
        const auto want = oracle::select(Tensor::zeros({50, 1}), s.values(), 20).kept;
        EXPECT_EQ(got, want);
    }
}

TEST(TopK, RangeChecked) {
    const Tensor s = Tensor::vector({1, 2, 3});
    EXPECT_THROW(top_k_indices(s, 0), ConfigError);
    EXPECT_THROW(top_k_indices(s, 4), ConfigError);
}

TEST(RowHelpers, SliceGatherConcat) {
    const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
    EXPECT_EQ(slice_rows(m, 1, 3), Tensor::matrix({{4, 5, 6}, {7, 8, 9}}));
    EXPECT_EQ(slice_cols(m, 1, 2), Tensor::matrix({{2}, {5}, {8}}));
    EXPECT_EQ(gather_rows(m, {2, 0}), Tensor::matrix({{7, 8, 9}, {1, 2, 3}}));
    EXPECT_EQ(concat_rows({slice_rows(m, 0, 1), slice_rows(m, 1, 3)}), m);
    EXPECT_EQ(concat_cols({slice_cols(m, 0, 2), slice_cols(m, 2, 3)}), m);
}

}  // namespace
}  // namespace trips
