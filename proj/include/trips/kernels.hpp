#pragma once

#include <cstddef>
#include <vector>

#include "trips/rng.hpp"
#include "trips/tensor.hpp"

namespace trips {

inline constexpr double kLayerNormEps = 1e-6;

// Dense projection y = x W^T + b.
struct LinearLayer {
    Tensor weight;  // [out x in]
    Tensor bias;    // [out]

    LinearLayer() = default;
    LinearLayer(Tensor weight, Tensor bias);
    // Zero bias.
    explicit LinearLayer(Tensor weight);

    std::size_t in_features() const { return weight.cols(); }
    std::size_t out_features() const { return weight.rows(); }
};

struct LayerNormParams {
    Tensor gamma;  // [n]
    Tensor beta;   // [n]
    double eps = kLayerNormEps;

    // gamma = 1, beta = 0.
    static LayerNormParams identity(std::size_t n, double eps = kLayerNormEps);
};

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T, without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Adds a length-cols vector to every row.
Tensor add_row_vector(const Tensor& x, const Tensor& v);

// Row-wise softmax with per-row max subtraction. Throws NumericError on NaN/Inf input.
Tensor softmax_rows(const Tensor& x);

// Row-wise (x - mean) / sqrt(var + eps) * gamma + beta with the biased variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);
Tensor layer_norm(const Tensor& x, const LayerNormParams& params);

// Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor& x);
double gelu(double x);

Tensor linear_apply(const LinearLayer& layer, const Tensor& x);

// Indices of the k largest scores, ties broken toward the lower index,
// returned in ascending index order. Requires 1 <= k <= n.
std::vector<std::size_t> top_k_indices(const Tensor& scores, std::size_t k);

// i.i.d. N(0, scale^2) draws in row-major order.
Tensor seeded_init(const Shape& shape, double scale, SeededRng& rng);

// Row helpers used by the selection pipeline.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

}  // namespace trips
