#pragma once

// Reference implementations written independently of the library kernels:
// plain loops, extended precision where it matters, and full sorts instead
// of partial selection. Tests compare library results against these.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "trips/attention.hpp"
#include "trips/backbone.hpp"
#include "trips/rng.hpp"
#include "trips/tensor.hpp"

namespace oracle {

using trips::Shape;
using trips::Tensor;

Tensor random_tensor(trips::SeededRng& rng, Shape shape, double scale = 1.0);
// Probability vector of length n with strictly positive entries.
Tensor random_distribution(trips::SeededRng& rng, std::size_t n);

Tensor matmul(const Tensor& a, const Tensor& b);
// exp(x - max) / sum in long double.
std::vector<double> softmax(const std::vector<double>& row);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
// erf by its Maclaurin series in long double; accurate for |x| <= 3.
double erf_series(double x);
double gelu(double x);
Tensor linear(const trips::LinearLayer& l, const Tensor& x);

struct Attention {
    Tensor out;                                  // [nq x d] before the output projection
    std::vector<std::vector<std::vector<double>>> probs;  // [head][query][key]
};
// Scaled dot-product attention with per-head loops; q/k/v already projected.
Attention attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);
// wo(attention(wq x, wk x, wv x)).
Tensor mhsa(const trips::MhsaLayer& layer, const Tensor& x);

// k by exact integer arithmetic for keep rates given in thousandths.
std::size_t keep_count_permille(std::size_t n, std::size_t rate_permille);

struct Selection {
    std::vector<std::size_t> kept;  // ascending
    std::vector<double> fused;      // length d (zeros if nothing dropped)
    double fused_mass = 0.0;
};
// Full sort by (score desc, index asc), take the first k, recompute the
// weighted sum of the rest directly.
Selection select(const Tensor& candidates, const std::vector<double>& scores, std::size_t k);

// Sequence lengths by replaying the counting rule with per-mille rates.
std::vector<std::size_t> schedule(std::size_t n0, const std::vector<std::size_t>& locations,
                                  const std::vector<std::size_t>& rates_permille, std::size_t layers,
                                  bool fused_token = true);

// Term-by-term MAC counts.
double encoder_layer_macs(double n, double d, double mult);
double cross_layer_macs(double nq, double nk, double d, double mult);

}  // namespace oracle
