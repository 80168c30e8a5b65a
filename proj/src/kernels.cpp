#include "trips/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "trips/error.hpp"

namespace trips {

namespace {

Tensor checked(Tensor t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
    return t;
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
    }
}

void require_vector_len(const Tensor& t, std::size_t n, const char* op, const char* what) {
    if (t.size() != n || (t.rank() != 1 && !(t.rank() == 2 && t.shape()[0] == 1))) {
        throw ShapeError(std::string(op) + ": " + what + " must be a length-" + std::to_string(n) +
                         " vector, got " + shape_to_string(t.shape()));
    }
}

}  // namespace

LinearLayer::LinearLayer(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {
    require_matrix(weight, "LinearLayer");
    require_vector_len(bias, weight.rows(), "LinearLayer", "bias");
}

LinearLayer::LinearLayer(Tensor w) : weight(std::move(w)) {
    require_matrix(weight, "LinearLayer");
    bias = Tensor::zeros({weight.rows()});
}

LayerNormParams LayerNormParams::identity(std::size_t n, double eps) {
    return {Tensor::filled({n}, 1.0), Tensor::zeros({n}), eps};
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dims differ, " + shape_to_string(a.shape()) + " * " +
                         shape_to_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return checked(Tensor({m, n}, std::move(out)), "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_nt: inner dims differ, " + shape_to_string(a.shape()) + " * " +
                         shape_to_string(b.shape()) + "^T");
    }
    std::vector<double> out(m * n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    // Four output columns at a time; each dot product still sums in p order.
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = pb + j * k;
            const double* b1 = b0 + k;
            const double* b2 = b1 + k;
            const double* b3 = b2 + k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double x = arow[p];
                s0 += x * b0[p];
                s1 += x * b1[p];
                s2 += x * b2[p];
                s3 += x * b3[p];
            }
            out[i * n + j] = s0;
            out[i * n + j + 1] = s1;
            out[i * n + j + 2] = s2;
            out[i * n + j + 3] = s3;
        }
        for (; j < n; ++j) {
            const double* brow = pb + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            out[i * n + j] = s;
        }
    }
    return checked(Tensor({m, n}, std::move(out)), "matmul_nt");
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i, j);
    return Tensor({n, m}, std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return checked(Tensor(a.shape(), std::move(out)), "add");
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    return checked(Tensor(a.shape(), std::move(out)), "scale");
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
    require_matrix(x, "add_row_vector");
    const std::size_t m = x.rows(), n = x.cols();
    require_vector_len(v, n, "add_row_vector", "vector");
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += v[j];
    return checked(Tensor(x.shape(), std::move(out)), "add_row_vector");
}

Tensor softmax_rows(const Tensor& x) {
    require_matrix(x, "softmax_rows");
    if (!x.all_finite()) throw NumericError("softmax_rows: non-finite input");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = x.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(row[j] - mx);
            sum += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
    }
    return checked(Tensor(x.shape(), std::move(out)), "softmax_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_matrix(x, "layer_norm");
    const std::size_t m = x.rows(), n = x.cols();
    require_vector_len(gamma, n, "layer_norm", "gamma");
    require_vector_len(beta, n, "layer_norm", "beta");
    if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = x.row(i);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = (row[j] - mean) * inv * gamma[j] + beta[j];
        }
    }
    return checked(Tensor(x.shape(), std::move(out)), "layer_norm");
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& params) {
    return layer_norm(x, params.gamma, params.beta, params.eps);
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu(x[i]);
    return checked(Tensor(x.shape(), std::move(out)), "gelu");
}

Tensor linear_apply(const LinearLayer& layer, const Tensor& x) {
    require_matrix(x, "linear_apply");
    if (x.cols() != layer.in_features()) {
        throw ShapeError("linear_apply: input width " + std::to_string(x.cols()) +
                         " != layer input " + std::to_string(layer.in_features()));
    }
    return add_row_vector(matmul_nt(x, layer.weight), layer.bias);
}

std::vector<std::size_t> top_k_indices(const Tensor& scores, std::size_t k) {
    const std::size_t n = scores.size();
    if (k < 1 || k > n) {
        throw ConfigError("top_k_indices: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(n) + "]");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      better);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

Tensor seeded_init(const Shape& shape, double scale_value, SeededRng& rng) {
    std::vector<double> out(shape_numel(shape));
    for (double& v : out) v = scale_value * rng.normal();
    return Tensor(shape, std::move(out));
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_rows");
    if (begin >= end || end > x.rows()) throw ShapeError("slice_rows: bad range");
    const std::size_t n = x.cols();
    const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * n);
    const auto last = x.values().begin() + static_cast<std::ptrdiff_t>(end * n);
    return Tensor({end - begin, n}, std::vector<double>(first, last));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_cols");
    if (begin >= end || end > x.cols()) throw ShapeError("slice_cols: bad range");
    const std::size_t m = x.rows(), w = end - begin;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.at(i, begin + j);
    return Tensor({m, w}, std::move(out));
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
    require_matrix(x, "gather_rows");
    if (indices.empty()) throw ShapeError("gather_rows: empty index list");
    const std::size_t n = x.cols();
    std::vector<double> out;
    out.reserve(indices.size() * n);
    for (std::size_t idx : indices) {
        const auto r = x.row(idx);
        out.insert(out.end(), r.begin(), r.end());
    }
    return Tensor({indices.size(), n}, std::move(out));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return Tensor({m, n}, std::move(out));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * n + offset + j] = p.at(i, j);
        offset += w;
    }
    return Tensor({m, n}, std::move(out));
}

}  // namespace trips
