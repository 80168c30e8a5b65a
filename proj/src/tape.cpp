#include "trips/tape.hpp"

#include <cmath>
#include <numbers>

#include "trips/error.hpp"
#include "trips/kernels.hpp"

namespace trips::autodiff {

namespace {

Tensor weighted_row_sum(const Tensor& x, const Tensor& w, const std::vector<std::size_t>& indices,
                        std::size_t offset) {
    const std::size_t d = x.cols();
    std::vector<double> out(d, 0.0);
    for (std::size_t i : indices) {
        const double wi = w[i];
        const auto row = x.row(offset + i);
        for (std::size_t c = 0; c < d; ++c) out[c] += wi * row[c];
    }
    return Tensor({1, d}, std::move(out));
}

Tensor normalized(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    if (total == 0.0) throw NumericError("normalize: zero sum");
    std::vector<double> out(x.values());
    for (double& v : out) v /= total;
    return Tensor(x.shape(), std::move(out));
}

Tensor total_sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return Tensor({1, 1}, {s});
}

// Mutable gradient buffer for one node.
using Buffer = std::vector<double>;

void accumulate(Buffer& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::vector<double> column_sums(const Tensor& g) {
    std::vector<double> out(g.cols(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) out[j] += g.at(i, j);
    return out;
}

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

}  // namespace

Var Tape::push(Node node) {
    if (node.op != OpKind::kLeaf) {
        std::vector<Tensor> inputs;
        inputs.reserve(node.inputs.size());
        for (std::size_t id : node.inputs) inputs.push_back(nodes_.at(id).value);
        node.value = evaluate(node, inputs);
    }
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

Tensor Tape::evaluate(const Node& n, const std::vector<Tensor>& in) const {
    switch (n.op) {
        case OpKind::kLeaf: return n.value;
        case OpKind::kMatMul: return trips::matmul(in[0], in[1]);
        case OpKind::kMatMulNT: return trips::matmul_nt(in[0], in[1]);
        case OpKind::kLinear: return trips::linear_apply(LinearLayer(in[1], in[2]), in[0]);
        case OpKind::kAdd: return trips::add(in[0], in[1]);
        case OpKind::kAddRowVector: return trips::add_row_vector(in[0], in[1]);
        case OpKind::kScale: return trips::scale(in[0], n.scalar);
        case OpKind::kSoftmaxRows: return trips::softmax_rows(in[0]);
        case OpKind::kLayerNorm: return trips::layer_norm(in[0], in[1], in[2], n.scalar);
        case OpKind::kGelu: return trips::gelu(in[0]);
        case OpKind::kSliceRows: return trips::slice_rows(in[0], n.begin, n.end);
        case OpKind::kSliceCols: return trips::slice_cols(in[0], n.begin, n.end);
        case OpKind::kGatherRows: return trips::gather_rows(in[0], n.indices);
        case OpKind::kConcatRows: return trips::concat_rows(in);
        case OpKind::kConcatCols: return trips::concat_cols(in);
        case OpKind::kWeightedSum: return weighted_row_sum(in[0], in[1], n.indices, n.begin);
        case OpKind::kNormalize: return normalized(in[0]);
        case OpKind::kSum: return total_sum(in[0]);
        case OpKind::kReshape: return in[0].reshaped(n.shape);
    }
    throw Error("tape: unknown op");
}

Var Tape::leaf(Tensor value, std::string name) {
    Node n;
    n.value = std::move(value);
    n.name = std::move(name);
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.op = OpKind::kMatMul;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::matmul_nt(Var a, Var b) {
    Node n;
    n.op = OpKind::kMatMulNT;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::linear(Var x, Var weight, Var bias) {
    Node n;
    n.op = OpKind::kLinear;
    n.inputs = {x.id, weight.id, bias.id};
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    Node n;
    n.op = OpKind::kAdd;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Var Tape::add_row_vector(Var x, Var v) {
    Node n;
    n.op = OpKind::kAddRowVector;
    n.inputs = {x.id, v.id};
    return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
    Node n;
    n.op = OpKind::kScale;
    n.inputs = {a.id};
    n.scalar = factor;
    return push(std::move(n));
}

Var Tape::softmax_rows(Var x) {
    Node n;
    n.op = OpKind::kSoftmaxRows;
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    Node n;
    n.op = OpKind::kLayerNorm;
    n.inputs = {x.id, gamma.id, beta.id};
    n.scalar = eps;
    const Tensor& xv = value(x);
    const std::size_t m = xv.rows(), d = xv.cols();
    std::vector<double> xhat(m * d);
    n.saved_inv.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = xv.row(i);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        n.saved_inv[i] = inv;
        for (std::size_t j = 0; j < d; ++j) xhat[i * d + j] = (row[j] - mean) * inv;
    }
    n.saved = Tensor({m, d}, std::move(xhat));
    return push(std::move(n));
}

Var Tape::gelu(Var x) {
    Node n;
    n.op = OpKind::kGelu;
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::slice_rows(Var x, std::size_t begin, std::size_t end) {
    Node n;
    n.op = OpKind::kSliceRows;
    n.inputs = {x.id};
    n.begin = begin;
    n.end = end;
    return push(std::move(n));
}

Var Tape::slice_cols(Var x, std::size_t begin, std::size_t end) {
    Node n;
    n.op = OpKind::kSliceCols;
    n.inputs = {x.id};
    n.begin = begin;
    n.end = end;
    return push(std::move(n));
}

Var Tape::gather_rows(Var x, std::vector<std::size_t> indices) {
    Node n;
    n.op = OpKind::kGatherRows;
    n.inputs = {x.id};
    n.indices = std::move(indices);
    return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    Node n;
    n.op = OpKind::kConcatRows;
    for (Var p : parts) n.inputs.push_back(p.id);
    return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    Node n;
    n.op = OpKind::kConcatCols;
    for (Var p : parts) n.inputs.push_back(p.id);
    return push(std::move(n));
}

Var Tape::weighted_sum(Var x, Var weights, std::vector<std::size_t> indices, std::size_t offset) {
    Node n;
    n.op = OpKind::kWeightedSum;
    n.inputs = {x.id, weights.id};
    n.indices = std::move(indices);
    n.begin = offset;
    return push(std::move(n));
}

Var Tape::normalize(Var x) {
    Node n;
    n.op = OpKind::kNormalize;
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::sum(Var x) {
    Node n;
    n.op = OpKind::kSum;
    n.inputs = {x.id};
    return push(std::move(n));
}

Var Tape::reshape(Var x, Shape shape) {
    Node n;
    n.op = OpKind::kReshape;
    n.inputs = {x.id};
    n.shape = std::move(shape);
    return push(std::move(n));
}

std::vector<Tensor> Tape::replay() const {
    std::vector<Tensor> values;
    values.reserve(nodes_.size());
    for (const Node& n : nodes_) {
        std::vector<Tensor> inputs;
        for (std::size_t id : n.inputs) inputs.push_back(values.at(id));
        values.push_back(evaluate(n, inputs));
    }
    return values;
}

Gradients Tape::backward(Var output, const Tensor& seed) const {
    if (seed.shape() != value(output).shape()) {
        throw ShapeError("backward: seed shape " + shape_to_string(seed.shape()) +
                         " != output shape " + shape_to_string(value(output).shape()));
    }
    std::vector<Buffer> grads(nodes_.size());
    grads[output.id].assign(seed.values().begin(), seed.values().end());

    const auto buf = [&](std::size_t id) -> Buffer& {
        if (grads[id].empty()) grads[id].assign(nodes_[id].value.size(), 0.0);
        return grads[id];
    };

    for (std::size_t id = output.id + 1; id-- > 0;) {
        if (grads[id].empty()) continue;
        const Node& n = nodes_[id];
        const Tensor g(n.value.shape(), grads[id]);
        const auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

        switch (n.op) {
            case OpKind::kLeaf:
                break;
            case OpKind::kMatMul:
                accumulate(buf(n.inputs[0]), trips::matmul_nt(g, in(1)));
                accumulate(buf(n.inputs[1]), trips::matmul(trips::transpose(in(0)), g));
                break;
            case OpKind::kMatMulNT:
                accumulate(buf(n.inputs[0]), trips::matmul(g, in(1)));
                accumulate(buf(n.inputs[1]), trips::matmul(trips::transpose(g), in(0)));
                break;
            case OpKind::kLinear: {
                accumulate(buf(n.inputs[0]), trips::matmul(g, in(1)));
                accumulate(buf(n.inputs[1]), trips::matmul(trips::transpose(g), in(0)));
                const auto cs = column_sums(g);
                Buffer& gb = buf(n.inputs[2]);
                for (std::size_t j = 0; j < cs.size(); ++j) gb[j] += cs[j];
                break;
            }
            case OpKind::kAdd:
                accumulate(buf(n.inputs[0]), g);
                accumulate(buf(n.inputs[1]), g);
                break;
            case OpKind::kAddRowVector: {
                accumulate(buf(n.inputs[0]), g);
                const auto cs = column_sums(g);
                Buffer& gv = buf(n.inputs[1]);
                for (std::size_t j = 0; j < cs.size(); ++j) gv[j] += cs[j];
                break;
            }
            case OpKind::kScale: {
                Buffer& gx = buf(n.inputs[0]);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.scalar * g[i];
                break;
            }
            case OpKind::kSoftmaxRows: {
                const Tensor& y = n.value;
                Buffer& gx = buf(n.inputs[0]);
                const std::size_t m = y.rows(), c = y.cols();
                for (std::size_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                }
                break;
            }
            case OpKind::kLayerNorm: {
                const Tensor& xhat = n.saved;
                const Tensor& gamma = in(1);
                const std::size_t m = xhat.rows(), d = xhat.cols();
                Buffer& gx = buf(n.inputs[0]);
                Buffer& gg = buf(n.inputs[1]);
                Buffer& gb = buf(n.inputs[2]);
                std::vector<double> dxhat(d);
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gij = g[i * d + j];
                        gg[j] += gij * xhat[i * d + j];
                        gb[j] += gij;
                        dxhat[j] = gij * gamma[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[i * d + j];
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_xhat /= static_cast<double>(d);
                    const double inv = n.saved_inv[i];
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[i * d + j] +=
                            inv * (dxhat[j] - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                    }
                }
                break;
            }
            case OpKind::kGelu: {
                const Tensor& x = in(0);
                Buffer& gx = buf(n.inputs[0]);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * gelu_derivative(x[i]);
                break;
            }
            case OpKind::kSliceRows: {
                Buffer& gx = buf(n.inputs[0]);
                const std::size_t c = in(0).cols();
                for (std::size_t i = 0; i < g.size(); ++i) gx[n.begin * c + i] += g[i];
                break;
            }
            case OpKind::kSliceCols: {
                Buffer& gx = buf(n.inputs[0]);
                const std::size_t c = in(0).cols(), w = n.end - n.begin;
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < w; ++j) gx[i * c + n.begin + j] += g[i * w + j];
                break;
            }
            case OpKind::kGatherRows: {
                Buffer& gx = buf(n.inputs[0]);
                const std::size_t c = in(0).cols();
                for (std::size_t r = 0; r < n.indices.size(); ++r)
                    for (std::size_t j = 0; j < c; ++j) gx[n.indices[r] * c + j] += g[r * c + j];
                break;
            }
            case OpKind::kConcatRows: {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    Buffer& gx = buf(n.inputs[k]);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[offset + i];
                    offset += gx.size();
                }
                break;
            }
            case OpKind::kConcatCols: {
                const std::size_t total = g.cols();
                std::size_t offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const std::size_t w = in(k).cols();
                    Buffer& gx = buf(n.inputs[k]);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < w; ++j) gx[i * w + j] += g[i * total + offset + j];
                    offset += w;
                }
                break;
            }
            case OpKind::kWeightedSum: {
                const Tensor& x = in(0);
                const Tensor& w = in(1);
                const std::size_t d = x.cols();
                Buffer& gx = buf(n.inputs[0]);
                Buffer& gw = buf(n.inputs[1]);
                for (std::size_t i : n.indices) {
                    const std::size_t r = n.begin + i;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        gx[r * d + c] += w[i] * g[c];
                        dot += g[c] * x[r * d + c];
                    }
                    gw[i] += dot;
                }
                break;
            }
            case OpKind::kNormalize: {
                const Tensor& x = in(0);
                const Tensor& y = n.value;
                double total = 0.0;
                for (double v : x.values()) total += v;
                double dot = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
                Buffer& gx = buf(n.inputs[0]);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (g[i] - dot) / total;
                break;
            }
            case OpKind::kSum: {
                Buffer& gx = buf(n.inputs[0]);
                for (double& v : gx) v += g[0];
                break;
            }
            case OpKind::kReshape:
                accumulate(buf(n.inputs[0]), g);
                break;
        }
    }

    std::vector<Tensor> out;
    out.reserve(nodes_.size());
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const Shape& shape = nodes_[id].value.shape();
        if (grads[id].empty()) {
            out.push_back(Tensor::zeros(shape));
        } else {
            out.emplace_back(shape, std::move(grads[id]));
        }
    }
    return Gradients(std::move(out));
}

}  // namespace trips::autodiff
