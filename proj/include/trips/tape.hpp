#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "trips/tensor.hpp"

namespace trips::autodiff {

// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id = 0;
};

enum class OpKind {
    kLeaf,
    kMatMul,
    kMatMulNT,
    kLinear,
    kAdd,
    kAddRowVector,
    kScale,
    kSoftmaxRows,
    kLayerNorm,
    kGelu,
    kSliceRows,
    kSliceCols,
    kGatherRows,
    kConcatRows,
    kConcatCols,
    kWeightedSum,
    kNormalize,
    kSum,
    kReshape,
};

class Gradients;

// Records primitive kernel ops together with their outputs; backward() runs
// the reverse sweep. Forward values are computed by the same kernels the
// model uses, so a recorded graph reproduces the model bitwise.
class Tape {
public:
    Var leaf(Tensor value, std::string name = {});

    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);           // a b^T
    Var linear(Var x, Var weight, Var bias);  // x W^T + b
    Var add(Var a, Var b);
    Var add_row_vector(Var x, Var v);
    Var scale(Var a, double factor);
    Var softmax_rows(Var x);
    Var layer_norm(Var x, Var gamma, Var beta, double eps);
    Var gelu(Var x);
    Var slice_rows(Var x, std::size_t begin, std::size_t end);
    Var slice_cols(Var x, std::size_t begin, std::size_t end);
    // Rows are fixed at record time; gradients flow only to the selected rows.
    Var gather_rows(Var x, std::vector<std::size_t> indices);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    // [1 x d] = sum over i in indices (ascending) of weights[i] * x[offset + i].
    Var weighted_sum(Var x, Var weights, std::vector<std::size_t> indices, std::size_t offset);
    // x / sum(x).
    Var normalize(Var x);
    // [1 x 1] sum of all elements.
    Var sum(Var x);
    Var reshape(Var x, Shape shape);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const std::string& name(Var v) const { return nodes_.at(v.id).name; }
    OpKind kind(Var v) const { return nodes_.at(v.id).op; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse-mode accumulation from `output`, seeded with d(loss)/d(output).
    Gradients backward(Var output, const Tensor& seed) const;

    // Re-evaluates every non-leaf node from its recorded inputs and returns
    // the recomputed values, indexed like the tape.
    std::vector<Tensor> replay() const;

private:
    struct Node {
        OpKind op = OpKind::kLeaf;
        std::vector<std::size_t> inputs;
        Tensor value;
        std::string name;
        double scalar = 0.0;
        std::size_t begin = 0;
        std::size_t end = 0;
        std::vector<std::size_t> indices;
        Shape shape;
        Tensor saved;               // layer norm: normalized input
        std::vector<double> saved_inv;  // layer norm: per-row 1/sigma
    };

    Var push(Node node);
    Tensor evaluate(const Node& node, const std::vector<Tensor>& values) const;

    std::vector<Node> nodes_;
};

class Gradients {
public:
    Gradients() = default;
    explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
    const Tensor& of(Var v) const { return grads_.at(v.id); }

private:
    std::vector<Tensor> grads_;
};

}  // namespace trips::autodiff
