#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trips/backbone.hpp"
#include "trips/tape.hpp"
#include "trips/tensor.hpp"

namespace trips {

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
// Throws NumericError if f returns a non-finite value.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

// Scale-normalized error: max_i |a_i - n_i| / max(max|a|, max|n|), and 0
// when both gradients are identically zero.
double relative_error(const Tensor& analytic, const Tensor& numeric);

// Handles into a recorded visual-encoder graph.
struct PipelineGraph {
    autodiff::Var patches;
    autodiff::Var guidance;
    autodiff::Var output;  // final token matrix
    autodiff::Var loss;    // [1 x 1] sum of the final tokens
    struct SelectionParams {
        std::size_t layer = 0;
        autodiff::Var wq_weight;
        autodiff::Var wq_bias;
    };
    std::vector<SelectionParams> selection;
    std::vector<std::vector<std::size_t>> kept;  // kept indices per selection event
};

// Records `model`'s forward pass (embed_patches then every layer) on `tape`.
// Top-k index sets are decided from the recorded scores exactly as the model
// does, then frozen into gather/weighted-sum ops.
PipelineGraph record_pipeline(autodiff::Tape& tape, const VitTrips& model, const Tensor& patches,
                              const Tensor& guidance);

// Differentiable sa_block / ffn_block on a fresh tape; used for per-block checks.
autodiff::Var record_sa_block(autodiff::Tape& tape, const MhsaLayer& layer, autodiff::Var x,
                              NormPlacement placement = NormPlacement::kPost);
autodiff::Var record_ffn_block(autodiff::Tape& tape, const FfnBlock& ffn, autodiff::Var x,
                               NormPlacement placement = NormPlacement::kPost);

struct ParamError {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t count = 0;
};

struct GradReport {
    std::vector<ParamError> params;
    double eps = 0.0;
    double tie_margin = 0.0;  // smallest k-th vs (k+1)-th gap over selection events
    double max_rel_error = 0.0;
    bool valid = false;
    std::string invalid_reason;

    bool passed(double tolerance) const { return valid && max_rel_error <= tolerance; }
};

// Sum of the final tokens of forward(model, embed_patches(model, patches), guidance).
double pipeline_loss(const VitTrips& model, const Tensor& patches, const Tensor& guidance);

// Analytic (tape) vs numeric (forward pass) gradients of pipeline_loss with
// respect to the input patches, the guidance vector and each selection
// layer's shared query projection. Invalid when the tie margin is not above
// 10 eps or a finite-difference step changes any kept set.
GradReport check_selection_pipeline(const VitTrips& model, const Tensor& patches,
                                    const Tensor& guidance, double eps = 1e-5);

// A seeded small problem: L = 4, d = 16, h = 2, 8x8 images in 2x2 patches
// (16 patches, 17 tokens), uniform [0, 1) pixels and a standard normal
// guidance vector.
struct GradInstance {
    VitTrips model;
    Tensor patches;
    Tensor guidance;
};

SelectionConfig default_grad_selection();  // layers 2 and 4 at 0.7
GradInstance small_grad_instance(const GuidanceMode& mode, std::uint64_t seed,
                                 const SelectionConfig& selection = default_grad_selection());

}  // namespace trips
