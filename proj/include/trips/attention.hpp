#pragma once

#include <cstddef>

#include "trips/kernels.hpp"
#include "trips/rng.hpp"
#include "trips/tensor.hpp"

namespace trips {

// FFN hidden width is kFfnExpansion * d (ViT-B convention).
inline constexpr std::size_t kFfnExpansion = 4;

// Where layer normalization sits relative to the residual.
//   kPost: LN(f(x) + x)   (default; the selection layer is written in this form)
//   kPre:  x + f(LN(x))   (standard ViT-B)
enum class NormPlacement { kPost, kPre };

// Per-head softmax attention probabilities, shape [heads x queries x keys].
struct AttnMaps {
    Tensor probs;

    std::size_t heads() const { return probs.shape()[0]; }
    std::size_t queries() const { return probs.shape()[1]; }
    std::size_t keys() const { return probs.shape()[2]; }
    double at(std::size_t h, std::size_t q, std::size_t k) const;
    // One head's [queries x keys] matrix.
    Tensor head(std::size_t h) const;
};

struct MhsaLayer {
    LinearLayer wq, wk, wv, wo;  // each d -> d; wq doubles as the text-query projection
    std::size_t heads = 1;
    LayerNormParams norm;

    std::size_t width() const { return wq.out_features(); }
    std::size_t head_dim() const { return width() / heads; }
    // Throws ShapeError if projections are not d x d or d % heads != 0.
    void validate() const;
};

struct FfnBlock {
    LinearLayer w1;  // [4d x d]
    LinearLayer w2;  // [d x 4d]
    LayerNormParams norm;
};

// Text-to-visual cross attention followed by an FFN, as in a fusion encoder layer.
struct CrossAttnLayer {
    LinearLayer wq, wk, wv, wo;
    std::size_t heads = 1;
    LayerNormParams norm;
    FfnBlock ffn;

    std::size_t width() const { return wq.out_features(); }
    void validate() const;
};

// Seeded constructors. Projection weights ~ N(0, 1/fan_in); biases and the
// layer-norm affine terms get small perturbations around (0, 1) so that
// downstream sums are not structurally constant.
MhsaLayer make_mhsa(std::size_t width, std::size_t heads, SeededRng& rng);
FfnBlock make_ffn(std::size_t width, SeededRng& rng);
CrossAttnLayer make_cross_attn(std::size_t width, std::size_t heads, SeededRng& rng);

struct AttentionOutput {
    Tensor context;  // [nq x d], heads concatenated
    AttnMaps maps;
};

// Scaled dot-product attention over already-projected q [nq x d], k and v
// [nk x d]; head h uses columns [h*d/heads, (h+1)*d/heads) and scale
// 1/sqrt(d/heads).
AttentionOutput multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     std::size_t heads);

struct MhsaOutput {
    Tensor y;  // wo(concat_h softmax(q_h k_h^T / sqrt(head_dim)) v_h), no residual
    AttnMaps maps;
};

MhsaOutput mhsa_forward(const MhsaLayer& layer, const Tensor& x);

struct SaBlockOutput {
    Tensor v_post;
    AttnMaps maps;
};

SaBlockOutput sa_block(const MhsaLayer& layer, const Tensor& x,
                       NormPlacement placement = NormPlacement::kPost);

Tensor ffn_block(const FfnBlock& ffn, const Tensor& x,
                 NormPlacement placement = NormPlacement::kPost);

// Queries from xq, keys and values from xkv; residual + LN around the
// attention, then ffn_block. Output has xq's row count.
Tensor cross_attn_forward(const CrossAttnLayer& layer, const Tensor& xq, const Tensor& xkv,
                          NormPlacement placement = NormPlacement::kPost);

}  // namespace trips
