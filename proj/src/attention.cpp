#include "trips/attention.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "trips/error.hpp"

namespace trips {

namespace {

void require_square(const LinearLayer& l, std::size_t d, const char* name) {
    if (l.weight.rows() != d || l.weight.cols() != d) {
        throw ShapeError(std::string("attention projection ") + name + " must be " +
                         std::to_string(d) + "x" + std::to_string(d));
    }
}

void validate_projections(const LinearLayer& wq, const LinearLayer& wk, const LinearLayer& wv,
                          const LinearLayer& wo, std::size_t heads) {
    const std::size_t d = wq.out_features();
    if (heads == 0 || d % heads != 0) {
        throw ShapeError("width " + std::to_string(d) + " not divisible by heads " +
                         std::to_string(heads));
    }
    require_square(wq, d, "wq");
    require_square(wk, d, "wk");
    require_square(wv, d, "wv");
    require_square(wo, d, "wo");
}

LinearLayer random_linear(std::size_t out, std::size_t in, SeededRng& rng) {
    Tensor w = seeded_init({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    Tensor b = seeded_init({out}, 0.02, rng);
    return LinearLayer(std::move(w), std::move(b));
}

LayerNormParams random_norm(std::size_t d, SeededRng& rng) {
    std::vector<double> gamma(d), beta(d);
    for (double& g : gamma) g = 1.0 + 0.1 * rng.normal();
    for (double& b : beta) b = 0.1 * rng.normal();
    return {Tensor::vector(std::move(gamma)), Tensor::vector(std::move(beta)), kLayerNormEps};
}

}  // namespace

double AttnMaps::at(std::size_t h, std::size_t q, std::size_t k) const {
    return probs[(h * queries() + q) * keys() + k];
}

Tensor AttnMaps::head(std::size_t h) const {
    const std::size_t nq = queries(), nk = keys();
    const auto first = probs.values().begin() + static_cast<std::ptrdiff_t>(h * nq * nk);
    return Tensor({nq, nk}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(nq * nk)));
}

AttentionOutput multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     std::size_t heads) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.cols() != q.cols() ||
        v.cols() != q.cols() || v.rows() != k.rows()) {
        throw ShapeError("attention: q, k, v must be [* x d] with matching key and value rows");
    }
    if (heads == 0 || q.cols() % heads != 0) throw ShapeError("attention: width not divisible by heads");
    const std::size_t d = q.cols();
    const std::size_t hd = d / heads;
    const std::size_t nq = q.rows(), nk = k.rows();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<Tensor> contexts;
    contexts.reserve(heads);
    std::vector<double> probs;
    probs.reserve(heads * nq * nk);
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
        const Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
        const Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
        const Tensor p = softmax_rows(scale(matmul_nt(qh, kh), inv_scale));
        probs.insert(probs.end(), p.values().begin(), p.values().end());
        contexts.push_back(matmul(p, vh));
    }
    return {concat_cols(contexts), AttnMaps{Tensor({heads, nq, nk}, std::move(probs))}};
}

void MhsaLayer::validate() const {
    validate_projections(wq, wk, wv, wo, heads);
}

void CrossAttnLayer::validate() const {
    validate_projections(wq, wk, wv, wo, heads);
}

MhsaLayer make_mhsa(std::size_t width, std::size_t heads, SeededRng& rng) {
    MhsaLayer layer;
    layer.wq = random_linear(width, width, rng);
    layer.wk = random_linear(width, width, rng);
    layer.wv = random_linear(width, width, rng);
    layer.wo = random_linear(width, width, rng);
    layer.heads = heads;
    layer.norm = random_norm(width, rng);
    layer.validate();
    return layer;
}

FfnBlock make_ffn(std::size_t width, SeededRng& rng) {
    FfnBlock ffn;
    ffn.w1 = random_linear(kFfnExpansion * width, width, rng);
    ffn.w2 = random_linear(width, kFfnExpansion * width, rng);
    ffn.norm = random_norm(width, rng);
    return ffn;
}

CrossAttnLayer make_cross_attn(std::size_t width, std::size_t heads, SeededRng& rng) {
    CrossAttnLayer layer;
    layer.wq = random_linear(width, width, rng);
    layer.wk = random_linear(width, width, rng);
    layer.wv = random_linear(width, width, rng);
    layer.wo = random_linear(width, width, rng);
    layer.heads = heads;
    layer.norm = random_norm(width, rng);
    layer.ffn = make_ffn(width, rng);
    layer.validate();
    return layer;
}

MhsaOutput mhsa_forward(const MhsaLayer& layer, const Tensor& x) {
    layer.validate();
    if (x.rank() != 2 || x.cols() != layer.width()) {
        throw ShapeError("mhsa_forward: input " + shape_to_string(x.shape()) +
                         " does not match width " + std::to_string(layer.width()));
    }
    const Tensor q = linear_apply(layer.wq, x);
    const Tensor k = linear_apply(layer.wk, x);
    const Tensor v = linear_apply(layer.wv, x);
    AttentionOutput a = multi_head_attention(q, k, v, layer.heads);
    return {linear_apply(layer.wo, a.context), std::move(a.maps)};
}

SaBlockOutput sa_block(const MhsaLayer& layer, const Tensor& x, NormPlacement placement) {
    if (placement == NormPlacement::kPre) {
        MhsaOutput sa = mhsa_forward(layer, layer_norm(x, layer.norm));
        return {add(sa.y, x), std::move(sa.maps)};
    }
    MhsaOutput sa = mhsa_forward(layer, x);
    return {layer_norm(add(sa.y, x), layer.norm), std::move(sa.maps)};
}

Tensor ffn_block(const FfnBlock& ffn, const Tensor& x, NormPlacement placement) {
    const auto mlp = [&](const Tensor& in) {
        return linear_apply(ffn.w2, gelu(linear_apply(ffn.w1, in)));
    };
    if (placement == NormPlacement::kPre) return add(mlp(layer_norm(x, ffn.norm)), x);
    return layer_norm(add(mlp(x), x), ffn.norm);
}

Tensor cross_attn_forward(const CrossAttnLayer& layer, const Tensor& xq, const Tensor& xkv,
                          NormPlacement placement) {
    layer.validate();
    const std::size_t d = layer.width();
    if (xq.rank() != 2 || xkv.rank() != 2 || xq.cols() != d || xkv.cols() != d) {
        throw ShapeError("cross_attn_forward: inputs must both be [* x " + std::to_string(d) + "]");
    }
    const auto cross = [&](const Tensor& queries) {
        const Tensor q = linear_apply(layer.wq, queries);
        const Tensor k = linear_apply(layer.wk, xkv);
        const Tensor v = linear_apply(layer.wv, xkv);
        return linear_apply(layer.wo, multi_head_attention(q, k, v, layer.heads).context);
    };
    const Tensor attended = placement == NormPlacement::kPre
                                ? add(cross(layer_norm(xq, layer.norm)), xq)
                                : layer_norm(add(cross(xq), xq), layer.norm);
    return ffn_block(layer.ffn, attended, placement);
}

}  // namespace trips
