#include "trips/patch_select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "trips/error.hpp"

namespace trips {

void GuidanceMode::validate() const {
    if (disable_td_att && source != GuidanceSource::kTextCls) {
        throw ConfigError("disable_td_att only applies to text-[CLS] guidance");
    }
}

std::size_t TokenSequence::image_begin() const {
    std::size_t i = 0;
    while (i < origins.size() && !origins[i].is_image()) ++i;
    return i;
}

void TokenSequence::validate() const {
    if (tokens.rank() != 2 || tokens.rows() != origins.size()) {
        throw ShapeError("token sequence: provenance length does not match token rows");
    }
    if (origins.empty() || origins[0].kind != OriginKind::kCls) {
        throw ShapeError("token sequence: row 0 must be [CLS]");
    }
    const std::size_t begin = image_begin();
    for (std::size_t i = 1; i < origins.size(); ++i) {
        const TokenOrigin& o = origins[i];
        if (o.kind == OriginKind::kCls) throw ShapeError("token sequence: more than one [CLS]");
        if (i < begin && o.kind != OriginKind::kText) {
            throw ShapeError("token sequence: unexpected token before the image tail");
        }
        if (i >= begin && !o.is_image()) {
            throw ShapeError("token sequence: image tokens must form a contiguous tail");
        }
        if (o.kind == OriginKind::kGridPatch && (o.row >= grid_rows || o.col >= grid_cols)) {
            throw ShapeError("token sequence: grid coordinate outside the patch grid");
        }
    }
}

double SelectionOutcome::tie_margin() const {
    if (k >= n) return std::numeric_limits<double>::infinity();
    std::vector<double> sorted(scores.values());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    return sorted[k - 1] - sorted[k];
}

std::size_t keep_count(std::size_t n, double r, KeepRounding rounding) {
    if (!(r > 0.0 && r <= 1.0)) {
        throw ConfigError("keep rate " + std::to_string(r) + " outside (0, 1]");
    }
    const double exact = static_cast<double>(n) * r;
    const double k = rounding == KeepRounding::kFloor ? std::floor(exact + 1e-9) : std::round(exact);
    return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

namespace {

Tensor text_query(const Tensor& t_cls, const LinearLayer& wq_shared) {
    const std::size_t d = wq_shared.in_features();
    if (t_cls.size() != d) {
        throw ShapeError("td_att: guidance length " + std::to_string(t_cls.size()) +
                         " != model width " + std::to_string(d));
    }
    return linear_apply(wq_shared, t_cls.reshaped({1, d}));
}

Tensor scores_against(const Tensor& q_text, const Tensor& candidates) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(q_text.cols()));
    const Tensor logits = scale(matmul_nt(q_text, candidates), inv);
    const Tensor p = softmax_rows(logits);
    return p.reshaped({p.size()});
}

Tensor patch_rows(const Tensor& v_post) {
    if (v_post.rank() != 2 || v_post.rows() < 2) {
        throw ShapeError("td_att: need a [CLS] row and at least one patch row");
    }
    return slice_rows(v_post, 1, v_post.rows());
}

// Head-averaged [CLS] row restricted to the given key columns, renormalized.
Tensor cls_row_scores(const AttnMaps& maps, const std::vector<std::size_t>& columns) {
    const std::size_t h = maps.heads();
    const double inv_heads = 1.0 / static_cast<double>(h);
    std::vector<double> out(columns.size(), 0.0);
    for (std::size_t j = 0; j < columns.size(); ++j) {
        if (columns[j] >= maps.keys()) throw ShapeError("cls scores: column out of range");
        double s = 0.0;
        for (std::size_t head = 0; head < h; ++head) s += maps.at(head, 0, columns[j]);
        out[j] = s * inv_heads;
    }
    double total = 0.0;
    for (double v : out) total += v;
    if (total == 0.0) throw DegenerateGuidance("[CLS] attention mass on candidate tokens is zero");
    for (double& v : out) v /= total;
    return Tensor::vector(std::move(out));
}

}  // namespace

Tensor td_att_scores(const Tensor& t_cls, const Tensor& v_post, const LinearLayer& wq_shared) {
    return scores_against(text_query(t_cls, wq_shared), patch_rows(v_post));
}

Tensor td_att_scores_key_projected(const Tensor& t_cls, const Tensor& v_post,
                                   const LinearLayer& wq_shared, const LinearLayer& wk) {
    return scores_against(text_query(t_cls, wq_shared), linear_apply(wk, patch_rows(v_post)));
}

Tensor image_cls_scores(const AttnMaps& maps) {
    std::vector<std::size_t> columns(maps.keys() - 1);
    for (std::size_t j = 0; j < columns.size(); ++j) columns[j] = j + 1;
    if (columns.empty()) throw ShapeError("image_cls_scores: no patch columns");
    return cls_row_scores(maps, columns);
}

Tensor multimodal_cls_scores(const AttnMaps& maps, const std::vector<std::size_t>& image_positions) {
    if (image_positions.empty()) throw ShapeError("multimodal_cls_scores: no image positions");
    return cls_row_scores(maps, image_positions);
}

SelectResult select_and_fuse(const TokenSequence& seq, const Tensor& scores, double r, bool fuse,
                             KeepRounding rounding) {
    seq.validate();
    const std::size_t begin = seq.image_begin();
    const std::size_t n = seq.size() - begin;
    if (n < 2) throw ConfigError("select_and_fuse: need at least 2 candidate tokens, got " +
                                 std::to_string(n));
    if (scores.size() != n) {
        throw ShapeError("select_and_fuse: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(n) + " candidates");
    }
    const std::size_t k = keep_count(n, r, rounding);
    std::vector<std::size_t> kept = top_k_indices(scores, k);

    const std::size_t d = seq.width();
    std::vector<double> fused(d, 0.0);
    double fused_mass = 0.0;
    std::vector<bool> is_kept(n, false);
    for (std::size_t i : kept) is_kept[i] = true;
    for (std::size_t i = 0; i < n; ++i) {
        if (is_kept[i]) continue;
        const double w = scores[i];
        fused_mass += w;
        const auto row = seq.tokens.row(begin + i);
        for (std::size_t c = 0; c < d; ++c) fused[c] += w * row[c];
    }

    std::vector<std::size_t> rows(begin);
    for (std::size_t i = 0; i < begin; ++i) rows[i] = i;
    for (std::size_t i : kept) rows.push_back(begin + i);

    TokenSequence out;
    out.grid_rows = seq.grid_rows;
    out.grid_cols = seq.grid_cols;
    std::vector<Tensor> parts{gather_rows(seq.tokens, rows)};
    for (std::size_t row : rows) out.origins.push_back(seq.origins[row]);
    if (fuse) {
        parts.push_back(Tensor({1, d}, std::move(fused)));
        out.origins.push_back(TokenOrigin::fused());
    }
    out.tokens = concat_rows(parts);

    SelectionOutcome outcome{scores, std::move(kept), fused_mass, k, n};
    return {std::move(out), std::move(outcome)};
}

SelectionLayerOutput selection_layer_forward(const MhsaLayer& mhsa, const FfnBlock& ffn,
                                             const TokenSequence& seq,
                                             const std::optional<Tensor>& guidance, double r,
                                             const GuidanceMode& mode,
                                             const SelectionOptions& options) {
    mode.validate();
    seq.validate();
    SaBlockOutput sa = sa_block(mhsa, seq.tokens, options.norm);

    TokenSequence post = seq;
    post.tokens = sa.v_post;
    const std::size_t begin = seq.image_begin();

    Tensor scores;
    if (mode.uses_text_guidance()) {
        if (!guidance) throw ConfigError("text-[CLS] guidance requires a guidance vector");
        const Tensor q_text = text_query(*guidance, mhsa.wq);
        Tensor candidates = slice_rows(sa.v_post, begin, sa.v_post.rows());
        if (options.score_target == ScoreTarget::kKeyProjected) {
            candidates = linear_apply(mhsa.wk, candidates);
        }
        scores = scores_against(q_text, candidates);
    } else if (begin == 1 && mode.source != GuidanceSource::kMultimodalCls) {
        scores = image_cls_scores(sa.maps);
    } else {
        std::vector<std::size_t> positions;
        for (std::size_t i = begin; i < seq.size(); ++i) positions.push_back(i);
        scores = multimodal_cls_scores(sa.maps, positions);
    }

    SelectResult sel = select_and_fuse(post, scores, r, !mode.disable_fusion, options.rounding);
    sel.seq.tokens = ffn_block(ffn, sel.seq.tokens, options.norm);
    return {std::move(sel.seq), std::move(sel.outcome), std::move(sa.maps)};
}

}  // namespace trips
