#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "trips/attention.hpp"
#include "trips/tensor.hpp"

namespace trips {

// Which [CLS] source drives patch scoring.
enum class GuidanceSource {
    kTextCls,        // text [CLS] embedding through the layer's query projection
    kImageCls,       // image [CLS] attention row (no text, e.g. captioning)
    kMultimodalCls,  // global [CLS] of a single text+image stream
};

struct GuidanceMode {
    GuidanceSource source = GuidanceSource::kTextCls;
    bool disable_fusion = false;  // drop inattentive tokens instead of fusing them
    bool disable_td_att = false;  // text mode only: score by the image [CLS] instead

    // Throws ConfigError when disable_td_att is combined with a non-text source.
    void validate() const;
    bool uses_text_guidance() const {
        return source == GuidanceSource::kTextCls && !disable_td_att;
    }
};

enum class KeepRounding { kFloor, kNearest };

// What the projected text query is dotted against.
enum class ScoreTarget {
    kPostSaTokens,  // raw post-SA tokens (default)
    kKeyProjected,  // the layer's key projection of those tokens
};

struct SelectionOptions {
    KeepRounding rounding = KeepRounding::kFloor;
    ScoreTarget score_target = ScoreTarget::kPostSaTokens;
    NormPlacement norm = NormPlacement::kPost;
};

enum class OriginKind { kCls, kGridPatch, kFused, kText };

struct TokenOrigin {
    OriginKind kind = OriginKind::kCls;
    std::size_t row = 0;  // grid coordinates, meaningful for kGridPatch only
    std::size_t col = 0;

    static TokenOrigin cls() { return {OriginKind::kCls, 0, 0}; }
    static TokenOrigin grid(std::size_t r, std::size_t c) { return {OriginKind::kGridPatch, r, c}; }
    static TokenOrigin fused() { return {OriginKind::kFused, 0, 0}; }
    static TokenOrigin text() { return {OriginKind::kText, 0, 0}; }

    bool is_image() const { return kind == OriginKind::kGridPatch || kind == OriginKind::kFused; }
    friend bool operator==(const TokenOrigin&, const TokenOrigin&) = default;
};

// Token matrix with row 0 = [CLS], optional text rows, then image rows
// (grid patches and fused tokens) forming a contiguous tail.
struct TokenSequence {
    Tensor tokens;
    std::vector<TokenOrigin> origins;
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;

    std::size_t size() const { return origins.size(); }
    std::size_t width() const { return tokens.cols(); }
    // First row of the image tail; equals size() when there are no image rows.
    std::size_t image_begin() const;
    std::size_t image_count() const { return size() - image_begin(); }
    // Throws ShapeError on any layout violation.
    void validate() const;
};

struct SelectionOutcome {
    Tensor scores;                          // distribution over the n candidates
    std::vector<std::size_t> kept_indices;  // ascending, relative to the candidates
    double fused_mass = 0.0;                // sum of scores outside kept_indices
    std::size_t k = 0;
    std::size_t n = 0;

    // Gap between the k-th and (k+1)-th largest score; +inf when k == n.
    double tie_margin() const;
};

// k for n candidates at keep rate r. kFloor uses floor(n r) with a 1e-9
// allowance so decimal rates such as 0.29 behave as written; the result is
// clamped to [1, n].
std::size_t keep_count(std::size_t n, double r, KeepRounding rounding = KeepRounding::kFloor);

// softmax(wq(t_cls) . v_post[1:]^T / sqrt(d)), d the full model width.
Tensor td_att_scores(const Tensor& t_cls, const Tensor& v_post, const LinearLayer& wq_shared);
// Same, against wk(v_post[1:]).
Tensor td_att_scores_key_projected(const Tensor& t_cls, const Tensor& v_post,
                                   const LinearLayer& wq_shared, const LinearLayer& wk);

// [CLS] query row of every head, [CLS] column dropped, averaged, renormalized.
Tensor image_cls_scores(const AttnMaps& maps);
// [CLS] query row restricted to image_positions (absolute key columns),
// head-averaged and renormalized. Throws DegenerateGuidance on zero mass.
Tensor multimodal_cls_scores(const AttnMaps& maps, const std::vector<std::size_t>& image_positions);

struct SelectResult {
    TokenSequence seq;
    SelectionOutcome outcome;
};

// Keeps the top-k image tokens (k = keep_count(n, r)) in original order and,
// when fuse is set, appends v_f = sum over dropped i of scores[i] * token_i
// with the raw, unnormalized weights. Rows before the image tail pass through.
SelectResult select_and_fuse(const TokenSequence& seq, const Tensor& scores, double r,
                             bool fuse = true, KeepRounding rounding = KeepRounding::kFloor);

struct SelectionLayerOutput {
    TokenSequence seq;
    SelectionOutcome outcome;
    AttnMaps maps;
};

// sa_block -> score (per mode) -> select_and_fuse -> ffn_block.
// guidance is the text [CLS] embedding and is required when mode.uses_text_guidance().
SelectionLayerOutput selection_layer_forward(const MhsaLayer& mhsa, const FfnBlock& ffn,
                                             const TokenSequence& seq,
                                             const std::optional<Tensor>& guidance, double r,
                                             const GuidanceMode& mode,
                                             const SelectionOptions& options = {});

}  // namespace trips
