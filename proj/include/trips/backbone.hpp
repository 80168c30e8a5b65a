#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "trips/attention.hpp"
#include "trips/patch_select.hpp"
#include "trips/tensor.hpp"

namespace trips {

// Which layers select and how many tokens each keeps. Empty = plain ViT.
struct SelectionConfig {
    std::vector<std::size_t> locations;  // 1-based layer indices, strictly increasing
    std::vector<double> rates;           // keep rate per location, in (0, 1]

    bool empty() const { return locations.empty(); }
    std::optional<double> rate_at(std::size_t layer) const;
    // Throws ConfigError on any invariant violation against a layer count.
    void validate(std::size_t layers) const;
};

struct ModelConfig {
    std::size_t layers = 12;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t patch_size = 16;
    std::size_t image_size = 96;  // square images
    SelectionConfig selection;
    GuidanceMode mode;
    SelectionOptions options;
    std::uint64_t seed = 0;

    std::size_t grid_side() const { return image_size / patch_size; }
    std::size_t patch_count() const { return grid_side() * grid_side(); }
    std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
    void validate() const;
};

struct EncoderLayer {
    MhsaLayer attn;
    FfnBlock ffn;
};

// Visual encoder with patch-selection layers at configured depths.
struct VitTrips {
    ModelConfig config;
    LinearLayer patch_proj;  // [d x 3 p^2]
    Tensor pos_embed;        // [(1 + patches) x d]
    Tensor cls_embed;        // [d]
    std::vector<EncoderLayer> layers;

    // Seeded random weights for the given config.
    static VitTrips create(const ModelConfig& config);
};

struct SelectionEvent {
    std::size_t layer = 0;     // 1-based
    std::size_t n_before = 0;  // sequence length entering the layer
    std::size_t n_after = 0;   // sequence length leaving the layer
    SelectionOutcome outcome;
    std::vector<TokenOrigin> candidates;  // origin of each scored token
    std::vector<std::uint8_t> kept_mask;  // grid_rows * grid_cols, raster order

    std::size_t kept_grid_cells() const;
};

struct ForwardTrace {
    std::vector<std::size_t> lengths;  // sequence length after each layer
    std::vector<SelectionEvent> events;
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;

    const SelectionEvent* event_at(std::size_t layer) const;
};

struct ForwardResult {
    TokenSequence seq;
    ForwardTrace trace;
};

// Evenly spaced selection layers: s = floor(L / (t + 1)), layers i*s + 1 for i = 1..t.
std::vector<std::size_t> placement(std::size_t layers, std::size_t t);

// Non-overlapping patches of a [3 x H x W] image as rows of length 3 p^2,
// raster order over the grid; each row is channel-major then row-major in
// the patch. Throws ShapeError if H or W is not a multiple of p.
Tensor extract_patches(const Tensor& image, std::size_t patch_size);

// Projects patch rows, prepends [CLS] and adds positional embeddings.
TokenSequence embed_patches(const VitTrips& model, const Tensor& patches);
TokenSequence patch_embed(const Tensor& image, const VitTrips& model);

// Runs every layer; selection layers per model.config.selection.
ForwardResult forward(const VitTrips& model, const TokenSequence& seq,
                      const std::optional<Tensor>& guidance);

// One [CLS, text..., image...] stream through the same layers. Only image
// positions are scored (global [CLS] row) or pruned; the fused token is
// appended to the image tail.
ForwardResult single_stream_forward(const VitTrips& model, const Tensor& text_tokens,
                                    const TokenSequence& image_seq,
                                    const SelectionConfig& selection);

// Text rows attend to the reduced visual sequence through each layer in turn.
Tensor fuse_toy(const Tensor& text_seq, const TokenSequence& visual_out,
                std::span<const CrossAttnLayer> fusion_layers,
                NormPlacement placement = NormPlacement::kPost);

}  // namespace trips
