#include "trips/backbone.hpp"

#include <cmath>
#include <string>

#include "trips/error.hpp"
#include "trips/kernels.hpp"
#include "trips/rng.hpp"

namespace trips {

std::optional<double> SelectionConfig::rate_at(std::size_t layer) const {
    for (std::size_t i = 0; i < locations.size(); ++i) {
        if (locations[i] == layer) return rates[i];
    }
    return std::nullopt;
}

void SelectionConfig::validate(std::size_t layers) const {
    if (locations.size() != rates.size()) {
        throw ConfigError("selection: " + std::to_string(locations.size()) + " locations but " +
                          std::to_string(rates.size()) + " rates");
    }
    for (std::size_t i = 0; i < locations.size(); ++i) {
        if (locations[i] < 1 || locations[i] > layers) {
            throw ConfigError("selection: location " + std::to_string(locations[i]) +
                              " outside [1, " + std::to_string(layers) + "]");
        }
        if (i > 0 && locations[i] <= locations[i - 1]) {
            throw ConfigError("selection: locations must be strictly increasing");
        }
        if (!(rates[i] > 0.0 && rates[i] <= 1.0)) {
            throw ConfigError("selection: keep rate " + std::to_string(rates[i]) +
                              " outside (0, 1]");
        }
    }
}

void ModelConfig::validate() const {
    if (layers == 0 || width == 0 || heads == 0 || patch_size == 0 || image_size == 0) {
        throw ConfigError("model dims must be positive");
    }
    if (width % heads != 0) throw ConfigError("width must be divisible by heads");
    if (image_size % patch_size != 0) {
        throw ConfigError("image_size " + std::to_string(image_size) +
                          " not divisible by patch_size " + std::to_string(patch_size));
    }
    selection.validate(layers);
    mode.validate();
}

VitTrips VitTrips::create(const ModelConfig& config) {
    config.validate();
    SeededRng rng(config.seed);
    VitTrips model;
    model.config = config;
    const std::size_t d = config.width;
    const std::size_t in = config.patch_dim();
    model.patch_proj = LinearLayer(seeded_init({d, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
                                   seeded_init({d}, 0.02, rng));
    model.pos_embed = seeded_init({1 + config.patch_count(), d}, 0.02, rng);
    model.cls_embed = seeded_init({d}, 0.02, rng);
    model.layers.reserve(config.layers);
    for (std::size_t l = 0; l < config.layers; ++l) {
        EncoderLayer layer;
        layer.attn = make_mhsa(d, config.heads, rng);
        layer.ffn = make_ffn(d, rng);
        model.layers.push_back(std::move(layer));
    }
    return model;
}

std::size_t SelectionEvent::kept_grid_cells() const {
    std::size_t n = 0;
    for (auto m : kept_mask) n += m;
    return n;
}

const SelectionEvent* ForwardTrace::event_at(std::size_t layer) const {
    for (const auto& e : events) {
        if (e.layer == layer) return &e;
    }
    return nullptr;
}

std::vector<std::size_t> placement(std::size_t layers, std::size_t t) {
    if (t < 1) throw ConfigError("placement: need at least one selection layer");
    if (layers < t + 1) {
        throw ConfigError("placement: " + std::to_string(t) + " selection layers do not fit in " +
                          std::to_string(layers) + " layers");
    }
    const std::size_t s = layers / (t + 1);
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i <= t; ++i) out.push_back(i * s + 1);
    return out;
}

Tensor extract_patches(const Tensor& image, std::size_t p) {
    if (image.rank() != 3 || image.shape()[0] != 3) {
        throw ShapeError("image must be [3 x H x W], got " + shape_to_string(image.shape()));
    }
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible into " + std::to_string(p) + "-pixel patches");
    }
    const std::size_t gr = h / p, gc = w / p, dim = 3 * p * p;
    std::vector<double> out(gr * gc * dim);
    for (std::size_t r = 0; r < gr; ++r) {
        for (std::size_t c = 0; c < gc; ++c) {
            double* dst = out.data() + (r * gc + c) * dim;
            for (std::size_t ch = 0; ch < 3; ++ch)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x)
                        *dst++ = image[(ch * h + r * p + y) * w + c * p + x];
        }
    }
    return Tensor({gr * gc, dim}, std::move(out));
}

TokenSequence embed_patches(const VitTrips& model, const Tensor& patches) {
    const ModelConfig& cfg = model.config;
    if (patches.rank() != 2 || patches.rows() != cfg.patch_count() ||
        patches.cols() != cfg.patch_dim()) {
        throw ShapeError("embed_patches: expected [" + std::to_string(cfg.patch_count()) + " x " +
                         std::to_string(cfg.patch_dim()) + "], got " +
                         shape_to_string(patches.shape()));
    }
    const std::size_t d = cfg.width;
    const Tensor projected = linear_apply(model.patch_proj, patches);
    const Tensor tokens =
        add(concat_rows({model.cls_embed.reshaped({1, d}), projected}), model.pos_embed);

    TokenSequence seq;
    seq.tokens = tokens;
    seq.grid_rows = cfg.grid_side();
    seq.grid_cols = cfg.grid_side();
    seq.origins.reserve(tokens.rows());
    seq.origins.push_back(TokenOrigin::cls());
    for (std::size_t r = 0; r < seq.grid_rows; ++r)
        for (std::size_t c = 0; c < seq.grid_cols; ++c) seq.origins.push_back(TokenOrigin::grid(r, c));
    return seq;
}

TokenSequence patch_embed(const Tensor& image, const VitTrips& model) {
    const std::size_t s = model.config.image_size;
    if (image.rank() != 3 || image.shape()[1] != s || image.shape()[2] != s) {
        throw ShapeError("patch_embed: model expects a 3x" + std::to_string(s) + "x" +
                         std::to_string(s) + " image, got " + shape_to_string(image.shape()));
    }
    return embed_patches(model, extract_patches(image, model.config.patch_size));
}

namespace {

ForwardResult run_layers(const VitTrips& model, const TokenSequence& input,
                         const std::optional<Tensor>& guidance, const GuidanceMode& mode,
                         const SelectionConfig& selection) {
    const ModelConfig& cfg = model.config;
    selection.validate(cfg.layers);
    mode.validate();
    input.validate();
    if (input.width() != cfg.width) throw ShapeError("forward: token width does not match model");
    if (mode.uses_text_guidance() && !selection.empty() && !guidance) {
        throw ConfigError("forward: text-[CLS] guidance mode requires a guidance vector");
    }

    ForwardResult result{input, {}};
    result.trace.grid_rows = input.grid_rows;
    result.trace.grid_cols = input.grid_cols;
    TokenSequence& seq = result.seq;
    for (std::size_t l = 1; l <= cfg.layers; ++l) {
        const EncoderLayer& layer = model.layers[l - 1];
        if (const auto rate = selection.rate_at(l)) {
            const std::size_t begin = seq.image_begin();
            SelectionEvent event;
            event.layer = l;
            event.n_before = seq.size();
            event.candidates.assign(seq.origins.begin() + static_cast<std::ptrdiff_t>(begin),
                                    seq.origins.end());
            SelectionLayerOutput out =
                selection_layer_forward(layer.attn, layer.ffn, seq, guidance, *rate, mode, cfg.options);
            seq = std::move(out.seq);
            event.n_after = seq.size();
            event.kept_mask.assign(seq.grid_rows * seq.grid_cols, 0);
            for (std::size_t i : out.outcome.kept_indices) {
                const TokenOrigin& o = event.candidates[i];
                if (o.kind == OriginKind::kGridPatch) event.kept_mask[o.row * seq.grid_cols + o.col] = 1;
            }
            event.outcome = std::move(out.outcome);
            result.trace.events.push_back(std::move(event));
        } else {
            seq.tokens = ffn_block(layer.ffn, sa_block(layer.attn, seq.tokens, cfg.options.norm).v_post,
                                   cfg.options.norm);
        }
        result.trace.lengths.push_back(seq.size());
    }
    return result;
}

}  // namespace

ForwardResult forward(const VitTrips& model, const TokenSequence& seq,
                      const std::optional<Tensor>& guidance) {
    return run_layers(model, seq, guidance, model.config.mode, model.config.selection);
}

ForwardResult single_stream_forward(const VitTrips& model, const Tensor& text_tokens,
                                    const TokenSequence& image_seq,
                                    const SelectionConfig& selection) {
    image_seq.validate();
    if (image_seq.image_begin() != 1) {
        throw ShapeError("single_stream_forward: image sequence must be [CLS, image...]");
    }
    if (text_tokens.rank() != 2 || text_tokens.cols() != image_seq.width()) {
        throw ShapeError("single_stream_forward: text tokens must be [m x d]");
    }
    TokenSequence stream;
    stream.grid_rows = image_seq.grid_rows;
    stream.grid_cols = image_seq.grid_cols;
    stream.tokens = concat_rows({slice_rows(image_seq.tokens, 0, 1), text_tokens,
                                 slice_rows(image_seq.tokens, 1, image_seq.size())});
    stream.origins.push_back(TokenOrigin::cls());
    stream.origins.insert(stream.origins.end(), text_tokens.rows(), TokenOrigin::text());
    stream.origins.insert(stream.origins.end(), image_seq.origins.begin() + 1, image_seq.origins.end());

    GuidanceMode mode;
    mode.source = GuidanceSource::kMultimodalCls;
    mode.disable_fusion = model.config.mode.disable_fusion;
    return run_layers(model, stream, std::nullopt, mode, selection);
}

Tensor fuse_toy(const Tensor& text_seq, const TokenSequence& visual_out,
                std::span<const CrossAttnLayer> fusion_layers, NormPlacement placement) {
    Tensor x = text_seq;
    for (const CrossAttnLayer& layer : fusion_layers) {
        x = cross_attn_forward(layer, x, visual_out.tokens, placement);
    }
    return x;
}

}  // namespace trips
