#include "trips/cost_model.hpp"

#include <cmath>

#include "trips/error.hpp"

namespace trips {

namespace {

double apply_convention(double macs, FlopsConvention convention) {
    return convention == FlopsConvention::kTwoPerMac ? 2.0 * macs : macs;
}

double sz(std::size_t v) { return static_cast<double>(v); }

double attention_macs(std::size_t n, std::size_t d) {
    return 4.0 * sz(n) * sz(d) * sz(d) + 2.0 * sz(n) * sz(n) * sz(d);
}

double ffn_macs(std::size_t n, std::size_t d, std::size_t mult) {
    return 2.0 * sz(mult) * sz(n) * sz(d) * sz(d);
}

}  // namespace

CostConfig CostConfig::vit_b16(std::size_t image_size, SelectionConfig selection) {
    if (image_size == 0 || image_size % 16 != 0) {
        throw ConfigError("image size " + std::to_string(image_size) + " is not a multiple of 16");
    }
    CostConfig c;
    const std::size_t side = image_size / 16;
    c.image_tokens = side * side + 1;
    c.selection = std::move(selection);
    return c;
}

void CostConfig::validate() const {
    if (vision.layers == 0 || vision.width == 0 || vision.heads == 0 || vision.ffn_mult == 0 ||
        text.width == 0 || text.seq_len == 0 || fusion.width == 0 || fusion.text_len == 0) {
        throw ConfigError("cost config: dimensions must be positive");
    }
    if (image_tokens < 2) throw ConfigError("cost config: need [CLS] plus at least one patch");
    selection.validate(vision.layers);
}

std::vector<std::size_t> token_schedule(std::size_t initial_tokens, const SelectionConfig& selection,
                                        std::size_t layers, KeepRounding rounding,
                                        bool fused_token) {
    selection.validate(layers);
    if (initial_tokens < 2) throw ConfigError("token_schedule: need [CLS] plus patches");
    std::vector<std::size_t> out;
    out.reserve(layers);
    std::size_t len = initial_tokens;
    for (std::size_t l = 1; l <= layers; ++l) {
        if (const auto r = selection.rate_at(l)) {
            const std::size_t n = len - 1;
            if (n < 2) {
                throw ConfigError("token_schedule: layer " + std::to_string(l) +
                                  " has fewer than 2 candidates");
            }
            len = keep_count(n, *r, rounding) + (fused_token ? 2 : 1);
        }
        out.push_back(len);
    }
    return out;
}

int overall_keep_rate(const std::vector<double>& rates) {
    double p = 1.0;
    for (double r : rates) p *= r;
    return static_cast<int>(std::lround(100.0 * p));
}

double encoder_layer_flops(std::size_t n, std::size_t d, std::size_t ffn_mult,
                           FlopsConvention convention) {
    return apply_convention(attention_macs(n, d) + ffn_macs(n, d, ffn_mult), convention);
}

double cross_layer_flops(std::size_t nq, std::size_t nk, std::size_t d, std::size_t ffn_mult,
                         FlopsConvention convention) {
    if (nq == 0 || nk == 0) throw ConfigError("cross_layer_flops: empty query or key sequence");
    const double self = attention_macs(nq, d);
    const double cross = 2.0 * sz(nq) * sz(d) * sz(d) + 2.0 * sz(nk) * sz(d) * sz(d) +
                         2.0 * sz(nq) * sz(nk) * sz(d);
    return apply_convention(self + cross + ffn_macs(nq, d, ffn_mult), convention);
}

CostReport model_flops(const CostConfig& config) {
    config.validate();
    const VisionCostDims& v = config.vision;
    CostReport report;
    report.convention = config.convention;
    report.lengths = token_schedule(config.image_tokens, config.selection, v.layers, config.rounding,
                                    config.fused_token);

    std::size_t prev = config.image_tokens;
    for (std::size_t l = 1; l <= v.layers; ++l) {
        const std::size_t len = report.lengths[l - 1];
        if (config.selection.rate_at(l) && config.selection_costing == SelectionCosting::kSplit) {
            report.vision += apply_convention(attention_macs(prev, v.width) +
                                                  ffn_macs(len, v.width, v.ffn_mult),
                                              config.convention);
        } else {
            report.vision += encoder_layer_flops(len, v.width, v.ffn_mult, config.convention);
        }
        prev = len;
    }
    const TextCostDims& t = config.text;
    report.text = sz(t.layers) * encoder_layer_flops(t.seq_len, t.width, v.ffn_mult, config.convention);
    const FusionCostDims& f = config.fusion;
    report.fusion = sz(f.layers) * cross_layer_flops(f.text_len, report.lengths.back(), f.width,
                                                     v.ffn_mult, config.convention);
    report.total = report.vision + report.text + report.fusion;
    report.overall_keep_rate = overall_keep_rate(config.selection.rates);
    return report;
}

double speedup_estimate(const CostReport& a, const CostReport& b) {
    if (!(b.total > 0.0)) throw ConfigError("speedup_estimate: reference total must be positive");
    return a.total / b.total;
}

std::vector<SweepEntry> sweep(const std::vector<SweepRow>& rows, const SweepRow& baseline,
                              const CostConfig& base) {
    const auto cost_of = [&](const SweepRow& row) {
        CostConfig c = CostConfig::vit_b16(row.image_size, row.selection);
        c.vision = base.vision;
        c.text = base.text;
        c.fusion = base.fusion;
        c.convention = base.convention;
        c.selection_costing = base.selection_costing;
        c.rounding = base.rounding;
        c.fused_token = base.fused_token;
        return model_flops(c);
    };
    const CostReport reference = cost_of(baseline);
    std::vector<SweepEntry> out;
    out.reserve(rows.size());
    for (const SweepRow& row : rows) {
        CostReport r = cost_of(row);
        r.baseline_name = baseline.label;
        r.baseline_ratio = speedup_estimate(r, reference);
        out.push_back({row, std::move(r)});
    }
    return out;
}

namespace {

SweepRow row_of(std::vector<std::size_t> locations, double rate, std::size_t image_size) {
    SweepRow row;
    row.selection.locations = std::move(locations);
    row.selection.rates.assign(row.selection.locations.size(), rate);
    row.image_size = image_size;
    row.label = "[";
    for (std::size_t i = 0; i < row.selection.locations.size(); ++i) {
        if (i) row.label += ",";
        row.label += std::to_string(row.selection.locations[i]);
    }
    row.label += "]@" + std::to_string(static_cast<int>(std::lround(rate * 100))) + "%/" +
                 std::to_string(image_size);
    return row;
}

}  // namespace

std::vector<SweepRow> location_keep_rate_rows() {
    return {
        row_of({2}, 0.5, 384),        row_of({10}, 0.5, 384),       row_of({2, 4}, 0.5, 384),
        row_of({4, 8}, 0.5, 384),     row_of({5, 10}, 0.5, 384),    row_of({6, 12}, 0.5, 384),
        row_of({2, 4}, 0.7, 384),     row_of({4, 8}, 0.7, 384),     row_of({5, 10}, 0.7, 384),
        row_of({6, 12}, 0.7, 384),    row_of({2, 6, 10}, 0.7, 384), row_of({3, 6, 9}, 0.7, 384),
        row_of({4, 8, 12}, 0.7, 384),
    };
}

SweepRow location_keep_rate_baseline() {
    SweepRow row;
    row.label = "baseline/384";
    row.image_size = 384;
    return row;
}

std::vector<SweepRow> resolution_rows() {
    std::vector<SweepRow> rows;
    for (std::size_t s : {224, 256, 304, 384, 464, 512}) rows.push_back(row_of({5, 10}, 0.7, s));
    return rows;
}

SweepRow resolution_baseline() {
    return row_of({5, 10}, 0.7, 384);
}

const char* to_string(FlopsConvention convention) {
    return convention == FlopsConvention::kTwoPerMac ? "2mac" : "mac";
}

const char* to_string(SelectionCosting costing) {
    return costing == SelectionCosting::kSplit ? "split" : "reduced";
}

}  // namespace trips
