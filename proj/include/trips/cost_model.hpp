#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "trips/backbone.hpp"
#include "trips/patch_select.hpp"

namespace trips {

// How one multiply-accumulate is counted.
enum class FlopsConvention { kMacCount, kTwoPerMac };

// How a selection layer itself is charged.
enum class SelectionCosting {
    // The whole selection layer at its post-selection length. Reproduces the
    // published location/keep-rate table; the default.
    kReducedLayer,
    // Self-attention at the pre-selection length, FFN at the post-selection
    // length, mirroring the order of the live forward pass.
    kSplit,
};

struct VisionCostDims {
    std::size_t layers = 12;
    std::size_t width = 768;
    std::size_t heads = 12;
    std::size_t ffn_mult = 4;
};

struct TextCostDims {
    std::size_t layers = 6;
    std::size_t width = 768;
    std::size_t seq_len = 40;
};

struct FusionCostDims {
    std::size_t layers = 6;
    std::size_t width = 768;
    std::size_t text_len = 40;  // query count
};

struct CostConfig {
    VisionCostDims vision;
    TextCostDims text;
    FusionCostDims fusion;
    std::size_t image_tokens = 577;  // including [CLS]
    SelectionConfig selection;
    FlopsConvention convention = FlopsConvention::kMacCount;
    SelectionCosting selection_costing = SelectionCosting::kReducedLayer;
    KeepRounding rounding = KeepRounding::kFloor;
    bool fused_token = true;  // false models the no-fusion ablation

    // ViT-B/16 vision, 6-layer text and fusion at width 768, text length 40.
    static CostConfig vit_b16(std::size_t image_size, SelectionConfig selection = {});
    void validate() const;
};

struct CostReport {
    std::vector<std::size_t> lengths;  // visual sequence length after each layer
    double vision = 0.0;
    double text = 0.0;
    double fusion = 0.0;
    double total = 0.0;
    int overall_keep_rate = 100;  // percent
    FlopsConvention convention = FlopsConvention::kMacCount;
    std::string baseline_name;
    std::optional<double> baseline_ratio;
};

// Sequence length after each of `layers` layers. A selection layer keeps
// k = keep_count(n, r) of its n = length - 1 candidates and leaves
// k + 2 tokens ([CLS] + kept + fused), or k + 1 without the fused token.
std::vector<std::size_t> token_schedule(std::size_t initial_tokens, const SelectionConfig& selection,
                                        std::size_t layers,
                                        KeepRounding rounding = KeepRounding::kFloor,
                                        bool fused_token = true);

// round(100 * prod(rates)).
int overall_keep_rate(const std::vector<double>& rates);

// 4 n d^2 (QKVO) + 2 n^2 d (scores and mixing) + 2 m n d^2 (FFN) MACs.
double encoder_layer_flops(std::size_t n, std::size_t d, std::size_t ffn_mult,
                           FlopsConvention convention = FlopsConvention::kMacCount);

// Fusion layer: query self-attention 4 nq d^2 + 2 nq^2 d, cross attention
// 2 nq d^2 (Q, O) + 2 nk d^2 (K, V) + 2 nq nk d, FFN 2 m nq d^2.
double cross_layer_flops(std::size_t nq, std::size_t nk, std::size_t d, std::size_t ffn_mult,
                         FlopsConvention convention = FlopsConvention::kMacCount);

CostReport model_flops(const CostConfig& config);

// total(a) / total(b).
double speedup_estimate(const CostReport& a, const CostReport& b);

struct SweepRow {
    std::string label;
    SelectionConfig selection;
    std::size_t image_size = 384;
};

struct SweepEntry {
    SweepRow row;
    CostReport report;  // baseline_ratio filled against the sweep baseline
};

// One report per row; `base` supplies every dimension except image size and
// selection, `baseline` names the reference row for the ratios.
std::vector<SweepEntry> sweep(const std::vector<SweepRow>& rows, const SweepRow& baseline,
                              const CostConfig& base = CostConfig::vit_b16(384));

// The 13 location/keep-rate rows at 384^2 (baseline: no selection at 384^2).
std::vector<SweepRow> location_keep_rate_rows();
SweepRow location_keep_rate_baseline();
// [5,10]@0.7 at 224..512 (baseline: the same selection at 384^2).
std::vector<SweepRow> resolution_rows();
SweepRow resolution_baseline();

const char* to_string(FlopsConvention convention);
const char* to_string(SelectionCosting costing);

}  // namespace trips
