#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "trips/backbone.hpp"

namespace trips {

struct BenchOptions {
    std::size_t warmup = 1;
    std::size_t repeats = 3;
};

struct BenchTiming {
    SelectionConfig selection;
    double min_seconds = 0.0;
    double mean_seconds = 0.0;
};

// Wall-clock of forward() for each selection variant over the same weights
// and input. Repeats are interleaved across variants so slow drift in
// machine load hits every variant alike; min_seconds is the headline number.
std::vector<BenchTiming> time_variants(const VitTrips& model, const TokenSequence& seq,
                                       const std::optional<Tensor>& guidance,
                                       const std::vector<SelectionConfig>& variants,
                                       const BenchOptions& options = {});

struct BenchComparison {
    BenchTiming baseline;  // no selection
    BenchTiming selected;
    double speedup = 0.0;  // baseline.min_seconds / selected.min_seconds
};

// Seeded model and synthetic input from `config` (its own selection is
// ignored); compares no selection against `selection`.
BenchComparison bench_selection(const ModelConfig& config, const SelectionConfig& selection,
                                const BenchOptions& options = {});

}  // namespace trips
