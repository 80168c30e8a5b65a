#include "trips/bench.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include "trips/error.hpp"
#include "trips/io.hpp"

namespace trips {

std::vector<BenchTiming> time_variants(const VitTrips& model, const TokenSequence& seq,
                                       const std::optional<Tensor>& guidance,
                                       const std::vector<SelectionConfig>& variants,
                                       const BenchOptions& options) {
    if (options.repeats == 0) throw ConfigError("bench: repeats must be positive");
    std::vector<VitTrips> models;
    for (const SelectionConfig& s : variants) {
        s.validate(model.config.layers);
        models.push_back(model);
        models.back().config.selection = s;
    }
    std::vector<BenchTiming> out(variants.size());
    for (std::size_t i = 0; i < variants.size(); ++i) {
        out[i].selection = variants[i];
        out[i].min_seconds = std::numeric_limits<double>::infinity();
    }
    for (std::size_t w = 0; w < options.warmup; ++w)
        for (const VitTrips& m : models) forward(m, seq, guidance);
    for (std::size_t r = 0; r < options.repeats; ++r) {
        for (std::size_t i = 0; i < models.size(); ++i) {
            const auto start = std::chrono::steady_clock::now();
            const ForwardResult result = forward(models[i], seq, guidance);
            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
            out[i].min_seconds = std::min(out[i].min_seconds, elapsed.count());
            out[i].mean_seconds += elapsed.count() / static_cast<double>(options.repeats);
        }
    }
    return out;
}

BenchComparison bench_selection(const ModelConfig& config, const SelectionConfig& selection,
                                const BenchOptions& options) {
    RunConfig run;
    run.model = config;
    run.model.selection = {};
    const VitTrips model = VitTrips::create(run.model);
    const TokenSequence seq = patch_embed(run_image(run), model);
    const auto timings = time_variants(model, seq, run_guidance(run), {SelectionConfig{}, selection}, options);
    return {timings[0], timings[1], timings[0].min_seconds / timings[1].min_seconds};
}

}  // namespace trips
