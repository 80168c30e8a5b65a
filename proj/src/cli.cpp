#include "trips/cli.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "trips/bench.hpp"
#include "trips/cost_model.hpp"
#include "trips/error.hpp"
#include "trips/gradcheck.hpp"
#include "trips/io.hpp"

namespace trips {

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string mode;
    bool no_itf = false;
    bool no_td_att = false;
    std::optional<std::string> locations;
    std::optional<std::string> rates;
    std::optional<std::size_t> image_size;
    std::string flops_convention = "mac";
    std::string selection_costing = "reduced";
};

SelectionConfig default_selection() { return {{5, 10}, {0.7, 0.7}}; }

std::string join(const auto& values) {
    std::ostringstream s;
    for (std::size_t i = 0; i < values.size(); ++i) s << (i ? "," : "") << values[i];
    return s.str();
}

// Config file first, then flag overrides. Without a config file the
// selection starts from layers 5 and 10 at 0.7 and the flags replace the
// locations and rates independently.
RunConfig resolve_run(const CommonFlags& f) {
    RunConfig run;
    if (!f.config_path.empty()) {
        run = load_run_config(f.config_path);
    } else {
        run.model.selection = default_selection();
    }
    ModelConfig& m = run.model;
    if (f.seed) m.seed = *f.seed;
    if (!f.out_dir.empty()) run.out_dir = f.out_dir;
    if (!f.mode.empty()) m.mode = parse_guidance_source(f.mode, m.mode);
    if (f.no_itf) m.mode.disable_fusion = true;
    if (f.no_td_att) m.mode.disable_td_att = true;
    if (f.image_size) m.image_size = *f.image_size;
    if (f.locations) m.selection.locations = parse_size_list(*f.locations);
    if (f.rates) m.selection.rates = parse_double_list(*f.rates);
    m.validate();
    return run;
}

std::filesystem::path out_path(const RunConfig& run, const std::string& name) {
    const std::filesystem::path dir = run.out_dir.empty() ? "." : run.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());
    return dir / name;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

FlopsConvention parse_convention(const std::string& s) {
    if (s == "mac") return FlopsConvention::kMacCount;
    if (s == "2mac") return FlopsConvention::kTwoPerMac;
    throw ConfigError("unknown FLOPs convention '" + s + "'");
}

SelectionCosting parse_costing(const std::string& s) {
    if (s == "reduced") return SelectionCosting::kReducedLayer;
    if (s == "split") return SelectionCosting::kSplit;
    throw ConfigError("unknown selection costing '" + s + "'");
}

CostConfig cost_config(const CommonFlags& f, std::size_t image_size, SelectionConfig selection) {
    CostConfig c = CostConfig::vit_b16(image_size, std::move(selection));
    c.convention = parse_convention(f.flops_convention);
    c.selection_costing = parse_costing(f.selection_costing);
    c.fused_token = !f.no_itf;
    return c;
}

nlohmann::json report_json(const CostReport& r) {
    nlohmann::json j = {
        {"lengths", r.lengths},  {"vision_flops", r.vision}, {"text_flops", r.text},
        {"fusion_flops", r.fusion}, {"total_flops", r.total}, {"overall_keep_rate", r.overall_keep_rate},
        {"convention", to_string(r.convention)},
    };
    if (r.baseline_ratio) {
        j["baseline"] = r.baseline_name;
        j["baseline_ratio"] = *r.baseline_ratio;
    }
    return j;
}

struct Forwarded {
    RunConfig run;
    Tensor image;
    ForwardResult result;
};

Forwarded run_forward(const CommonFlags& f) {
    Forwarded fw{resolve_run(f), {}, {}};
    const VitTrips model = VitTrips::create(fw.run.model);
    fw.image = run_image(fw.run);
    fw.result = forward(model, patch_embed(fw.image, model), run_guidance(fw.run));
    return fw;
}

int cmd_forward(const CommonFlags& f, std::ostream& out) {
    const Forwarded fw = run_forward(f);
    const ForwardTrace& t = fw.result.trace;
    out << "lengths: " << join(t.lengths) << "\n";
    out << "final_length: " << fw.result.seq.size() << "\n";
    for (const SelectionEvent& e : t.events) {
        out << "layer " << e.layer << ": n_before=" << e.n_before << " k=" << e.outcome.k
            << " n_after=" << e.n_after << " fused_mass=" << e.outcome.fused_mass << "\n";
    }
    if (!fw.run.out_dir.empty()) {
        emit_trace_json(t, out_path(fw.run, "trace.jsonl").string());
        save_tensor(out_path(fw.run, "tokens.tnsr").string(), fw.result.seq.tokens);
        out << "wrote " << out_path(fw.run, "trace.jsonl").string() << "\n";
    }
    return kExitOk;
}

int cmd_cost(const CommonFlags& f, std::ostream& out) {
    const RunConfig run = resolve_run(f);
    const std::size_t size = f.image_size.value_or(384);
    const CostConfig c = cost_config(f, size, run.model.selection);
    CostReport report = model_flops(c);
    const CostReport base = model_flops(cost_config(f, size, {}));
    report.baseline_name = "no-selection/" + std::to_string(size);
    report.baseline_ratio = speedup_estimate(report, base);

    out << "image_size: " << size << "\n";
    out << "locations: " << join(c.selection.locations) << "\n";
    out << "rates: " << join(c.selection.rates) << "\n";
    out << "convention: " << to_string(c.convention) << "\n";
    out << "selection_costing: " << to_string(c.selection_costing) << "\n";
    out << "lengths: " << join(report.lengths) << "\n";
    out << "overall_keep_rate: " << report.overall_keep_rate << "\n";
    out << "vision_flops: " << report.vision << "\n";
    out << "text_flops: " << report.text << "\n";
    out << "fusion_flops: " << report.fusion << "\n";
    out << "total_flops: " << report.total << "\n";
    out << "baseline: " << report.baseline_name << "\n";
    out << "baseline_ratio: " << *report.baseline_ratio << "\n";
    if (!run.out_dir.empty()) write_text(out_path(run, "cost.json"), report_json(report).dump(2) + "\n");
    return kExitOk;
}

int cmd_sweep(const CommonFlags& f, const std::string& table, std::ostream& out) {
    std::vector<SweepRow> rows;
    SweepRow baseline;
    if (table == "location") {
        rows = location_keep_rate_rows();
        baseline = location_keep_rate_baseline();
    } else if (table == "resolution") {
        rows = resolution_rows();
        baseline = resolution_baseline();
    } else {
        throw ConfigError("unknown sweep table '" + table + "'");
    }
    const auto entries = sweep(rows, baseline, cost_config(f, 384, {}));

    std::ostringstream tsv;
    tsv << "label\timage_size\tlocations\trates\tkeep_rate\ttotal_flops\tratio\n";
    nlohmann::json json = nlohmann::json::array();
    for (const SweepEntry& e : entries) {
        tsv << e.row.label << "\t" << e.row.image_size << "\t" << join(e.row.selection.locations) << "\t"
            << join(e.row.selection.rates) << "\t" << e.report.overall_keep_rate << "\t" << e.report.total
            << "\t" << *e.report.baseline_ratio << "\n";
        nlohmann::json j = report_json(e.report);
        j["label"] = e.row.label;
        j["image_size"] = e.row.image_size;
        j["locations"] = e.row.selection.locations;
        j["rates"] = e.row.selection.rates;
        json.push_back(std::move(j));
    }
    out << tsv.str();
    if (!f.out_dir.empty()) {
        RunConfig run;
        run.out_dir = f.out_dir;
        write_text(out_path(run, "sweep.tsv"), tsv.str());
        write_text(out_path(run, "sweep.json"), json.dump(2) + "\n");
    }
    return kExitOk;
}

int cmd_visualize(const CommonFlags& f, std::ostream& out) {
    const Forwarded fw = run_forward(f);
    save_image_ppm(out_path(fw.run, "input.ppm").string(), fw.image);
    for (const SelectionEvent& e : fw.result.trace.events) {
        const auto path = out_path(fw.run, "overlay_layer" + std::to_string(e.layer) + ".ppm");
        save_overlay(fw.image, fw.result.trace, e.layer, path.string());
        out << "layer " << e.layer << ": " << e.kept_grid_cells() << " kept cells -> " << path.string() << "\n";
    }
    return kExitOk;
}

int cmd_gradcheck(const CommonFlags& f, std::size_t trials, double eps, double tolerance,
                  std::ostream& out) {
    GuidanceMode mode;
    if (!f.mode.empty()) mode = parse_guidance_source(f.mode);
    mode.disable_fusion = f.no_itf;
    mode.disable_td_att = f.no_td_att;
    mode.validate();
    SelectionConfig selection = default_grad_selection();
    if (f.locations) selection.locations = parse_size_list(*f.locations);
    if (f.rates) selection.rates = parse_double_list(*f.rates);

    std::uint64_t seed = f.seed.value_or(0);
    std::size_t passed = 0, failed = 0, skipped = 0;
    double worst = 0.0;
    while (passed + failed < trials) {
        const GradInstance inst = small_grad_instance(mode, seed++, selection);
        const GradReport r = check_selection_pipeline(inst.model, inst.patches, inst.guidance, eps);
        if (!r.valid) {
            out << "seed " << seed - 1 << ": skipped (" << r.invalid_reason << ")\n";
            if (++skipped > 10 * trials) throw ConfigError("gradcheck: no valid instances found");
            continue;
        }
        worst = std::max(worst, r.max_rel_error);
        const bool ok = r.passed(tolerance);
        ok ? ++passed : ++failed;
        out << "seed " << seed - 1 << ": max_rel_error=" << r.max_rel_error << " tie_margin=" << r.tie_margin
            << (ok ? " ok" : " FAIL") << "\n";
        if (!ok) {
            for (const ParamError& p : r.params) out << "  " << p.name << " " << p.max_rel_error << "\n";
        }
    }
    out << "passed " << passed << "/" << trials << ", skipped " << skipped << ", worst " << worst
        << " (tolerance " << tolerance << ", eps " << eps << ")\n";
    return failed == 0 ? kExitOk : kExitCheckFailed;
}

int cmd_bench(const CommonFlags& f, const BenchOptions& options, std::ostream& out) {
    CommonFlags flags = f;
    if (!flags.image_size) flags.image_size = 384;
    const RunConfig run = resolve_run(flags);
    const BenchComparison c = bench_selection(run.model, run.model.selection, options);
    out << "tokens: " << run.model.patch_count() + 1 << "\n";
    out << "locations: " << join(run.model.selection.locations) << "\n";
    out << "rates: " << join(run.model.selection.rates) << "\n";
    out << "baseline_seconds: " << c.baseline.min_seconds << "\n";
    out << "selection_seconds: " << c.selected.min_seconds << "\n";
    out << "speedup: " << c.speedup << "\n";
    return kExitOk;
}

void add_common(CLI::App* app, CommonFlags& f, bool model_flags) {
    app->add_option("--config", f.config_path, "key=value run configuration file");
    app->add_option("--seed", f.seed, "seed for weights and synthetic inputs");
    app->add_option("--out", f.out_dir, "output directory");
    app->add_option("--mode", f.mode, "guidance source")
        ->check(CLI::IsMember({"text-cls", "image-cls", "multimodal-cls"}));
    app->add_flag("--no-itf", f.no_itf, "drop inattentive tokens instead of fusing them");
    app->add_flag("--no-td-att", f.no_td_att, "score patches by the image [CLS] in text mode");
    app->add_option("--locations", f.locations, "selection layers, e.g. 5,10");
    app->add_option("--rates", f.rates, "keep rates, e.g. 0.7,0.7");
    app->add_option("--image-size", f.image_size, "square image side in pixels");
    if (!model_flags) {
        app->add_option("--flops-convention", f.flops_convention, "mac or 2mac")
            ->check(CLI::IsMember({"mac", "2mac"}));
        app->add_option("--selection-costing", f.selection_costing, "reduced or split")
            ->check(CLI::IsMember({"reduced", "split"}));
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Text-guided patch selection for vision transformers"};
    app.name("trips");
    app.require_subcommand(1);

    CommonFlags f;
    std::string table = "location";
    std::size_t trials = 10;
    double eps = 1e-5, tolerance = 1e-6;
    BenchOptions bench;

    auto* fwd = app.add_subcommand("forward", "run the encoder and report sequence lengths");
    auto* cost = app.add_subcommand("cost", "FLOPs report for one selection config");
    auto* sweep_cmd = app.add_subcommand("sweep", "FLOPs table over preset rows");
    auto* vis = app.add_subcommand("visualize", "write kept-patch overlays");
    auto* grad = app.add_subcommand("gradcheck", "analytic vs numeric gradients on small models");
    auto* bench_cmd = app.add_subcommand("bench", "wall-clock with and without selection");
    for (auto* sub : {fwd, vis, grad, bench_cmd}) add_common(sub, f, true);
    for (auto* sub : {cost, sweep_cmd}) add_common(sub, f, false);
    sweep_cmd->add_option("--table", table, "location or resolution")
        ->check(CLI::IsMember({"location", "resolution"}));
    grad->add_option("--trials", trials, "valid instances to check");
    grad->add_option("--eps", eps, "finite-difference step");
    grad->add_option("--tolerance", tolerance, "max relative error");
    bench_cmd->add_option("--warmup", bench.warmup, "untimed forwards per variant");
    bench_cmd->add_option("--repeats", bench.repeats, "timed forwards per variant");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (fwd->parsed()) return cmd_forward(f, out);
        if (cost->parsed()) return cmd_cost(f, out);
        if (sweep_cmd->parsed()) return cmd_sweep(f, table, out);
        if (vis->parsed()) return cmd_visualize(f, out);
        if (grad->parsed()) return cmd_gradcheck(f, trials, eps, tolerance, out);
        return cmd_bench(f, bench, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

}  // namespace trips
