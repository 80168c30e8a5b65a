#include "trips/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "trips/error.hpp"
#include "trips/kernels.hpp"
#include "trips/rng.hpp"

namespace trips {

using autodiff::Tape;
using autodiff::Var;

Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    if (!(eps > 0.0)) throw ConfigError("numeric_grad: eps must be positive");
    std::vector<double> probe(x.values());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(Tensor(x.shape(), probe));
        probe[i] = orig - eps;
        const double down = f(Tensor(x.shape(), probe));
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("numeric_grad: function returned a non-finite value");
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    return Tensor(x.shape(), std::move(grad));
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
    if (analytic.size() != numeric.size()) throw ShapeError("relative_error: size mismatch");
    double scale_a = 0.0, scale_n = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        scale_a = std::max(scale_a, std::abs(analytic[i]));
        scale_n = std::max(scale_n, std::abs(numeric[i]));
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
    }
    const double denom = std::max(scale_a, scale_n);
    return denom == 0.0 ? 0.0 : worst / denom;
}

namespace {

struct LinearVars {
    Var weight;
    Var bias;
};

LinearVars leaf_linear(Tape& tape, const LinearLayer& l, const std::string& name) {
    return {tape.leaf(l.weight, name + ".weight"), tape.leaf(l.bias, name + ".bias")};
}

Var apply(Tape& tape, const LinearVars& l, Var x) {
    return tape.linear(x, l.weight, l.bias);
}

Var record_norm(Tape& tape, const LayerNormParams& p, Var x) {
    return tape.layer_norm(x, tape.leaf(p.gamma), tape.leaf(p.beta), p.eps);
}

// Mirrors the kernel attention: per-head slices, scaled scores, softmax, mix.
Var record_attend(Tape& tape, Var q, Var k, Var v, std::size_t heads, std::vector<Var>* maps) {
    const std::size_t d = tape.value(q).cols();
    const std::size_t hd = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Var> contexts;
    for (std::size_t h = 0; h < heads; ++h) {
        const Var qh = tape.slice_cols(q, h * hd, (h + 1) * hd);
        const Var kh = tape.slice_cols(k, h * hd, (h + 1) * hd);
        const Var vh = tape.slice_cols(v, h * hd, (h + 1) * hd);
        const Var p = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), inv_scale));
        if (maps) maps->push_back(p);
        contexts.push_back(tape.matmul(p, vh));
    }
    return tape.concat_cols(contexts);
}

Var record_mhsa(Tape& tape, const MhsaLayer& layer, const LinearVars& wq, Var x,
                std::vector<Var>* maps) {
    const LinearVars wk = leaf_linear(tape, layer.wk, "wk");
    const LinearVars wv = leaf_linear(tape, layer.wv, "wv");
    const LinearVars wo = leaf_linear(tape, layer.wo, "wo");
    const Var ctx = record_attend(tape, apply(tape, wq, x), apply(tape, wk, x), apply(tape, wv, x),
                                  layer.heads, maps);
    return apply(tape, wo, ctx);
}

Var record_sa(Tape& tape, const MhsaLayer& layer, const LinearVars& wq, Var x,
              NormPlacement placement, std::vector<Var>* maps) {
    if (placement == NormPlacement::kPre) {
        const Var y = record_mhsa(tape, layer, wq, record_norm(tape, layer.norm, x), maps);
        return tape.add(y, x);
    }
    const Var y = record_mhsa(tape, layer, wq, x, maps);
    return record_norm(tape, layer.norm, tape.add(y, x));
}

struct Evaluation {
    double loss = 0.0;
    std::vector<std::vector<std::size_t>> kept;
    double tie_margin = 0.0;
};

Evaluation evaluate(const VitTrips& model, const Tensor& patches, const Tensor& guidance) {
    const ForwardResult r = forward(model, embed_patches(model, patches), guidance);
    Evaluation e;
    for (double v : r.seq.tokens.values()) e.loss += v;
    e.tie_margin = std::numeric_limits<double>::infinity();
    for (const auto& ev : r.trace.events) {
        e.kept.push_back(ev.outcome.kept_indices);
        e.tie_margin = std::min(e.tie_margin, ev.outcome.tie_margin());
    }
    return e;
}

}  // namespace

Var record_sa_block(Tape& tape, const MhsaLayer& layer, Var x, NormPlacement placement) {
    return record_sa(tape, layer, leaf_linear(tape, layer.wq, "wq"), x, placement, nullptr);
}

Var record_ffn_block(Tape& tape, const FfnBlock& ffn, Var x, NormPlacement placement) {
    const LinearVars w1 = leaf_linear(tape, ffn.w1, "w1");
    const LinearVars w2 = leaf_linear(tape, ffn.w2, "w2");
    const auto mlp = [&](Var in) { return apply(tape, w2, tape.gelu(apply(tape, w1, in))); };
    if (placement == NormPlacement::kPre) return tape.add(mlp(record_norm(tape, ffn.norm, x)), x);
    return record_norm(tape, ffn.norm, tape.add(mlp(x), x));
}

PipelineGraph record_pipeline(Tape& tape, const VitTrips& model, const Tensor& patches,
                              const Tensor& guidance) {
    const ModelConfig& cfg = model.config;
    const std::size_t d = cfg.width;
    const NormPlacement norm = cfg.options.norm;
    if (guidance.size() != d) throw ShapeError("record_pipeline: guidance length != width");

    PipelineGraph graph;
    graph.patches = tape.leaf(patches, "patches");
    graph.guidance = tape.leaf(guidance, "guidance");

    const LinearVars proj = leaf_linear(tape, model.patch_proj, "patch_proj");
    const Var cls = tape.reshape(tape.leaf(model.cls_embed, "cls"), {1, d});
    Var x = tape.add(tape.concat_rows({cls, apply(tape, proj, graph.patches)}),
                     tape.leaf(model.pos_embed, "pos"));
    // Visual-only sequences: the image tail starts right after [CLS].
    const std::size_t begin = 1;

    for (std::size_t l = 1; l <= cfg.layers; ++l) {
        const EncoderLayer& layer = model.layers[l - 1];
        const LinearVars wq = leaf_linear(tape, layer.attn.wq, "layer" + std::to_string(l) + ".wq");
        const auto rate = cfg.selection.rate_at(l);
        if (!rate) {
            x = record_ffn_block(tape, layer.ffn, record_sa(tape, layer.attn, wq, x, norm, nullptr), norm);
            continue;
        }

        std::vector<Var> maps;
        const Var v_post = record_sa(tape, layer.attn, wq, x, norm, &maps);
        const std::size_t rows = tape.value(v_post).rows();
        const std::size_t n = rows - begin;

        Var scores;
        if (cfg.mode.uses_text_guidance()) {
            const Var q_text = apply(tape, wq, tape.reshape(graph.guidance, {1, d}));
            Var candidates = tape.slice_rows(v_post, begin, rows);
            if (cfg.options.score_target == ScoreTarget::kKeyProjected) {
                candidates = apply(tape, leaf_linear(tape, layer.attn.wk, "wk"), candidates);
            }
            const double inv = 1.0 / std::sqrt(static_cast<double>(d));
            scores = tape.reshape(
                tape.softmax_rows(tape.scale(tape.matmul_nt(q_text, candidates), inv)), {n});
        } else {
            Var acc;
            for (std::size_t h = 0; h < maps.size(); ++h) {
                const Var row = tape.slice_cols(tape.slice_rows(maps[h], 0, 1), begin, rows);
                acc = h == 0 ? row : tape.add(acc, row);
            }
            const Var mean = tape.scale(acc, 1.0 / static_cast<double>(maps.size()));
            scores = tape.reshape(tape.normalize(mean), {n});
        }

        const std::size_t k = keep_count(n, *rate, cfg.options.rounding);
        std::vector<std::size_t> kept = top_k_indices(tape.value(scores), k);
        std::vector<std::size_t> kept_rows(begin);
        for (std::size_t i = 0; i < begin; ++i) kept_rows[i] = i;
        for (std::size_t i : kept) kept_rows.push_back(begin + i);
        std::vector<std::size_t> dropped;
        for (std::size_t i = 0, j = 0; i < n; ++i) {
            if (j < kept.size() && kept[j] == i) {
                ++j;
            } else {
                dropped.push_back(i);
            }
        }

        std::vector<Var> parts{tape.gather_rows(v_post, kept_rows)};
        if (!cfg.mode.disable_fusion) parts.push_back(tape.weighted_sum(v_post, scores, dropped, begin));
        x = record_ffn_block(tape, layer.ffn, tape.concat_rows(parts), norm);

        graph.selection.push_back({l, wq.weight, wq.bias});
        graph.kept.push_back(std::move(kept));
    }
    graph.output = x;
    graph.loss = tape.sum(x);
    return graph;
}

double pipeline_loss(const VitTrips& model, const Tensor& patches, const Tensor& guidance) {
    return evaluate(model, patches, guidance).loss;
}

GradReport check_selection_pipeline(const VitTrips& model, const Tensor& patches,
                                    const Tensor& guidance, double eps) {
    GradReport report;
    report.eps = eps;
    const Evaluation base = evaluate(model, patches, guidance);
    report.tie_margin = base.tie_margin;
    if (!(base.tie_margin > 10.0 * eps)) {
        report.invalid_reason = "tie margin " + std::to_string(base.tie_margin) +
                                " is not above 10*eps; selection is not locally constant";
        return report;
    }

    Tape tape;
    const PipelineGraph graph = record_pipeline(tape, model, patches, guidance);
    const autodiff::Gradients grads = tape.backward(graph.loss, Tensor({1, 1}, {1.0}));

    bool selection_moved = false;
    const auto probe = [&](const VitTrips& m, const Tensor& p, const Tensor& g) {
        const Evaluation e = evaluate(m, p, g);
        if (e.kept != base.kept) selection_moved = true;
        return e.loss;
    };
    const auto record = [&](const std::string& name, const Tensor& analytic, const Tensor& numeric) {
        const double err = relative_error(analytic, numeric);
        report.params.push_back({name, err, analytic.size()});
        report.max_rel_error = std::max(report.max_rel_error, err);
    };

    record("patches", grads.of(graph.patches),
           numeric_grad([&](const Tensor& p) { return probe(model, p, guidance); }, patches, eps));
    record("guidance", grads.of(graph.guidance),
           numeric_grad([&](const Tensor& g) { return probe(model, patches, g); }, guidance, eps));

    for (const auto& sel : graph.selection) {
        VitTrips perturbed = model;
        LinearLayer& wq = perturbed.layers[sel.layer - 1].attn.wq;
        const LinearLayer original = wq;
        const std::string prefix = "layer" + std::to_string(sel.layer) + ".wq";
        record(prefix + ".weight", grads.of(sel.wq_weight),
               numeric_grad(
                   [&](const Tensor& w) {
                       wq = LinearLayer(w, original.bias);
                       return probe(perturbed, patches, guidance);
                   },
                   original.weight, eps));
        record(prefix + ".bias", grads.of(sel.wq_bias),
               numeric_grad(
                   [&](const Tensor& b) {
                       wq = LinearLayer(original.weight, b);
                       return probe(perturbed, patches, guidance);
                   },
                   original.bias, eps));
        wq = original;
    }

    if (selection_moved) {
        report.invalid_reason = "a finite-difference step changed a kept set";
        return report;
    }
    report.valid = true;
    return report;
}

SelectionConfig default_grad_selection() { return {{2, 4}, {0.7, 0.7}}; }

GradInstance small_grad_instance(const GuidanceMode& mode, std::uint64_t seed,
                                 const SelectionConfig& selection) {
    ModelConfig cfg;
    cfg.layers = 4;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.patch_size = 2;
    cfg.image_size = 8;
    cfg.selection = selection;
    cfg.mode = mode;
    cfg.seed = seed;
    GradInstance inst{VitTrips::create(cfg), {}, {}};
    SeededRng rng(seed ^ 0x5eedf00dULL);
    std::vector<double> px(cfg.patch_count() * cfg.patch_dim());
    for (double& v : px) v = rng.uniform();
    inst.patches = Tensor({cfg.patch_count(), cfg.patch_dim()}, std::move(px));
    std::vector<double> g(cfg.width);
    for (double& v : g) v = rng.normal();
    inst.guidance = Tensor::vector(std::move(g));
    return inst;
}

}  // namespace trips
