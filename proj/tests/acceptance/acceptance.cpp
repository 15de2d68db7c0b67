// Runs every end-to-end acceptance criterion and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "citrinet/checkpoint.hpp"
#include "citrinet/decoding.hpp"
#include "citrinet/gradcheck.hpp"
#include "citrinet/losses.hpp"
#include "citrinet/model.hpp"
#include "citrinet/synth.hpp"
#include "citrinet/training.hpp"
#include "oracles.hpp"

using namespace citrinet;
namespace oracle = citrinet::testing;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    // Records the first failed condition.
    void require(bool cond, const std::string &what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt(const char *f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

bool has_prefix(const std::string &s, const std::string &p) { return s.rfind(p, 0) == 0; }
bool has_suffix(const std::string &s, const std::string &x) {
    return s.size() >= x.size() && s.compare(s.size() - x.size(), x.size(), x) == 0;
}

// Small models share everything but the variant-specific defaults.
ModelConfig small_config(Variant variant, std::size_t channels) {
    auto cfg = default_config(variant);
    cfg.channels = channels;
    cfg.total_blocks = 5;
    cfg.vocab = 8;
    cfg.synth_vocab = 8;
    cfg.epilog_dim = 2 * channels;
    cfg.heads = 4;
    cfg.decoder_dim = channels;
    cfg.decoder_heads = 4;
    cfg.decoder_blocks = 1;
    return cfg;
}

BlockOptions block_options(const ModelConfig &cfg) {
    BlockOptions o;
    o.norm = cfg.norm;
    o.act = cfg.act;
    o.use_ffn = cfg.use_ffn;
    o.heads = cfg.heads;
    o.dropout = cfg.dropout;
    return o;
}

void randomize(const ParameterStore &store, Rng &rng, double scale) {
    for (auto t : store.parameters())
        for (auto &x : t.mutable_data())
            x = scale * standard_normal(rng);
}

FeatureBatch random_batch(Rng &rng, const std::vector<std::size_t> &lens, std::size_t pad_to = 0) {
    std::vector<Tensor> items;
    for (auto t : lens)
        items.push_back(oracle::random_tensor({kNumMelBins, t}, rng, false));
    return make_feature_batch(items, pad_to);
}

std::string serialize(const Checkpoint &ckpt) {
    std::ostringstream os;
    write_checkpoint(os, ckpt);
    return os.str();
}

std::vector<double> parameter_values(const CitrinetModel &model) {
    std::vector<double> out;
    for (const auto &e : model.store().entries())
        out.insert(out.end(), e.tensor.data().begin(), e.tensor.data().end());
    return out;
}

Outcome parameter_counts() {
    Outcome o;
    const std::array<std::size_t, 5> widths{256, 384, 512, 768, 1024};
    const std::array<double, 5> c_ref{12.2, 22.7, 38.0, 85.0, 141.6};
    const std::array<double, 5> att_ref{19.9, 40.3, 68.6, 123.5, 201.4};
    auto millions = [](Variant v, std::size_t c) {
        auto cfg = default_config(v);
        cfg.channels = c;
        return static_cast<double>(count_params(cfg)) / 1e6;
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const double c = millions(Variant::original, widths[i]);
        const double att = millions(Variant::attention, widths[i]);
        const double ec = c / c_ref[i] - 1.0, ea = att / att_ref[i] - 1.0;
        worst = std::max({worst, std::abs(ec), std::abs(ea)});
        o.require(std::abs(ec) <= 0.15, "C-" + std::to_string(widths[i]) + " = " + fmt("%.2fM", c));
        o.require(std::abs(ea) <= 0.15, "Att-C-" + std::to_string(widths[i]) + " = " + fmt("%.2fM", att));
        if (i > 0) {
            o.require(c > millions(Variant::original, widths[i - 1]), "C sizes not increasing");
            o.require(att > millions(Variant::attention, widths[i - 1]), "Att-C sizes not increasing");
        }
        o.require(att > c, "Att-C not larger than C at width " + std::to_string(widths[i]));
    }
    if (o.ok)
        o.detail = "worst relative deviation " + fmt("%.3f", worst);
    return o;
}

Outcome ctc_oracle() {
    Outcome o;
    Rng rng(2024);
    double worst_value = 0.0, worst_grad = 0.0;
    std::size_t feasible = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const auto T = static_cast<std::size_t>(uniform_int(rng, 1, 6));
        const auto V = static_cast<std::size_t>(uniform_int(rng, 1, 3));
        const std::size_t C = V + 1;
        const auto blank = static_cast<std::int64_t>(V);
        const auto lp = oracle::random_log_probs(T, C, rng);
        std::vector<std::int64_t> target(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(T))));
        for (auto &y : target)
            y = uniform_int(rng, 0, static_cast<std::int64_t>(V) - 1);

        const double expected = oracle::brute_force_ctc(lp, T, C, target, blank);
        Tensor log_probs(Shape{1, T, C}, lp);
        log_probs.set_requires_grad(true);
        const std::vector<std::size_t> len = {T};
        const std::vector<std::vector<std::int64_t>> targets = {target};
        const double got = ctc_loss(log_probs, len, targets, blank).loss.item();
        if (std::isinf(expected)) {
            o.require(std::isinf(got) && got > 0, "infeasible target not reported as +inf");
            continue;
        }
        ++feasible;
        worst_value = std::max(worst_value, std::abs(got - expected));
        const double g = oracle::max_fd_error([&] { return ctc_loss(log_probs, len, targets, blank).loss; },
                                              {log_probs});
        worst_grad = std::max(worst_grad, g);
    }
    o.require(worst_value <= 1e-9, "value error " + fmt("%.3e", worst_value));
    o.require(worst_grad <= 1e-6, "gradient rel err " + fmt("%.3e", worst_grad));
    if (o.ok)
        o.detail = std::to_string(feasible) + " feasible of 200; max |dL| " + fmt("%.2e", worst_value) +
                   ", max grad rel err " + fmt("%.2e", worst_grad);
    return o;
}

Outcome gradient_suite() {
    Outcome o;
    GradcheckOptions opts;
    opts.max_entries = 0;
    const auto report = gradcheck_model(gradcheck_config(), 1, opts);
    const std::array<std::string, 8> kinds = {".se.", ".res.", ".ffn.", ".mhsa.", "decoder.l2r.", "decoder.r2l.",
                                              "ctc_head.", ".sep"};
    for (const auto &k : kinds) {
        const bool covered = std::any_of(report.tensors.begin(), report.tensors.end(),
                                         [&](const auto &t) { return t.name.find(k) != std::string::npos; });
        o.require(covered, "no checked tensor matches '" + k + "'");
    }
    CitrinetModel model(gradcheck_config(), 1);
    const auto params = model.store().parameters();
    o.require(report.tensors.size() == params.size(), "not every parameter tensor checked");
    for (std::size_t i = 0; i < std::min(params.size(), report.tensors.size()); ++i)
        o.require(report.tensors[i].checked == params[i].size(), report.tensors[i].name + ": entries skipped");
    o.require(report.passed(), "failing: " + (report.failing().empty() ? std::string() : report.failing().front()));
    std::size_t entries = 0;
    for (const auto &t : report.tensors)
        entries += t.checked;
    if (o.ok)
        o.detail = std::to_string(report.tensors.size()) + " tensors, " + std::to_string(entries) +
                   " entries, worst rel err " + fmt("%.2e", report.worst());
    return o;
}

Outcome shape_distilling() {
    Outcome o;
    auto ceil_half = [](std::size_t t) { return (t + 1) / 2; };
    auto cfg = small_config(Variant::attention, 16);
    cfg.epilog_dim = 24;
    CitrinetModel model(cfg, 3);
    Rng rng(3);
    for (std::size_t T = 8; T <= 512; ++T) {
        const std::size_t expected = ceil_half(ceil_half(ceil_half(T)));
        o.require(encoded_length(T) == expected, "encoded_length(" + std::to_string(T) + ")");
        const auto enc = model.encode(random_batch(rng, {T}), ForwardContext{false, nullptr});
        o.require(enc.x.dim(2) == expected && enc.valid_len[0] == expected,
                  "encoder output length at T=" + std::to_string(T));
    }

    for (auto variant : {Variant::original, Variant::attention}) {
        auto full = default_config(variant);
        full.total_blocks = 23;
        const auto s = kernel_schedule(full);
        o.require(s.size() == 23, "23-block layout size");
        std::size_t stride2 = 0;
        std::array<std::vector<std::size_t>, 4> kernels;
        for (const auto &b : s) {
            stride2 += b.spec.stride == 2;
            if (b.mega >= 1 && b.mega <= 3)
                kernels[b.mega].push_back(b.spec.kernel);
        }
        o.require(stride2 == 3, "stride-2 block count " + std::to_string(stride2));
        o.require(kernels[1] == std::vector<std::size_t>{11, 13, 15, 17, 19, 21}, "mega block 1 kernels");
        o.require(kernels[2] == std::vector<std::size_t>{13, 15, 17, 19, 21, 23, 25}, "mega block 2 kernels");
        o.require(kernels[3] == std::vector<std::size_t>{25, 27, 29, 31, 33, 35, 37, 39}, "mega block 3 kernels");
        o.require(s.back().name == "epilog" && s.back().spec.kernel == 41, "epilog kernel");
        o.require(s.back().spec.out_channels == 640, "epilog width");
    }
    if (o.ok)
        o.detail = "T in [8, 512] checked through the encoder";
    return o;
}

Outcome block_census() {
    Outcome o;
    std::size_t blocks_checked = 0;
    for (auto variant : {Variant::original, Variant::attention}) {
        const auto cfg = default_config(variant);
        CitrinetModel model(cfg, 0, false);
        const auto schedule = kernel_schedule(cfg);
        auto &blocks = model.encoder().blocks();
        for (std::size_t i = 0; i < schedule.size(); ++i) {
            if (schedule[i].mega == 0)
                continue;
            const std::string conv = "encoder." + schedule[i].name + ".conv.";
            std::size_t conv_weights = 0, linear = 0;
            std::set<std::string> norms;
            for (const auto &e : model.store().entries()) {
                if (!has_prefix(e.name, conv))
                    continue;
                const std::string local = e.name.substr(conv.size());
                if (has_prefix(local, "sep") && has_suffix(local, ".weight") &&
                    (local.find("depthwise") != std::string::npos || local.find("pointwise") != std::string::npos))
                    ++conv_weights;
                if ((has_prefix(local, "ffn.") || has_prefix(local, "mhsa.")) && has_suffix(local, ".weight"))
                    ++linear;
                if (has_prefix(local, "ffn_norm.") || has_prefix(local, "mhsa_norm."))
                    norms.insert(local.substr(0, local.find('.')));
            }
            const std::string where = schedule[i].name;
            if (variant == Variant::original) {
                o.require(conv_weights == 10, where + ": " + std::to_string(conv_weights) + " conv weights");
                o.require(linear == 0 && norms.empty(), where + ": unexpected attention layers");
                o.require(blocks[i].conv_module().residual_adds() == 0, where + ": residual adds");
            } else {
                o.require(conv_weights == 2, where + ": " + std::to_string(conv_weights) + " conv weights");
                o.require(linear == 6, where + ": " + std::to_string(linear) + " linear projections");
                o.require(norms.size() == 2, where + ": " + std::to_string(norms.size()) + " layer norms");
                o.require(cfg.norm == NormKind::layer, "enhanced norms are not layer norms");
                o.require(blocks[i].conv_module().residual_adds() == 2, where + ": residual adds");
            }
            ++blocks_checked;
        }
    }
    if (o.ok)
        o.detail = std::to_string(blocks_checked) + " mega-block blocks checked";
    return o;
}

Outcome structural_invariants() {
    Outcome o;
    Rng rng(6);
    double decomposition = 0.0, gate_lo = 1.0, gate_hi = 0.0, pad_enc = 0.0, pad_loss = 0.0;

    // Block output = residual + main path scaled by its SE gates.
    for (auto variant : {Variant::original, Variant::attention}) {
        const auto cfg = small_config(variant, 16);
        const auto opts = block_options(cfg);
        for (int trial = 0; trial < 20; ++trial) {
            ParameterStore store(true, static_cast<std::uint64_t>(trial));
            BlockSpec spec;
            spec.in_channels = 16;
            spec.out_channels = 24;
            spec.kernel = 5;
            spec.stride = trial % 2 ? 2 : 1;
            spec.repeat = variant == Variant::attention ? 1 : 5;
            spec.attention_enhanced = variant == Variant::attention;
            JasperBlock block(Scope(store, "blk"), spec, opts);
            randomize(store, rng, 0.4);
            const std::size_t T = static_cast<std::size_t>(uniform_int(rng, 3, 20));
            const std::size_t short_len = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(T)));
            std::vector<double> x(2 * 16 * T, 0.0);
            for (std::size_t b = 0; b < 2; ++b)
                for (std::size_t c = 0; c < 16; ++c)
                    for (std::size_t t = 0; t < (b == 0 ? T : short_len); ++t)
                        x[(b * 16 + c) * T + t] = standard_normal(rng);
            JasperBlock::Trace trace;
            const auto y = block.forward({Tensor(Shape{2, 16, T}, std::move(x)), {T, short_len}},
                                         ForwardContext{false, nullptr}, &trace);
            const std::size_t To = y.x.dim(2);
            for (std::size_t b = 0; b < 2; ++b)
                for (std::size_t c = 0; c < 24; ++c) {
                    const double g = trace.gates.at({b, c, 0});
                    gate_lo = std::min(gate_lo, g);
                    gate_hi = std::max(gate_hi, g);
                    for (std::size_t t = 0; t < y.valid_len[b]; ++t) {
                        const double expect = trace.residual.at({b, c, t}) + trace.main.at({b, c, t}) * g;
                        decomposition = std::max(decomposition, std::abs(y.x.at({b, c, t}) - expect));
                    }
                    for (std::size_t t = y.valid_len[b]; t < To; ++t)
                        decomposition = std::max(decomposition, std::abs(y.x.at({b, c, t})));
                }
        }
    }
    o.require(decomposition <= 1e-12, "decomposition error " + fmt("%.3e", decomposition));
    o.require(gate_lo > 0.0 && gate_hi < 1.0, "gate outside (0, 1)");

    // A pure-CTC weighting leaves exactly the CTC loss.
    {
        auto cfg = small_config(Variant::attention, 16);
        cfg.lambda1 = 1.0;
        cfg.dropout = 0.0;
        CitrinetModel model(cfg, 7);
        o.require(model.decoder() == nullptr, "lambda1 = 1 still allocates decoders");
        const auto batch = random_batch(rng, {40, 33});
        const std::vector<std::vector<std::int64_t>> targets = {{1, 2, 3}, {4}};
        const auto losses = compute_losses(model, batch, targets, ForwardContext{false, nullptr});
        o.require(losses.combined.item() == losses.ctc, "combined loss differs from CTC");
        o.require(!losses.att_l2r && !losses.att_r2l, "attention losses present");
        for (int i = 0; i < 100; ++i) {
            const double c = std::exp(standard_normal(rng)), a = std::exp(standard_normal(rng)),
                         r = std::exp(standard_normal(rng));
            o.require(combined_loss(c, a, r, LossWeights{1.0, uniform01(rng), 0.1}) == c, "weighted loss not CTC");
        }
    }

    // Padding never reaches valid outputs or losses.
    for (auto variant : {Variant::original, Variant::attention}) {
        auto cfg = small_config(variant, 16);
        cfg.dropout = 0.0;
        CitrinetModel model(cfg, 8);
        for (int trial = 0; trial < 5; ++trial) {
            const std::vector<std::size_t> lens = {static_cast<std::size_t>(uniform_int(rng, 30, 60)),
                                                   static_cast<std::size_t>(uniform_int(rng, 10, 29))};
            std::vector<Tensor> items;
            for (auto t : lens)
                items.push_back(oracle::random_tensor({kNumMelBins, t}, rng, false));
            const std::vector<std::vector<std::int64_t>> targets = {{1, 2}, {3}};
            for (bool training : {false, true}) {
                const ForwardContext ctx{training, nullptr};
                const auto a = make_feature_batch(items);
                const auto b = make_feature_batch(items, lens[0] + 8 * static_cast<std::size_t>(trial + 1) + 3);
                const auto ea = model.encode(a, ctx), eb = model.encode(b, ctx);
                for (std::size_t i = 0; i < lens.size(); ++i)
                    for (std::size_t c = 0; c < ea.x.dim(1); ++c)
                        for (std::size_t t = 0; t < ea.valid_len[i]; ++t)
                            pad_enc = std::max(pad_enc, std::abs(ea.x.at({i, c, t}) - eb.x.at({i, c, t})));
                const auto la = compute_losses(model, a, targets, ctx), lb = compute_losses(model, b, targets, ctx);
                pad_loss = std::max(pad_loss, std::abs(la.combined.item() - lb.combined.item()));
                pad_loss = std::max(pad_loss, std::abs(la.ctc - lb.ctc));
            }
        }
    }
    o.require(pad_enc <= 1e-8, "padding changed encoder output by " + fmt("%.3e", pad_enc));
    o.require(pad_loss <= 1e-8, "padding changed a loss by " + fmt("%.3e", pad_loss));
    if (o.ok)
        o.detail = "decomposition " + fmt("%.1e", decomposition) + ", gates in [" + fmt("%.3f", gate_lo) + ", " +
                   fmt("%.3f", gate_hi) + "], padding " + fmt("%.1e", std::max(pad_enc, pad_loss));
    return o;
}

Outcome beam_oracle() {
    Outcome o;
    Rng rng(7);
    std::size_t instances = 0;
    for (int inst = 0; inst < 2000; ++inst) {
        const auto T = static_cast<std::size_t>(uniform_int(rng, 1, 4));
        const auto V = static_cast<std::size_t>(uniform_int(rng, 1, 3));
        const std::size_t C = V + 1;
        const auto blank = static_cast<std::int64_t>(V);
        const auto lp = oracle::random_log_probs(T, C, rng);
        const auto all = oracle::enumerate_alignments(lp, T, C, blank);
        auto best = all.begin();
        for (auto it = all.begin(); it != all.end(); ++it)
            if (it->second > best->second)
                best = it;
        for (std::size_t width : {8u, 12u, 32u}) {
            const auto beam = ctc_prefix_beam_search(lp, T, C, width, blank);
            o.require(!beam.empty() && beam[0].prefix == best->first,
                      "top-1 label sequence differs at width " + std::to_string(width));
            o.require(!beam.empty() && std::abs(beam[0].score() - best->second) <= 1e-9,
                      "top-1 score differs at width " + std::to_string(width));
        }
        ++instances;
    }
    for (int inst = 0; inst < 500; ++inst) {
        const auto T = static_cast<std::size_t>(uniform_int(rng, 1, 12));
        const auto C = static_cast<std::size_t>(uniform_int(rng, 2, 6));
        const auto lp = oracle::random_log_probs(T, C, rng);
        const auto beam = ctc_prefix_beam_search(lp, T, C, 1, 0);
        o.require(beam.size() == 1 && beam[0].prefix == ctc_greedy_decode(lp, T, C, 0), "beam 1 differs from greedy");
    }
    if (o.ok)
        o.detail = std::to_string(instances) + " exhaustive instances at widths 8/12/32, 500 greedy instances";
    return o;
}

// Steps until the train-set CER first reaches `target`, or 0 if never.
std::size_t steps_to_cer(Variant variant, double target, std::size_t max_steps, double *final_cer) {
    auto cfg = small_config(variant, 32);
    cfg.dropout = 0.0;
    cfg.spec_augment = false;
    cfg.dither = 0.0;
    cfg.lr_max = 0.05;
    cfg.warmup_steps = 100;
    cfg.total_steps = max_steps;
    const auto samples = synth_dataset(10, 1, cfg.synth_vocab, 2, 5);
    CitrinetModel model(cfg, 1);
    Trainer trainer(model, prepare_dataset(samples, cfg.dither), 1);
    const RescoreWeights weights{cfg.w_ctc, cfg.lambda2};
    for (std::size_t s = 1; s <= max_steps; ++s) {
        trainer.step();
        *final_cer = evaluate_cer(model, trainer.data(), cfg.beam_width, weights);
        if (*final_cer <= target)
            return s;
    }
    return 0;
}

Outcome overfit() {
    Outcome o;
    double att_cer = 1.0, c_cer = 1.0;
    const std::size_t att_steps = steps_to_cer(Variant::attention, 0.0, 2000, &att_cer);
    const std::size_t c_steps = steps_to_cer(Variant::original, 0.05, 2000, &c_cer);
    o.require(att_steps > 0, "Att-C did not reach CER 0 in 2000 steps (final " + fmt("%.3f", att_cer) + ")");
    o.require(c_steps > 0, "C did not reach CER 0.05 in 2000 steps (final " + fmt("%.3f", c_cer) + ")");
    o.require(c_steps >= att_steps, "C converged first: " + std::to_string(c_steps) + " < " +
                                        std::to_string(att_steps));
    if (o.ok)
        o.detail = "Att-C CER 0 at step " + std::to_string(att_steps) + "; C CER <= 0.05 at step " +
                   std::to_string(c_steps);
    return o;
}

std::size_t decoder_params(const ModelConfig &cfg) {
    const std::size_t d = resolved_decoder_dim(cfg), K = cfg.vocab + 3, E = cfg.epilog_dim;
    const std::size_t attention = 4 * (d * d + d);
    const std::size_t ffn = d * 4 * d + 4 * d + 4 * d * d + d;
    const std::size_t layer = 3 * 2 * d + 2 * attention + ffn;
    const std::size_t per_direction = cfg.decoder_blocks * layer + 2 * d;
    return K * d + (E != d ? E * d + d : 0) + 2 * per_direction + d * K + K;
}

std::size_t ffn_params(const ModelConfig &cfg) {
    std::size_t total = 0;
    for (const auto &b : kernel_schedule(cfg))
        if (b.spec.attention_enhanced) {
            const std::size_t c = b.spec.in_channels;
            total += 2 * c + c * 4 * c + 4 * c + 4 * c * c + c;
        }
    return total;
}

Outcome ablation_matrix() {
    Outcome o;
    const auto base = small_config(Variant::attention, 32);
    auto no_bidecoder = base;
    no_bidecoder.use_bidecoder = false;
    no_bidecoder.lambda1 = 1.0;
    auto no_ffn = base;
    no_ffn.use_ffn = false;
    auto batch_norm = base;
    batch_norm.norm = NormKind::batch;
    auto relu = base;
    relu.act = Activation::relu;

    const std::size_t full = count_params(base);
    struct Toggle {
        std::string name;
        ModelConfig cfg;
        std::size_t expected_delta;
    };
    const std::vector<Toggle> toggles = {{"no bi-decoder", no_bidecoder, decoder_params(base)},
                                         {"no FFN", no_ffn, ffn_params(base)},
                                         {"batch norm", batch_norm, 0},
                                         {"ReLU", relu, 0}};
    const auto samples = synth_dataset(10, 4, base.synth_vocab, 2, 5);
    std::string deltas;
    for (const auto &t : toggles) {
        validate(t.cfg);
        const std::size_t n = count_params(t.cfg);
        o.require(full - n == t.expected_delta && n <= full,
                  t.name + ": census delta " + std::to_string(full - n) + ", expected " +
                      std::to_string(t.expected_delta));
        deltas += (deltas.empty() ? "" : ", ") + t.name + " -" + std::to_string(full - n);
        CitrinetModel model(t.cfg, 5);
        o.require(model.store().parameter_count() == n, t.name + ": built model disagrees with census");
        Trainer trainer(model, prepare_dataset(samples, t.cfg.dither), 5);
        for (const auto &m : trainer.run(50)) {
            const bool finite = std::isfinite(m.combined) && std::isfinite(m.ctc) &&
                                (!m.att_l2r || std::isfinite(*m.att_l2r)) && (!m.att_r2l || std::isfinite(*m.att_r2l));
            o.require(finite, t.name + ": non-finite loss at step " + std::to_string(m.step));
        }
    }
    if (o.ok)
        o.detail = "params " + std::to_string(full) + "; " + deltas;
    return o;
}

Outcome checkpoint_round_trip() {
    Outcome o;
    auto cfg = small_config(Variant::attention, 16);
    cfg.warmup_steps = 5;
    cfg.total_steps = 100;
    const auto data = prepare_dataset(synth_dataset(6, 9, cfg.synth_vocab, 2, 4), cfg.dither);

    CitrinetModel straight(cfg, 21);
    Trainer a(straight, data, 21);
    a.run(4);
    const std::string path = "acceptance_roundtrip.ckpt";
    save_checkpoint(path, a.checkpoint());
    const std::string first = serialize(a.checkpoint());
    const Checkpoint loaded = load_checkpoint(path);
    std::remove(path.c_str());
    o.require(serialize(loaded) == first, "save -> load -> save changed bytes");

    const auto reference = a.run(10);
    CitrinetModel resumed(cfg, 999);
    Trainer b(resumed, data, 21);
    b.restore(loaded);
    const auto replay = b.run(10);
    for (std::size_t i = 0; i < reference.size(); ++i)
        o.require(reference[i].combined == replay[i].combined && reference[i].lr == replay[i].lr,
                  "resumed step " + std::to_string(reference[i].step) + " differs");
    o.require(parameter_values(straight) == parameter_values(resumed), "resumed parameters differ");
    o.require(serialize(a.checkpoint()) == serialize(b.checkpoint()), "resumed checkpoint differs");
    if (o.ok)
        o.detail = std::to_string(first.size()) + " bytes; 10 resumed steps bit-identical";
    return o;
}

} // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"parameter counts", 5, parameter_counts},
        {"ctc oracle", 60, ctc_oracle},
        {"gradient suite", 600, gradient_suite},
        {"shape and distilling", 30, shape_distilling},
        {"block census", 5, block_census},
        {"decomposition, gates, pure ctc, padding", 60, structural_invariants},
        {"beam search oracle", 60, beam_oracle},
        {"overfit smoke test", 1200, overfit},
        {"ablation matrix", 300, ablation_matrix},
        {"checkpoint round trip", 60, checkpoint_round_trip},
    };
    int failed = 0;
    for (const auto &c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception &e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (out.ok && secs > c.budget_seconds)
            out = {false, "took " + fmt("%.1f", secs) + " s, budget " + fmt("%.0f", c.budget_seconds) + " s"};
        std::printf("%s  %-42s %8.2f s  %s\n", out.ok ? "PASS" : "FAIL", c.name.c_str(), secs, out.detail.c_str());
        std::fflush(stdout);
        failed += out.ok ? 0 : 1;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed;
}
