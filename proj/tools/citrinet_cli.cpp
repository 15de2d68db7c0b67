#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "citrinet/checkpoint.hpp"
#include "citrinet/config.hpp"
#include "citrinet/decoding.hpp"
#include "citrinet/error.hpp"
#include "citrinet/gradcheck.hpp"
#include "citrinet/model.hpp"
#include "citrinet/synth.hpp"
#include "citrinet/training.hpp"

using namespace citrinet;

namespace {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    std::vector<std::string> overrides; // key=value
};

void add_common(CLI::App *cmd, CommonArgs &args) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--seed", args.seed, "random seed");
    cmd->add_option("--set", args.overrides, "override a config key (key=value), repeatable");
}

ModelConfig resolve_config(const CommonArgs &args, const ModelConfig &fallback) {
    ModelConfig cfg = args.config_path.empty() ? fallback : load_config(args.config_path);
    for (const auto &kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    validate(cfg);
    return cfg;
}

std::vector<SynthSample> read_manifest_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open manifest '" + path + "'");
    return read_manifest(in);
}

std::string join(const std::vector<std::int64_t> &ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i)
        s += (i ? " " : "") + std::to_string(ids[i]);
    return s;
}

// Model and normalized dataset rebuilt from a checkpoint.
struct Restored {
    Checkpoint ckpt;
    std::unique_ptr<CitrinetModel> model;
    Dataset data;
};

Restored restore_for_decoding(const std::string &ckpt_path, const std::string &manifest) {
    Restored r;
    r.ckpt = load_checkpoint(ckpt_path);
    r.model = std::make_unique<CitrinetModel>(r.ckpt.config, 0);
    restore_model(r.ckpt, *r.model);
    const auto samples = read_manifest_file(manifest);
    r.data = prepare_dataset(samples, 0.0, checkpoint_cmvn(r.ckpt));
    return r;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Citrinet speech recognizer: synthetic data, training, decoding and model inspection"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, decode_args, eval_args, grad_args, params_args, sched_args;

    auto *synth = app.add_subcommand("synth", "generate a synthetic tone corpus manifest");
    add_common(synth, synth_args);
    std::string synth_out = "synth.tsv";
    synth->add_option("--out", synth_out, "manifest output path");

    auto *train = app.add_subcommand("train", "train on a manifest");
    add_common(train, train_args);
    std::string train_manifest, train_metrics, train_ckpt, train_resume;
    std::optional<std::size_t> train_steps;
    train->add_option("--manifest", train_manifest, "training manifest")->required();
    train->add_option("--steps", train_steps, "optimizer steps (default: total_steps)");
    train->add_option("--metrics", train_metrics, "metrics CSV path");
    train->add_option("--checkpoint", train_ckpt, "checkpoint output path");
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    auto *decode = app.add_subcommand("decode", "decode a manifest with a checkpoint");
    add_common(decode, decode_args);
    std::string decode_ckpt, decode_manifest;
    decode->add_option("--checkpoint", decode_ckpt, "checkpoint path")->required();
    decode->add_option("--manifest", decode_manifest, "manifest to decode")->required();

    auto *eval = app.add_subcommand("eval", "report CER of a checkpoint on a manifest");
    add_common(eval, eval_args);
    std::string eval_ckpt, eval_manifest;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--manifest", eval_manifest, "manifest to score")->required();

    auto *grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
    add_common(grad, grad_args);
    std::size_t grad_entries = 16;
    grad->add_option("--entries", grad_entries, "sampled entries per tensor (0 = all)");

    auto *params = app.add_subcommand("params", "parameter census");
    add_common(params, params_args);
    std::string params_variant;
    std::optional<std::size_t> params_channels, params_blocks;
    params->add_option("--variant", params_variant, "C or Att-C");
    params->add_option("--channels", params_channels, "channel width");
    params->add_option("--total-blocks", params_blocks, "number of encoder blocks");

    auto *sched = app.add_subcommand("schedule", "print the encoder kernel layout");
    add_common(sched, sched_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            const auto cfg = resolve_config(synth_args, ModelConfig{});
            const auto samples = synth_dataset(cfg.synth_samples, synth_args.seed, cfg.synth_vocab, cfg.synth_min_len,
                                               cfg.synth_max_len);
            std::ofstream out(synth_out);
            if (!out)
                throw InputError("cannot write '" + synth_out + "'");
            write_manifest(out, samples);
            std::printf("wrote %zu samples to %s\n", samples.size(), synth_out.c_str());
        } else if (*train) {
            const auto samples = read_manifest_file(train_manifest);
            std::optional<Checkpoint> resume;
            if (!train_resume.empty())
                resume = load_checkpoint(train_resume);
            const auto cfg = resume ? resume->config : resolve_config(train_args, ModelConfig{});
            CitrinetModel model(cfg, train_args.seed);
            Trainer trainer(model, prepare_dataset(samples, cfg.dither, resume ? checkpoint_cmvn(*resume) : std::nullopt),
                            train_args.seed);
            if (resume)
                trainer.restore(*resume);
            std::ofstream metrics;
            if (!train_metrics.empty()) {
                metrics.open(train_metrics, resume ? std::ios::app : std::ios::trunc);
                if (!metrics)
                    throw InputError("cannot write '" + train_metrics + "'");
            }
            const std::size_t steps = train_steps.value_or(cfg.total_steps - std::min(cfg.total_steps, trainer.step_count()));
            const auto log = trainer.run(steps, metrics.is_open() ? &metrics : nullptr, train_ckpt);
            if (!train_ckpt.empty())
                save_checkpoint(train_ckpt, trainer.checkpoint());
            if (!log.empty())
                std::printf("step %zu  lr %.6g  combined %.6g\n", log.back().step, log.back().lr, log.back().combined);
        } else if (*decode) {
            auto r = restore_for_decoding(decode_ckpt, decode_manifest);
            const auto &cfg = r.model->config();
            for (std::size_t i = 0; i < r.data.items.size(); ++i) {
                const std::size_t idx[] = {i};
                const auto batch = collate(r.data, idx);
                const auto hyp = decode_batch(*r.model, batch, cfg.beam_width, {cfg.w_ctc, cfg.lambda2});
                std::printf("%zu\t%s\n", i, join(hyp.front()).c_str());
            }
        } else if (*eval) {
            auto r = restore_for_decoding(eval_ckpt, eval_manifest);
            const auto &cfg = r.model->config();
            const double value = evaluate_cer(*r.model, r.data, cfg.beam_width, {cfg.w_ctc, cfg.lambda2},
                                              cfg.max_frames_per_batch);
            std::printf("CER %.6f over %zu utterances\n", value, r.data.items.size());
        } else if (*grad) {
            const auto cfg = resolve_config(grad_args, gradcheck_config());
            GradcheckOptions opts;
            opts.max_entries = grad_entries;
            opts.seed = grad_args.seed;
            const auto report = gradcheck_model(cfg, grad_args.seed, opts);
            for (const auto &t : report.tensors)
                std::printf("%-60s %6zu  max rel err %.3e  %s\n", t.name.c_str(), t.checked, t.max_rel_err,
                            t.passed ? "ok" : "FAIL");
            std::printf("worst %.3e over %zu tensors: %s\n", report.worst(), report.tensors.size(),
                        report.passed() ? "PASS" : "FAIL");
            if (!report.passed()) {
                for (const auto &name : report.failing())
                    std::fprintf(stderr, "gradient mismatch: %s\n", name.c_str());
                return 1;
            }
        } else if (*params) {
            ModelConfig base{};
            if (!params_variant.empty()) {
                set_config_value(base, "variant", params_variant);
            }
            ModelConfig cfg = params_args.config_path.empty() ? base : load_config(params_args.config_path);
            if (!params_variant.empty() && !params_args.config_path.empty())
                throw ConfigError("use either --config or --variant");
            if (params_channels)
                cfg.channels = *params_channels;
            if (params_blocks)
                cfg.total_blocks = *params_blocks;
            CommonArgs rest = params_args;
            rest.config_path.clear();
            cfg = resolve_config(rest, cfg);
            std::size_t total = 0;
            for (const auto &line : census(cfg)) {
                std::printf("%-36s %12zu\n", line.group.c_str(), line.params);
                total += line.params;
            }
            std::printf("%-36s %12zu  (%.2f M)\n", "total", total, static_cast<double>(total) / 1e6);
        } else if (*sched) {
            const auto cfg = resolve_config(sched_args, ModelConfig{});
            for (const auto &b : kernel_schedule(cfg))
                std::printf("%-14s K=%-3zu stride=%zu repeat=%zu %zu->%zu%s%s\n", b.name.c_str(), b.spec.kernel,
                            b.spec.stride, b.spec.repeat, b.spec.in_channels, b.spec.out_channels,
                            b.spec.has_residual ? " res" : "", b.spec.attention_enhanced ? " ffn+mhsa" : "");
        }
    } catch (const Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
