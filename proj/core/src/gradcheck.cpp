#include "citrinet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "citrinet/error.hpp"
#include "citrinet/random.hpp"
#include "citrinet/training.hpp"

namespace citrinet {

bool GradcheckReport::passed() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const auto &t) { return t.passed; });
}

double GradcheckReport::worst() const {
    double w = 0.0;
    for (const auto &t : tensors)
        w = std::max(w, t.max_rel_err);
    return w;
}

std::vector<std::string> GradcheckReport::failing() const {
    std::vector<std::string> out;
    for (const auto &t : tensors)
        if (!t.passed)
            out.push_back(t.name);
    return out;
}

double grad_rel_err(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradcheckReport check_gradients(const std::function<Tensor()> &loss_fn,
                                const std::vector<std::pair<std::string, Tensor>> &inputs,
                                const GradcheckOptions &opts) {
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss;
        for (const auto &[name, t] : inputs) {
            if (!t.requires_grad())
                throw ContractError("gradcheck input '" + name + "' does not require grad");
            Tensor(t).zero_grad();
        }
        {
            TapeScope scope(tape);
            loss = loss_fn();
        }
        backward(tape, loss);
        for (const auto &[name, t] : inputs)
            analytic.push_back(t.grad());
    }

    Rng rng(opts.seed);
    GradcheckReport report;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tensor t = inputs[i].second;
        const std::size_t n = t.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        if (opts.max_entries > 0 && n > opts.max_entries) {
            for (std::size_t k = 0; k < opts.max_entries; ++k)
                std::swap(idx[k], idx[k + static_cast<std::size_t>(
                                           uniform_int(rng, 0, static_cast<std::int64_t>(n - k) - 1))]);
            idx.resize(opts.max_entries);
            std::sort(idx.begin(), idx.end());
        }
        TensorGradReport r;
        r.name = inputs[i].first;
        auto data = t.mutable_data();
        for (auto k : idx) {
            const double orig = data[k];
            data[k] = orig + opts.step;
            const double up = loss_fn().item();
            data[k] = orig - opts.step;
            const double down = loss_fn().item();
            data[k] = orig;
            const double numeric = (up - down) / (2.0 * opts.step);
            const double a = analytic[i][k];
            r.max_rel_err = std::max(r.max_rel_err, grad_rel_err(a, numeric, opts.floor));
            r.max_abs_err = std::max(r.max_abs_err, std::abs(a - numeric));
            ++r.checked;
        }
        r.passed = r.max_rel_err <= opts.threshold;
        report.tensors.push_back(std::move(r));
    }
    return report;
}

ModelConfig gradcheck_config() {
    ModelConfig c = default_config(Variant::attention);
    c.channels = 16;
    c.total_blocks = 5;
    c.vocab = 8;
    c.epilog_dim = 32;
    c.decoder_dim = 16;
    c.dropout = 0.0;
    c.spec_augment = false;
    c.dither = 0.0;
    c.synth_vocab = 8;
    return c;
}

GradcheckReport gradcheck_model(const ModelConfig &cfg, std::uint64_t seed, const GradcheckOptions &opts) {
    CitrinetModel model(cfg, seed);
    Rng rng(mix_seed(seed, 0x9c));
    const std::vector<std::size_t> lens = {24, 19};
    std::vector<double> feats(lens.size() * kNumMelBins * lens[0], 0.0);
    for (std::size_t b = 0; b < lens.size(); ++b)
        for (std::size_t c = 0; c < kNumMelBins; ++c)
            for (std::size_t t = 0; t < lens[b]; ++t)
                feats[(b * kNumMelBins + c) * lens[0] + t] = standard_normal(rng);
    FeatureBatch batch;
    batch.features = Tensor(Shape{lens.size(), kNumMelBins, lens[0]}, std::move(feats));
    batch.valid_len = lens;
    // encoded lengths are 3, so two distinct tokens always align
    std::vector<std::vector<std::int64_t>> targets;
    for (std::size_t b = 0; b < lens.size(); ++b) {
        const auto a = uniform_int(rng, 0, static_cast<std::int64_t>(cfg.vocab) - 1);
        const auto z = (a + uniform_int(rng, 1, static_cast<std::int64_t>(cfg.vocab) - 1)) %
                       static_cast<std::int64_t>(cfg.vocab);
        targets.push_back({a, z});
    }

    const ForwardContext ctx{true, nullptr};
    auto loss_fn = [&]() { return compute_losses(model, batch, targets, ctx).combined; };
    std::vector<std::pair<std::string, Tensor>> inputs;
    for (const auto &e : model.store().entries())
        if (e.kind == ParameterStore::Kind::parameter)
            inputs.emplace_back(e.name, e.tensor);
    return check_gradients(loss_fn, inputs, opts);
}

} // namespace citrinet
