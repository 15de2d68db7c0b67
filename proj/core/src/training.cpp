#include "citrinet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "citrinet/error.hpp"

namespace citrinet {

Dataset prepare_dataset(std::span<const SynthSample> samples, double dither, const std::optional<CmvnStats> &cmvn) {
    if (samples.empty())
        throw InputError("empty dataset");
    Dataset d;
    std::vector<Tensor> raw;
    raw.reserve(samples.size());
    for (const auto &s : samples)
        raw.push_back(fbank(s.wave, dither, mix_seed(s.seed, 0xd17e)));
    d.cmvn = cmvn ? *cmvn : cmvn_fit(raw);
    for (std::size_t i = 0; i < samples.size(); ++i)
        d.items.push_back({cmvn_apply(raw[i], d.cmvn), samples[i].tokens});
    return d;
}

std::vector<std::vector<std::size_t>> make_buckets(const Dataset &data, std::size_t max_frames) {
    std::vector<std::size_t> order(data.items.size());
    std::iota(order.begin(), order.end(), 0);
    auto frames = [&](std::size_t i) { return data.items[i].features.dim(1); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frames(a) < frames(b); });
    std::vector<std::vector<std::size_t>> buckets;
    std::vector<std::size_t> cur;
    for (auto i : order) {
        // sorted ascending, so frames(i) is the longest once added
        if (!cur.empty() && (cur.size() + 1) * frames(i) > max_frames) {
            buckets.push_back(std::move(cur));
            cur.clear();
        }
        cur.push_back(i);
    }
    if (!cur.empty())
        buckets.push_back(std::move(cur));
    return buckets;
}

FeatureBatch collate(const Dataset &data, std::span<const std::size_t> indices,
                     std::vector<std::vector<std::int64_t>> *targets) {
    std::vector<Tensor> feats;
    for (auto i : indices) {
        feats.push_back(data.items.at(i).features);
        if (targets)
            targets->push_back(data.items[i].tokens);
    }
    return make_feature_batch(feats);
}

LossBreakdown compute_losses(CitrinetModel &model, const FeatureBatch &batch,
                             std::span<const std::vector<std::int64_t>> targets, const ForwardContext &ctx) {
    const Sequence enc = model.encode(batch, ctx);
    const auto ctc = ctc_loss(model.ctc_log_probs(enc), enc.valid_len, targets, model.vocab().blank());
    LossBreakdown out;
    out.ctc = ctc.loss.item();
    out.ctc_infeasible = ctc.any_infeasible();
    const auto w = loss_weights(model.config());
    const BiDecoder *decoder = model.decoder();
    if (!decoder) {
        out.combined = ctc.loss;
        return out;
    }
    const Tensor memory = decoder->memory(enc.x);
    std::optional<Tensor> att[2];
    for (const auto dir : {Direction::l2r, Direction::r2l}) {
        const auto io = make_decoder_io(targets, model.vocab(), dir);
        const Tensor logits = decoder->forward(memory, enc.valid_len, io.input, dir, ctx);
        att[dir == Direction::l2r ? 0 : 1] = att_kl_loss(logits, io.reference, w.delta, model.vocab().decoder_pad());
    }
    out.att_l2r = att[0]->item();
    out.att_r2l = att[1]->item();
    out.combined = combined_loss(ctc.loss, att[0], att[1], w);
    return out;
}

void write_metrics_header(std::ostream &os) { os << "step,lr,ctc,att_l2r,att_r2l,combined\n"; }

void write_metrics_row(std::ostream &os, const StepMetrics &m) {
    auto real = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    os << m.step << ',' << real(m.lr) << ',' << real(m.ctc) << ',' << (m.att_l2r ? real(*m.att_l2r) : "") << ','
       << (m.att_r2l ? real(*m.att_r2l) : "") << ',' << real(m.combined) << '\n';
}

namespace {

NovogradOptions novograd_options(const ModelConfig &cfg) {
    NovogradOptions o;
    o.beta1 = cfg.beta1;
    o.beta2 = cfg.beta2;
    o.weight_decay = cfg.weight_decay;
    return o;
}

LrSchedule lr_schedule(const ModelConfig &cfg) {
    return {cfg.lr_max, cfg.lr_min, cfg.warmup_steps, cfg.total_steps};
}

} // namespace

Trainer::Trainer(CitrinetModel &model, Dataset data, std::uint64_t seed)
    : model_(model), data_(std::move(data)), seed_(seed),
      buckets_(make_buckets(data_, model.config().max_frames_per_batch)),
      opt_(model.store().parameters(), novograd_options(model.config())), rng_(mix_seed(seed, 0xd20b)) {
    if (data_.items.empty())
        throw InputError("trainer needs a non-empty dataset");
}

// Batch order is reshuffled once per pass over the buckets, seeded by the
// pass index, so the schedule depends on the step number alone.
std::vector<std::size_t> Trainer::batch_for_step(std::size_t step) const {
    const std::size_t nb = buckets_.size();
    const std::size_t epoch = step / nb;
    std::vector<std::size_t> order(nb);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(mix_seed(seed_, 0xe90c + epoch));
    for (std::size_t i = nb; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(shuffle, 0, static_cast<std::int64_t>(i) - 1))]);
    return buckets_[order[step % nb]];
}

StepMetrics Trainer::step() {
    const auto &cfg = model_.config();
    const auto indices = batch_for_step(step_);
    std::vector<std::vector<std::int64_t>> targets;
    std::vector<Tensor> feats;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto &u = data_.items[indices[k]];
        feats.push_back(cfg.spec_augment ? spec_augment(u.features, mix_seed(mix_seed(seed_, step_), indices[k]))
                                         : u.features);
        targets.push_back(u.tokens);
    }
    const FeatureBatch batch = make_feature_batch(feats);

    // Batch-norm running statistics are restored if the step diverges.
    std::vector<std::vector<double>> buffers;
    for (const auto &e : model_.store().entries())
        if (e.kind == ParameterStore::Kind::buffer)
            buffers.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
    const Rng rng_before = rng_;

    Tape tape;
    LossBreakdown losses;
    {
        TapeScope scope(tape);
        losses = compute_losses(model_, batch, targets, ForwardContext{true, &rng_});
    }
    const double total = losses.combined.item();
    if (!std::isfinite(total)) {
        std::size_t b = 0;
        for (const auto &e : model_.store().entries())
            if (e.kind == ParameterStore::Kind::buffer) {
                auto dst = Tensor(e.tensor).mutable_data();
                std::copy(buffers[b].begin(), buffers[b].end(), dst.begin());
                ++b;
            }
        rng_ = rng_before;
        throw DivergenceError("non-finite loss at step " + std::to_string(step_ + 1) +
                              (losses.ctc_infeasible ? " (a CTC target is longer than its encoded input)" : ""));
    }
    opt_.zero_grad();
    backward(tape, losses.combined);
    if (cfg.grad_clip > 0.0)
        clip_grad_norm(opt_.params(), cfg.grad_clip);
    StepMetrics m;
    m.step = step_ + 1;
    m.lr = cosine_lr(m.step, lr_schedule(cfg));
    opt_.step(m.lr);
    ++step_;
    m.ctc = losses.ctc;
    m.att_l2r = losses.att_l2r;
    m.att_r2l = losses.att_r2l;
    m.combined = total;
    return m;
}

std::vector<StepMetrics> Trainer::run(std::size_t steps, std::ostream *csv, const std::string &checkpoint_path) {
    const std::size_t every = model_.config().checkpoint_every;
    Checkpoint last_good = checkpoint();
    std::vector<StepMetrics> out;
    if (csv && step_ == 0)
        write_metrics_header(*csv);
    for (std::size_t i = 0; i < steps; ++i) {
        try {
            out.push_back(step());
        } catch (const DivergenceError &) {
            if (!checkpoint_path.empty())
                save_checkpoint(checkpoint_path, last_good);
            throw;
        }
        if (csv)
            write_metrics_row(*csv, out.back());
        if (every > 0 && step_ % every == 0) {
            last_good = checkpoint();
            if (!checkpoint_path.empty())
                save_checkpoint(checkpoint_path, last_good);
        }
    }
    return out;
}

Checkpoint Trainer::checkpoint() const { return capture_checkpoint(model_, &opt_, &rng_, step_, &data_.cmvn); }

void Trainer::restore(const Checkpoint &ckpt) {
    if (!(ckpt.config == model_.config()))
        throw InputError("checkpoint config does not match the model");
    restore_model(ckpt, model_);
    if (ckpt.optimizer)
        opt_.set_state(*ckpt.optimizer);
    if (!ckpt.rng_state.empty())
        set_rng_state(rng_, ckpt.rng_state);
    step_ = ckpt.step;
}

double evaluate_cer(CitrinetModel &model, const Dataset &data, std::size_t beam_width,
                    const RescoreWeights &weights, std::size_t max_frames) {
    std::vector<std::vector<std::int64_t>> hyps, refs;
    for (const auto &bucket : make_buckets(data, max_frames)) {
        std::vector<std::vector<std::int64_t>> targets;
        const auto batch = collate(data, bucket, &targets);
        auto decoded = decode_batch(model, batch, beam_width, weights);
        for (std::size_t k = 0; k < bucket.size(); ++k) {
            hyps.push_back(std::move(decoded[k]));
            refs.push_back(std::move(targets[k]));
        }
    }
    return corpus_cer(hyps, refs);
}

} // namespace citrinet
