#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "citrinet/checkpoint.hpp"
#include "citrinet/decoding.hpp"
#include "citrinet/losses.hpp"
#include "citrinet/model.hpp"
#include "citrinet/optim.hpp"
#include "citrinet/synth.hpp"

namespace citrinet {

struct Utterance {
    Tensor features; // [80, T], normalized
    std::vector<std::int64_t> tokens;
};

struct Dataset {
    std::vector<Utterance> items;
    CmvnStats cmvn;
};

// FBank of every sample (dither seeded per sample), then CMVN. Fits the
// statistics unless `cmvn` is given.
Dataset prepare_dataset(std::span<const SynthSample> samples, double dither,
                        const std::optional<CmvnStats> &cmvn = std::nullopt);

// Length-sorted buckets: consecutive utterances whose padded size
// (count x longest) stays within max_frames. Never empty buckets.
std::vector<std::vector<std::size_t>> make_buckets(const Dataset &data, std::size_t max_frames);

FeatureBatch collate(const Dataset &data, std::span<const std::size_t> indices,
                     std::vector<std::vector<std::int64_t>> *targets = nullptr);

struct LossBreakdown {
    Tensor combined;
    double ctc = 0.0;
    std::optional<double> att_l2r;
    std::optional<double> att_r2l;
    bool ctc_infeasible = false;
};

LossBreakdown compute_losses(CitrinetModel &model, const FeatureBatch &batch,
                             std::span<const std::vector<std::int64_t>> targets, const ForwardContext &ctx);

struct StepMetrics {
    std::size_t step = 0; // 1-based optimizer step
    double lr = 0.0;
    double ctc = 0.0;
    std::optional<double> att_l2r;
    std::optional<double> att_r2l;
    double combined = 0.0;
};

void write_metrics_header(std::ostream &os);
void write_metrics_row(std::ostream &os, const StepMetrics &m);

class Trainer {
  public:
    Trainer(CitrinetModel &model, Dataset data, std::uint64_t seed);

    // One optimizer step; throws DivergenceError on a non-finite loss,
    // leaving parameters untouched.
    StepMetrics step();

    // Runs `steps` steps, logging to csv and checkpointing every
    // config.checkpoint_every steps to checkpoint_path (when both are set).
    // On divergence the last good state is written to checkpoint_path before
    // the error propagates.
    std::vector<StepMetrics> run(std::size_t steps, std::ostream *csv = nullptr,
                                 const std::string &checkpoint_path = {});

    Checkpoint checkpoint() const;
    void restore(const Checkpoint &ckpt);

    std::size_t step_count() const { return step_; }
    const Dataset &data() const { return data_; }
    Novograd &optimizer() { return opt_; }
    CitrinetModel &model() { return model_; }

  private:
    std::vector<std::size_t> batch_for_step(std::size_t step) const;

    CitrinetModel &model_;
    Dataset data_;
    std::uint64_t seed_;
    std::vector<std::vector<std::size_t>> buckets_;
    Novograd opt_;
    Rng rng_;
    std::size_t step_ = 0;
};

// Corpus CER of decoding every utterance of `data`.
double evaluate_cer(CitrinetModel &model, const Dataset &data, std::size_t beam_width,
                    const RescoreWeights &weights, std::size_t max_frames = 4000);

} // namespace citrinet
