#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "citrinet/model.hpp"
#include "citrinet/tensor.hpp"

namespace citrinet {

struct LossWeights {
    double lambda1 = 0.3; // CTC share
    double lambda2 = 0.7; // l2r share of the attention part
    double delta = 0.1;   // label smoothing
};

LossWeights loss_weights(const ModelConfig &cfg);

// -log P(target | log_probs) for one utterance, log_probs row-major [T, C].
// Returns +infinity when no alignment of length T exists.
double ctc_neg_log_likelihood(std::span<const double> log_probs, std::size_t frames, std::size_t classes,
                              std::span<const std::int64_t> target, std::int64_t blank);

struct CtcLoss {
    Tensor loss;                   // scalar: mean over the batch
    std::vector<double> per_item;  // negative log-likelihood per utterance
    std::vector<bool> infeasible;  // target cannot be aligned in input_len frames
    bool any_infeasible() const;
};

// log_probs [B, T, C] (already normalized), frames t >= input_len[b] ignored.
// Infeasible items contribute +infinity to the loss and no gradient.
CtcLoss ctc_loss(const Tensor &log_probs, std::span<const std::size_t> input_len,
                 std::span<const std::vector<std::int64_t>> targets, std::int64_t blank);

// KL(smoothed reference || softmax(logits)) over the non-pad classes.
// logits [B, L, K]; the reference puts 1 - delta on the true class and
// delta / (K' - 1) on the other K' - 1 non-pad classes. Mean over valid
// positions of each item, then over items.
Tensor att_kl_loss(const Tensor &logits, const TokenBatch &reference, double delta, std::int64_t pad_class);

// lambda1 * ctc + (1 - lambda1) * (lambda2 * l2r + (1 - lambda2) * r2l)
double combined_loss(double ctc, double l2r, double r2l, const LossWeights &w);
// Without attention terms the result is ctc itself.
Tensor combined_loss(const Tensor &ctc, const std::optional<Tensor> &l2r, const std::optional<Tensor> &r2l,
                     const LossWeights &w);

} // namespace citrinet
