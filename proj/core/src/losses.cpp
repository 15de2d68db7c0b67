#include "citrinet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "citrinet/error.hpp"
#include "citrinet/ops.hpp"
#include "op_util.hpp"

namespace citrinet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf)
        return b;
    if (b == kNegInf)
        return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Forward-backward lattice over the blank-extended label sequence.
struct CtcLattice {
    std::vector<std::int64_t> labels; // l' = (blank, y1, blank, ..., yN, blank)
    std::vector<double> alpha;        // [T, S], includes emission at t
    std::vector<double> beta;         // [T, S], emissions after t only
    double log_likelihood = kNegInf;
};

CtcLattice run_lattice(const double *lp, std::size_t T, std::size_t C, std::span<const std::int64_t> target,
                       std::int64_t blank, bool with_beta) {
    CtcLattice lat;
    lat.labels.push_back(blank);
    for (auto y : target) {
        if (y < 0 || static_cast<std::size_t>(y) >= C || y == blank)
            throw InputError("CTC target id " + std::to_string(y) + " is not a non-blank class");
        lat.labels.push_back(y);
        lat.labels.push_back(blank);
    }
    const std::size_t S = lat.labels.size();
    if (T == 0)
        return lat;
    auto emit = [&](std::size_t t, std::size_t s) { return lp[t * C + static_cast<std::size_t>(lat.labels[s])]; };
    auto can_skip = [&](std::size_t s) { return s >= 2 && lat.labels[s] != blank && lat.labels[s] != lat.labels[s - 2]; };

    auto &alpha = lat.alpha;
    alpha.assign(T * S, kNegInf);
    alpha[0] = emit(0, 0);
    if (S > 1)
        alpha[1] = emit(0, 1);
    for (std::size_t t = 1; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s) {
            double a = alpha[(t - 1) * S + s];
            if (s >= 1)
                a = log_add(a, alpha[(t - 1) * S + s - 1]);
            if (can_skip(s))
                a = log_add(a, alpha[(t - 1) * S + s - 2]);
            if (a != kNegInf)
                alpha[t * S + s] = a + emit(t, s);
        }
    lat.log_likelihood = alpha[(T - 1) * S + S - 1];
    if (S > 1)
        lat.log_likelihood = log_add(lat.log_likelihood, alpha[(T - 1) * S + S - 2]);

    if (with_beta) {
        auto &beta = lat.beta;
        beta.assign(T * S, kNegInf);
        beta[(T - 1) * S + S - 1] = 0.0;
        if (S > 1)
            beta[(T - 1) * S + S - 2] = 0.0;
        for (std::size_t t = T - 1; t-- > 0;)
            for (std::size_t s = 0; s < S; ++s) {
                double b = kNegInf;
                for (std::size_t next = s; next <= s + 2 && next < S; ++next) {
                    if (next == s + 2 && !can_skip(next))
                        continue;
                    const double nb = beta[(t + 1) * S + next];
                    if (nb != kNegInf)
                        b = log_add(b, nb + emit(t + 1, next));
                }
                beta[t * S + s] = b;
            }
    }
    return lat;
}

} // namespace

LossWeights loss_weights(const ModelConfig &cfg) { return {cfg.lambda1, cfg.lambda2, cfg.delta}; }

double ctc_neg_log_likelihood(std::span<const double> log_probs, std::size_t frames, std::size_t classes,
                              std::span<const std::int64_t> target, std::int64_t blank) {
    if (log_probs.size() != frames * classes)
        throw DimensionError("CTC log_probs size does not match [T, C]");
    if (blank < 0 || static_cast<std::size_t>(blank) >= classes)
        throw InputError("CTC blank id outside the class range");
    const auto lat = run_lattice(log_probs.data(), frames, classes, target, blank, false);
    return -lat.log_likelihood;
}

bool CtcLoss::any_infeasible() const { return std::find(infeasible.begin(), infeasible.end(), true) != infeasible.end(); }

CtcLoss ctc_loss(const Tensor &log_probs, std::span<const std::size_t> input_len,
                 std::span<const std::vector<std::int64_t>> targets, std::int64_t blank) {
    if (log_probs.rank() != 3)
        throw DimensionError("CTC expects log_probs [B, T, C], got " + shape_str(log_probs.shape()));
    const std::size_t B = log_probs.dim(0), T = log_probs.dim(1), C = log_probs.dim(2);
    if (input_len.size() != B || targets.size() != B)
        throw DimensionError("CTC lengths/targets do not match batch size " + std::to_string(B));
    if (B == 0)
        throw InputError("CTC loss over an empty batch");
    if (blank < 0 || static_cast<std::size_t>(blank) >= C)
        throw InputError("CTC blank id outside the class range");

    const auto lp = log_probs.data();
    CtcLoss out;
    out.per_item.resize(B);
    out.infeasible.resize(B);
    std::vector<CtcLattice> lattices;
    lattices.reserve(B);
    const bool track = detail::tracking({&log_probs});
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        if (input_len[b] > T)
            throw InputError("CTC input length exceeds the frame axis");
        lattices.push_back(run_lattice(lp.data() + b * T * C, input_len[b], C, targets[b], blank, track));
        const double ll = lattices.back().log_likelihood;
        out.infeasible[b] = ll == kNegInf;
        out.per_item[b] = -ll;
        total += out.per_item[b];
    }
    out.loss = detail::make_result({}, {total / static_cast<double>(B)}, track);
    if (track) {
        auto in = log_probs.node();
        auto infeasible = out.infeasible;
        detail::record(out.loss, [in, lattices = std::move(lattices), infeasible, B, T, C](const detail::Node &o) {
            auto *g = detail::grad_of(in);
            if (!g)
                return;
            const double scale = o.grad[0] / static_cast<double>(B);
            for (std::size_t b = 0; b < B; ++b) {
                if (infeasible[b])
                    continue;
                const auto &lat = lattices[b];
                const std::size_t S = lat.labels.size();
                const std::size_t len = lat.alpha.size() / S;
                for (std::size_t t = 0; t < len; ++t)
                    for (std::size_t s = 0; s < S; ++s) {
                        const double ab = lat.alpha[t * S + s] + lat.beta[t * S + s];
                        if (ab == kNegInf)
                            continue;
                        const auto k = static_cast<std::size_t>(lat.labels[s]);
                        (*g)[(b * T + t) * C + k] -= scale * std::exp(ab - lat.log_likelihood);
                    }
            }
        });
    }
    return out;
}

Tensor att_kl_loss(const Tensor &logits, const TokenBatch &reference, double delta, std::int64_t pad_class) {
    if (logits.rank() != 3 || logits.dim(0) != reference.batch || logits.dim(1) != reference.max_len)
        throw DimensionError("attention loss logits " + shape_str(logits.shape()) + " do not match references [" +
                             std::to_string(reference.batch) + ", " + std::to_string(reference.max_len) + "]");
    const std::size_t B = logits.dim(0), L = logits.dim(1), K = logits.dim(2);
    const bool has_pad = pad_class >= 0 && static_cast<std::size_t>(pad_class) < K;
    const std::size_t effective = has_pad ? K - 1 : K;
    if (effective < 2)
        throw InputError("attention loss needs at least two predictable classes");
    const double off = delta / static_cast<double>(effective - 1);
    const auto pad = static_cast<std::size_t>(has_pad ? pad_class : -1);

    std::size_t items = 0;
    for (std::size_t b = 0; b < B; ++b)
        items += reference.valid_len[b] > 0 ? 1 : 0;
    if (items == 0)
        throw InputError("attention loss over references with no valid positions");

    const auto z = logits.data();
    // probabilities over non-pad classes, kept for the backward pass
    std::vector<double> prob(B * L * K, 0.0);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t len = reference.valid_len[b];
        if (len == 0)
            continue;
        double item = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t row = (b * L + i) * K;
            const auto ref = reference.at(b, i);
            if (ref < 0 || static_cast<std::size_t>(ref) >= K || (has_pad && static_cast<std::size_t>(ref) == pad))
                throw InputError("attention reference id " + std::to_string(ref) + " is not a predictable class");
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k)
                if (k != pad)
                    mx = std::max(mx, z[row + k]);
            double se = 0.0;
            for (std::size_t k = 0; k < K; ++k)
                if (k != pad)
                    se += std::exp(z[row + k] - mx);
            const double lse = mx + std::log(se);
            for (std::size_t k = 0; k < K; ++k) {
                if (k == pad)
                    continue;
                const double logp = z[row + k] - lse;
                prob[row + k] = std::exp(logp);
                const double q = k == static_cast<std::size_t>(ref) ? 1.0 - delta : off;
                if (q > 0.0)
                    item += q * (std::log(q) - logp);
            }
        }
        total += item / static_cast<double>(len);
    }
    const bool track = detail::tracking({&logits});
    Tensor out = detail::make_result({}, {total / static_cast<double>(items)}, track);
    if (track) {
        auto in = logits.node();
        detail::record(out, [in, prob = std::move(prob), reference, delta, off, pad, items, B, L,
                             K](const detail::Node &o) {
            auto *g = detail::grad_of(in);
            if (!g)
                return;
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t len = reference.valid_len[b];
                if (len == 0)
                    continue;
                const double w = o.grad[0] / (static_cast<double>(items) * static_cast<double>(len));
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t row = (b * L + i) * K;
                    const auto ref = static_cast<std::size_t>(reference.at(b, i));
                    for (std::size_t k = 0; k < K; ++k) {
                        if (k == pad)
                            continue;
                        const double q = k == ref ? 1.0 - delta : off;
                        (*g)[row + k] += w * (prob[row + k] - q);
                    }
                }
            }
        });
    }
    return out;
}

// Zero-weight terms are dropped rather than multiplied, so an infinite
// component with weight 0 cannot turn the sum into NaN.
double combined_loss(double ctc, double l2r, double r2l, const LossWeights &w) {
    if (w.lambda1 == 1.0)
        return ctc;
    const double att = w.lambda2 == 1.0 ? l2r : w.lambda2 == 0.0 ? r2l : w.lambda2 * l2r + (1.0 - w.lambda2) * r2l;
    if (w.lambda1 == 0.0)
        return att;
    return w.lambda1 * ctc + (1.0 - w.lambda1) * (w.lambda2 * l2r + (1.0 - w.lambda2) * r2l);
}

Tensor combined_loss(const Tensor &ctc, const std::optional<Tensor> &l2r, const std::optional<Tensor> &r2l,
                     const LossWeights &w) {
    if (!l2r && !r2l)
        return ctc;
    if (!l2r || !r2l)
        throw ContractError("combined loss needs both attention directions or neither");
    if (w.lambda1 == 1.0)
        return ctc;
    const Tensor att = w.lambda2 == 1.0   ? *l2r
                       : w.lambda2 == 0.0 ? *r2l
                                          : add(mul_scalar(*l2r, w.lambda2), mul_scalar(*r2l, 1.0 - w.lambda2));
    if (w.lambda1 == 0.0)
        return att;
    return add(mul_scalar(ctc, w.lambda1), mul_scalar(att, 1.0 - w.lambda1));
}

} // namespace citrinet
