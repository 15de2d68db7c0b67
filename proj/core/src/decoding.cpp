#include "citrinet/decoding.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "citrinet/error.hpp"

namespace citrinet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool better(const BeamHypothesis &a, double sa, const BeamHypothesis &b, double sb) {
    if (sa != sb)
        return sa > sb;
    if (a.prefix.size() != b.prefix.size())
        return a.prefix.size() < b.prefix.size();
    return a.prefix < b.prefix;
}

// CTC forward recursion over the whole utterance for one label sequence:
// total log mass of paths ending in blank and ending in the last label.
std::pair<double, double> exact_prefix_mass(std::span<const double> log_probs, std::size_t frames,
                                            std::size_t classes, const std::vector<std::int64_t> &labels,
                                            std::int64_t blank) {
    const std::size_t S = 2 * labels.size() + 1;
    auto symbol = [&](std::size_t s) { return s % 2 == 0 ? blank : labels[s / 2]; };
    std::vector<double> alpha(S, kNegInf), next(S);
    alpha[0] = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
        const auto row = log_probs.subspan(t * classes, classes);
        for (std::size_t s = 0; s < S; ++s) {
            double a = alpha[s];
            if (s >= 1)
                a = log_add_exp(a, alpha[s - 1]);
            if (s >= 2 && symbol(s) != blank && symbol(s) != symbol(s - 2))
                a = log_add_exp(a, alpha[s - 2]);
            next[s] = a == kNegInf ? kNegInf : a + row[static_cast<std::size_t>(symbol(s))];
        }
        std::swap(alpha, next);
    }
    return {alpha[S - 1], S > 1 ? alpha[S - 2] : kNegInf};
}

} // namespace

double log_add_exp(double a, double b) {
    if (a == kNegInf)
        return b;
    if (b == kNegInf)
        return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

std::vector<std::int64_t> ctc_greedy_decode(std::span<const double> log_probs, std::size_t frames,
                                            std::size_t classes, std::int64_t blank) {
    if (log_probs.size() < frames * classes)
        throw DimensionError("greedy decode: log_probs shorter than [T, C]");
    std::vector<std::int64_t> out;
    std::int64_t prev = -1;
    for (std::size_t t = 0; t < frames; ++t) {
        const auto row = log_probs.subspan(t * classes, classes);
        const auto best = static_cast<std::int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best != blank && best != prev)
            out.push_back(best);
        prev = best;
    }
    return out;
}

std::vector<BeamHypothesis> ctc_prefix_beam_search(std::span<const double> log_probs, std::size_t frames,
                                                   std::size_t classes, std::size_t beam_width, std::int64_t blank) {
    if (beam_width == 0)
        throw ConfigError("beam width must be positive");
    if (log_probs.size() < frames * classes)
        throw DimensionError("beam search: log_probs shorter than [T, C]");
    if (blank < 0 || static_cast<std::size_t>(blank) >= classes)
        throw InputError("beam search: blank id outside the class range");

    using Scores = std::pair<double, double>; // (blank-ending, label-ending)
    std::map<std::vector<std::int64_t>, Scores> beams{{{}, {0.0, kNegInf}}};
    std::vector<std::size_t> order(classes);
    const std::size_t keep = std::min(beam_width, classes);

    for (std::size_t t = 0; t < frames; ++t) {
        const auto row = log_probs.subspan(t * classes, classes);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });

        std::map<std::vector<std::int64_t>, Scores> next;
        auto slot = [&](const std::vector<std::int64_t> &p) -> Scores & {
            return next.try_emplace(p, kNegInf, kNegInf).first->second;
        };
        for (const auto &[prefix, sc] : beams) {
            const auto [pb, pnb] = sc;
            for (std::size_t r = 0; r < keep; ++r) {
                const auto c = static_cast<std::int64_t>(order[r]);
                const double lp = row[order[r]];
                if (c == blank) {
                    auto &s = slot(prefix);
                    s.first = log_add_exp(s.first, log_add_exp(pb, pnb) + lp);
                    continue;
                }
                auto extended = prefix;
                extended.push_back(c);
                if (!prefix.empty() && prefix.back() == c) {
                    auto &same = slot(prefix);
                    same.second = log_add_exp(same.second, pnb + lp);
                    auto &ext = slot(extended);
                    ext.second = log_add_exp(ext.second, pb + lp);
                } else {
                    auto &ext = slot(extended);
                    ext.second = log_add_exp(ext.second, log_add_exp(pb, pnb) + lp);
                }
            }
        }

        std::vector<BeamHypothesis> ranked;
        ranked.reserve(next.size());
        // unreachable prefixes (e.g. a repeat with no blank between) carry no mass
        for (auto &[prefix, sc] : next)
            if (log_add_exp(sc.first, sc.second) > kNegInf)
                ranked.push_back({prefix, sc.first, sc.second, std::nullopt});
        std::stable_sort(ranked.begin(), ranked.end(), [](const BeamHypothesis &a, const BeamHypothesis &b) {
            return better(a, a.score(), b, b.score());
        });
        if (ranked.size() > beam_width)
            ranked.resize(beam_width);
        beams.clear();
        for (auto &h : ranked)
            beams.emplace(std::move(h.prefix), Scores{h.log_p_blank, h.log_p_nonblank});
    }

    // Pruning drops the mass of discarded paths, so survivors are rescored
    // exactly and every reported score is the true log-probability of its
    // label sequence.
    std::vector<BeamHypothesis> out;
    for (const auto &[prefix, sc] : beams) {
        const auto [pb, pnb] = exact_prefix_mass(log_probs, frames, classes, prefix, blank);
        out.push_back({prefix, pb, pnb, std::nullopt});
    }
    std::stable_sort(out.begin(), out.end(), [](const BeamHypothesis &a, const BeamHypothesis &b) {
        return better(a, a.score(), b, b.score());
    });
    return out;
}

std::vector<double> teacher_forced_scores(const BiDecoder &decoder, const Tensor &memory, std::size_t memory_len,
                                          std::span<const std::vector<std::int64_t>> hyps, const Vocabulary &vocab,
                                          Direction dir) {
    const std::size_t n = hyps.size();
    if (n == 0)
        return {};
    if (memory.rank() != 3 || memory.dim(0) != 1)
        throw DimensionError("teacher-forced scoring expects memory [1, T', d]");
    const std::size_t T = memory.dim(1), d = memory.dim(2);
    std::vector<double> tiled;
    tiled.reserve(n * T * d);
    for (std::size_t i = 0; i < n; ++i)
        tiled.insert(tiled.end(), memory.data().begin(), memory.data().end());
    const Tensor mem(Shape{n, T, d}, std::move(tiled));
    const std::vector<std::size_t> mem_len(n, memory_len);

    const auto io = make_decoder_io(hyps, vocab, dir);
    const Tensor logits = decoder.forward(mem, mem_len, io.input, dir, ForwardContext{});
    const std::size_t L = logits.dim(1), K = logits.dim(2);
    const auto z = logits.data();
    const auto pad = static_cast<std::size_t>(vocab.decoder_pad());

    std::vector<double> scores(n);
    for (std::size_t b = 0; b < n; ++b) {
        const std::size_t len = io.reference.valid_len[b];
        double total = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t row = (b * L + i) * K;
            double mx = kNegInf;
            for (std::size_t k = 0; k < K; ++k)
                if (k != pad)
                    mx = std::max(mx, z[row + k]);
            double se = 0.0;
            for (std::size_t k = 0; k < K; ++k)
                if (k != pad)
                    se += std::exp(z[row + k] - mx);
            total += z[row + static_cast<std::size_t>(io.reference.at(b, i))] - mx - std::log(se);
        }
        scores[b] = total / static_cast<double>(len);
    }
    return scores;
}

BeamHypothesis attention_rescore(std::span<const BeamHypothesis> nbest, const BiDecoder &decoder,
                                 const Tensor &memory, std::size_t memory_len, const Vocabulary &vocab,
                                 const RescoreWeights &weights) {
    if (nbest.empty())
        throw InputError("attention rescoring of an empty n-best list");
    if (nbest.size() == 1)
        return nbest.front();
    std::vector<std::vector<std::int64_t>> hyps;
    hyps.reserve(nbest.size());
    for (const auto &h : nbest)
        hyps.push_back(h.prefix);
    const auto l2r = teacher_forced_scores(decoder, memory, memory_len, hyps, vocab, Direction::l2r);
    const auto r2l = teacher_forced_scores(decoder, memory, memory_len, hyps, vocab, Direction::r2l);

    std::size_t best = 0;
    double best_score = kNegInf;
    for (std::size_t i = 0; i < nbest.size(); ++i) {
        const double att = weights.lambda2 * l2r[i] + (1.0 - weights.lambda2) * r2l[i];
        const double s = weights.w_ctc == 1.0 ? nbest[i].score()
                                              : weights.w_ctc * nbest[i].score() + (1.0 - weights.w_ctc) * att;
        if (i == 0 || better(nbest[i], s, nbest[best], best_score)) {
            best = i;
            best_score = s;
        }
    }
    BeamHypothesis out = nbest[best];
    out.att_scores = {l2r[best], r2l[best]};
    return out;
}

std::vector<std::vector<std::int64_t>> decode_batch(CitrinetModel &model, const FeatureBatch &batch,
                                                    std::size_t beam_width, const RescoreWeights &weights) {
    const ForwardContext ctx{};
    const Sequence enc = model.encode(batch, ctx);
    const Tensor log_probs = model.ctc_log_probs(enc);
    const std::size_t B = log_probs.dim(0), T = log_probs.dim(1), C = log_probs.dim(2);
    const BiDecoder *decoder = model.decoder();
    Tensor memory;
    if (decoder)
        memory = decoder->memory(enc.x);

    std::vector<std::vector<std::int64_t>> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        const auto lp = log_probs.data().subspan(b * T * C, T * C);
        const auto nbest = ctc_prefix_beam_search(lp, enc.valid_len[b], C, beam_width, model.vocab().blank());
        if (!decoder) {
            out[b] = nbest.front().prefix;
            continue;
        }
        const std::size_t Tm = memory.dim(1), d = memory.dim(2);
        const auto slice = memory.data().subspan(b * Tm * d, Tm * d);
        const Tensor item(Shape{1, Tm, d}, std::vector<double>(slice.begin(), slice.end()));
        out[b] = attention_rescore(nbest, *decoder, item, enc.valid_len[b], model.vocab(), weights).prefix;
    }
    return out;
}

double cer(std::span<const std::int64_t> hyp, std::span<const std::int64_t> ref) {
    if (ref.empty())
        throw InputError("CER against an empty reference");
    return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

double cer(std::string_view hyp, std::string_view ref) {
    if (ref.empty())
        throw InputError("CER against an empty reference");
    return static_cast<double>(edit_distance(std::span<const char>(hyp), std::span<const char>(ref))) /
           static_cast<double>(ref.size());
}

double corpus_cer(std::span<const std::vector<std::int64_t>> hyps, std::span<const std::vector<std::int64_t>> refs) {
    if (hyps.size() != refs.size())
        throw DimensionError("corpus CER: hypothesis and reference counts differ");
    std::size_t edits = 0, total = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        edits += edit_distance(std::span<const std::int64_t>(hyps[i]), std::span<const std::int64_t>(refs[i]));
        total += refs[i].size();
    }
    if (total == 0)
        throw InputError("corpus CER against empty references");
    return static_cast<double>(edits) / static_cast<double>(total);
}

} // namespace citrinet
