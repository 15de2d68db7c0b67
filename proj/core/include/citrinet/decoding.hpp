#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "citrinet/model.hpp"

namespace citrinet {

double log_add_exp(double a, double b);

struct BeamHypothesis {
    std::vector<std::int64_t> prefix;
    double log_p_blank = 0.0;    // prefix with its last frame blank
    double log_p_nonblank = 0.0; // prefix with its last frame its last label
    std::optional<std::pair<double, double>> att_scores; // (l2r, r2l) after rescoring

    double score() const { return log_add_exp(log_p_blank, log_p_nonblank); }
};

// Most probable class per frame, repeats merged and blanks dropped.
std::vector<std::int64_t> ctc_greedy_decode(std::span<const double> log_probs, std::size_t frames,
                                            std::size_t classes, std::int64_t blank);

// Prefix beam search over log_probs [T, C]. Each frame is pruned to its
// `beam_width` most probable classes, then to the `beam_width` best
// prefixes. Result sorted by score, best first.
std::vector<BeamHypothesis> ctc_prefix_beam_search(std::span<const double> log_probs, std::size_t frames,
                                                   std::size_t classes, std::size_t beam_width, std::int64_t blank);

struct RescoreWeights {
    double w_ctc = 0.3;
    double lambda2 = 0.7;
};

// Mean per-token log-probability of each hypothesis (followed by eos) when
// teacher-forced through one decoder direction. memory: [1, T', d].
std::vector<double> teacher_forced_scores(const BiDecoder &decoder, const Tensor &memory, std::size_t memory_len,
                                          std::span<const std::vector<std::int64_t>> hyps, const Vocabulary &vocab,
                                          Direction dir);

// Picks the hypothesis maximizing
//   w_ctc * ctc + (1 - w_ctc) * (lambda2 * l2r + (1 - lambda2) * r2l);
// ties go to the shorter, then lexicographically smaller prefix.
BeamHypothesis attention_rescore(std::span<const BeamHypothesis> nbest, const BiDecoder &decoder,
                                 const Tensor &memory, std::size_t memory_len, const Vocabulary &vocab,
                                 const RescoreWeights &weights);

// Decodes every item of a feature batch (eval mode). Without decoders the
// CTC top-1 is returned.
std::vector<std::vector<std::int64_t>> decode_batch(CitrinetModel &model, const FeatureBatch &batch,
                                                    std::size_t beam_width, const RescoreWeights &weights);

// Levenshtein distance with unit costs.
template <typename T> std::size_t edit_distance(std::span<const T> hyp, std::span<const T> ref) {
    std::vector<std::size_t> row(ref.size() + 1);
    for (std::size_t j = 0; j <= ref.size(); ++j)
        row[j] = j;
    for (std::size_t i = 1; i <= hyp.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= ref.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[ref.size()];
}

double cer(std::span<const std::int64_t> hyp, std::span<const std::int64_t> ref);
double cer(std::string_view hyp, std::string_view ref);

// Total edits over total reference length.
double corpus_cer(std::span<const std::vector<std::int64_t>> hyps, std::span<const std::vector<std::int64_t>> refs);

} // namespace citrinet
