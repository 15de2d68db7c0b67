#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "citrinet/blocks.hpp"
#include "citrinet/config.hpp"
#include "citrinet/features.hpp"

namespace citrinet {

// Blocks per mega block for a layout of `total_blocks` (prolog and epilog
// included). Ending blocks of each mega block are pruned first.
std::array<std::size_t, 3> mega_block_counts(std::size_t total_blocks);

struct EncoderBlockSpec {
    std::string name; // "prolog", "mega2.block0", "epilog", ...
    std::size_t mega = 0; // 1..3 inside mega blocks, 0 otherwise
    BlockSpec spec;
};

std::vector<EncoderBlockSpec> kernel_schedule(const ModelConfig &cfg);

// Time length after the three stride-2 stages.
inline std::size_t encoded_length(std::size_t frames) {
    return strided_length(strided_length(strided_length(frames, 2), 2), 2);
}

class Encoder {
  public:
    Encoder(const Scope &scope, const ModelConfig &cfg);

    // features [B, 80, T] -> [B, epilog_dim, ceil(T/8)]
    Sequence forward(const Sequence &features, const ForwardContext &ctx,
                     std::vector<JasperBlock::Trace> *traces = nullptr);

    std::vector<JasperBlock> &blocks() { return blocks_; }
    const std::vector<JasperBlock> &blocks() const { return blocks_; }

  private:
    std::vector<JasperBlock> blocks_;
};

// Pointwise conv to V+1 classes, then log-softmax: [B, E, T'] -> [B, T', V+1].
class CtcHead {
  public:
    CtcHead() = default;
    CtcHead(const Scope &scope, std::size_t in, std::size_t classes);
    Tensor forward(const Tensor &enc) const;

    Conv1d proj;
};

// Row-major [batch, max_len] ids; entries past valid_len hold the pad id.
struct TokenBatch {
    std::vector<std::int64_t> ids;
    std::size_t batch = 0;
    std::size_t max_len = 0;
    std::vector<std::size_t> valid_len;

    Shape shape() const { return {batch, max_len}; }
    std::int64_t at(std::size_t b, std::size_t i) const { return ids[b * max_len + i]; }
};

enum class Direction { l2r, r2l };

// Teacher-forcing inputs and references in decoder class ids.
// l2r: (sos, y1..yN) -> (y1..yN, eos); r2l: (sos, yN..y1) -> (y1..yN, eos).
struct DecoderIo {
    TokenBatch input;
    TokenBatch reference;
};

DecoderIo make_decoder_io(std::span<const std::vector<std::int64_t>> targets, const Vocabulary &vocab,
                          Direction dir);

class DecoderLayer {
  public:
    DecoderLayer(const Scope &scope, std::size_t d, std::size_t heads, double dropout);
    Tensor forward(const Tensor &x, const Tensor &memory, const AttentionMask &self_mask,
                   const AttentionMask &cross_mask, const ForwardContext &ctx) const;

    LayerNorm self_norm;
    MultiHeadAttention self_attn;
    LayerNorm cross_norm;
    MultiHeadAttention cross_attn;
    LayerNorm ffn_norm;
    FeedForward ffn;

  private:
    double dropout_;
};

// Two pre-norm transformer decoders reading the encoder output. The
// directions keep separate layer stacks and share the token embedding, the
// output projection and the encoder-to-decoder width projection.
class BiDecoder {
  public:
    BiDecoder(const Scope &scope, const ModelConfig &cfg);

    // enc [B, E, T'] -> memory [B, T', d]
    Tensor memory(const Tensor &enc) const;

    // Logits [B, L, V+3] for every position in one pass.
    Tensor forward(const Tensor &memory, std::span<const std::size_t> memory_len, const TokenBatch &input,
                   Direction dir, const ForwardContext &ctx) const;

    std::size_t dim() const { return d_; }
    std::vector<DecoderLayer> &layers(Direction dir) { return dir == Direction::l2r ? l2r_ : r2l_; }

    Tensor embedding;
    std::optional<Linear> memory_proj;
    std::vector<DecoderLayer> l2r_;
    std::vector<DecoderLayer> r2l_;
    LayerNorm l2r_norm;
    LayerNorm r2l_norm;
    Linear out_proj;

  private:
    Tensor embedding_lookup(const TokenBatch &input) const;

    std::size_t d_;
    double dropout_;
};

class CitrinetModel {
  public:
    // materialize=false records names and shapes only (for censuses).
    CitrinetModel(const ModelConfig &cfg, std::uint64_t seed, bool materialize = true);
    CitrinetModel(const CitrinetModel &) = delete;
    CitrinetModel &operator=(const CitrinetModel &) = delete;

    const ModelConfig &config() const { return cfg_; }
    const Vocabulary &vocab() const { return vocab_; }
    ParameterStore &store() { return store_; }
    const ParameterStore &store() const { return store_; }

    Encoder &encoder() { return encoder_; }
    CtcHead &ctc_head() { return ctc_head_; }
    BiDecoder *decoder() { return decoder_ ? &*decoder_ : nullptr; }
    const BiDecoder *decoder() const { return decoder_ ? &*decoder_ : nullptr; }

    Sequence encode(const FeatureBatch &batch, const ForwardContext &ctx,
                    std::vector<JasperBlock::Trace> *traces = nullptr);
    Tensor ctc_log_probs(const Sequence &encoded) const { return ctc_head_.forward(encoded.x); }

  private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    ParameterStore store_;
    Encoder encoder_;
    CtcHead ctc_head_;
    std::optional<BiDecoder> decoder_;
};

struct CensusLine {
    std::string group;
    std::size_t params = 0;
};

std::size_t count_params(const ModelConfig &cfg);
// Parameter totals grouped by the leading name components.
std::vector<CensusLine> census(const ModelConfig &cfg);

} // namespace citrinet
