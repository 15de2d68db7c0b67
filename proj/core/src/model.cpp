#include "citrinet/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "citrinet/error.hpp"

namespace citrinet {

std::array<std::size_t, 3> mega_block_counts(std::size_t total_blocks) {
    if (!is_allowed_total_blocks(total_blocks))
        throw ConfigError("total_blocks " + std::to_string(total_blocks) + " is not an allowed layout");
    const std::size_t n = total_blocks - 2;
    // round-half-up of 6n/21 and 7n/21
    const std::size_t first = (12 * n + 21) / 42;
    const std::size_t second = (14 * n + 21) / 42;
    return {first, second, n - first - second};
}

std::vector<EncoderBlockSpec> kernel_schedule(const ModelConfig &cfg) {
    const auto counts = mega_block_counts(cfg.total_blocks);
    const bool att = cfg.variant == Variant::attention;
    const std::array<std::size_t, 3> first_kernel = {11, 13, 25};

    std::vector<EncoderBlockSpec> out;
    BlockSpec prolog;
    prolog.in_channels = kNumMelBins;
    prolog.out_channels = cfg.channels;
    prolog.kernel = 11;
    prolog.repeat = 1;
    prolog.has_residual = false;
    out.push_back({"prolog", 0, prolog});

    for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t i = 0; i < counts[m]; ++i) {
            BlockSpec s;
            s.in_channels = cfg.channels;
            s.out_channels = cfg.channels;
            s.kernel = first_kernel[m] + 2 * i;
            s.stride = i == 0 ? 2 : 1;
            s.repeat = att ? 1 : 5;
            s.attention_enhanced = att;
            out.push_back({"mega" + std::to_string(m + 1) + ".block" + std::to_string(i), m + 1, s});
        }

    BlockSpec epilog;
    epilog.in_channels = cfg.channels;
    epilog.out_channels = cfg.epilog_dim;
    epilog.kernel = 41;
    epilog.repeat = 1;
    epilog.has_residual = false;
    epilog.attention_enhanced = att;
    out.push_back({"epilog", 0, epilog});
    return out;
}

Encoder::Encoder(const Scope &scope, const ModelConfig &cfg) {
    BlockOptions opts;
    opts.norm = cfg.norm;
    opts.act = cfg.act;
    opts.use_ffn = cfg.use_ffn;
    opts.heads = cfg.heads;
    opts.dropout = cfg.dropout;
    for (const auto &b : kernel_schedule(cfg))
        blocks_.emplace_back(scope / b.name, b.spec, opts);
}

Sequence Encoder::forward(const Sequence &features, const ForwardContext &ctx,
                          std::vector<JasperBlock::Trace> *traces) {
    const Tensor &x = features.x;
    if (x.rank() != 3 || x.dim(1) != kNumMelBins)
        throw DimensionError("encoder expects [B, 80, T] features, got " + shape_str(x.shape()));
    if (x.dim(2) == 0)
        throw InputError("encoder input has no frames");
    if (features.valid_len.size() != x.dim(0))
        throw DimensionError("encoder valid_len count does not match batch size");
    for (auto l : features.valid_len)
        if (l == 0 || l > x.dim(2))
            throw InputError("encoder valid length " + std::to_string(l) + " outside [1, " +
                             std::to_string(x.dim(2)) + "]");
    if (traces)
        traces->assign(blocks_.size(), {});
    Sequence seq = features;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        seq = blocks_[i].forward(seq, ctx, traces ? &(*traces)[i] : nullptr);
    return seq;
}

CtcHead::CtcHead(const Scope &scope, std::size_t in, std::size_t classes)
    : proj(scope / "proj", in, classes, 1, 1, 1, true) {}

Tensor CtcHead::forward(const Tensor &enc) const {
    return log_softmax(transpose(proj.forward(enc), 1, 2), 2);
}

DecoderIo make_decoder_io(std::span<const std::vector<std::int64_t>> targets, const Vocabulary &vocab,
                          Direction dir) {
    DecoderIo io;
    const std::size_t B = targets.size();
    std::size_t L = 0;
    for (const auto &t : targets)
        L = std::max(L, t.size() + 1);
    for (TokenBatch *tb : {&io.input, &io.reference}) {
        tb->batch = B;
        tb->max_len = L;
        tb->ids.assign(B * L, vocab.decoder_pad());
        tb->valid_len.resize(B);
    }
    const auto V = static_cast<std::int64_t>(vocab.size);
    for (std::size_t b = 0; b < B; ++b) {
        const auto &t = targets[b];
        const std::size_t n = t.size();
        for (auto id : t)
            if (id < 0 || id >= V)
                throw InputError("target token id " + std::to_string(id) + " outside [0, " +
                                 std::to_string(V) + ")");
        io.input.valid_len[b] = io.reference.valid_len[b] = n + 1;
        io.input.ids[b * L] = vocab.decoder_sos();
        for (std::size_t i = 0; i < n; ++i) {
            io.input.ids[b * L + 1 + i] = dir == Direction::l2r ? t[i] : t[n - 1 - i];
            io.reference.ids[b * L + i] = t[i];
        }
        io.reference.ids[b * L + n] = vocab.decoder_eos();
    }
    return io;
}

DecoderLayer::DecoderLayer(const Scope &scope, std::size_t d, std::size_t heads, double dropout)
    : self_norm(scope / "self_norm", d), self_attn(scope / "self_attn", d, heads),
      cross_norm(scope / "cross_norm", d), cross_attn(scope / "cross_attn", d, heads),
      ffn_norm(scope / "ffn_norm", d), ffn(scope / "ffn", d, 4 * d, Activation::swish, dropout),
      dropout_(dropout) {}

Tensor DecoderLayer::forward(const Tensor &x, const Tensor &memory, const AttentionMask &self_mask,
                             const AttentionMask &cross_mask, const ForwardContext &ctx) const {
    auto drop = [&](const Tensor &t) {
        return ctx.training && dropout_ > 0.0 ? dropout(t, dropout_, *ctx.rng, true) : t;
    };
    const Tensor q = self_norm.forward(x, 2);
    Tensor h = add(x, drop(self_attn.forward(q, q, self_mask)));
    h = add(h, drop(cross_attn.forward(cross_norm.forward(h, 2), memory, cross_mask)));
    return add(h, ffn.forward(ffn_norm.forward(h, 2), ctx));
}

BiDecoder::BiDecoder(const Scope &scope, const ModelConfig &cfg)
    : d_(resolved_decoder_dim(cfg)), dropout_(cfg.dropout) {
    const Vocabulary vocab{cfg.vocab};
    embedding = scope.store().parameter(scope.name("embedding"), {vocab.decoder_classes(), d_},
                                        1.0 / std::sqrt(static_cast<double>(d_)));
    if (cfg.epilog_dim != d_)
        memory_proj.emplace(scope / "memory_proj", cfg.epilog_dim, d_);
    for (std::size_t i = 0; i < cfg.decoder_blocks; ++i)
        l2r_.emplace_back(scope / ("l2r.layer" + std::to_string(i)), d_, cfg.decoder_heads, cfg.dropout);
    for (std::size_t i = 0; i < cfg.decoder_blocks; ++i)
        r2l_.emplace_back(scope / ("r2l.layer" + std::to_string(i)), d_, cfg.decoder_heads, cfg.dropout);
    l2r_norm = LayerNorm(scope / "l2r.final_norm", d_);
    r2l_norm = LayerNorm(scope / "r2l.final_norm", d_);
    out_proj = Linear(scope / "out_proj", d_, vocab.decoder_classes());
}

Tensor BiDecoder::memory(const Tensor &enc) const {
    const Tensor m = transpose(enc, 1, 2);
    return memory_proj ? memory_proj->forward(m) : m;
}

Tensor BiDecoder::forward(const Tensor &memory, std::span<const std::size_t> memory_len, const TokenBatch &input,
                          Direction dir, const ForwardContext &ctx) const {
    const std::size_t B = input.batch, L = input.max_len;
    if (memory.rank() != 3 || memory.dim(0) != B || memory.dim(2) != d_)
        throw DimensionError("decoder memory " + shape_str(memory.shape()) + " does not match batch " +
                             std::to_string(B) + " / width " + std::to_string(d_));
    Tensor x = mul_scalar(embedding_lookup(input), std::sqrt(static_cast<double>(d_)));
    x = add(x, sinusoidal_positions(L, d_));
    if (ctx.training && dropout_ > 0.0)
        x = dropout(x, dropout_, *ctx.rng, true);
    const auto self_mask = AttentionMask::causal(B, L);
    const auto cross_mask = AttentionMask::padding(L, memory_len, memory.dim(1));
    const auto &stack = dir == Direction::l2r ? l2r_ : r2l_;
    for (const auto &layer : stack)
        x = layer.forward(x, memory, self_mask, cross_mask, ctx);
    x = (dir == Direction::l2r ? l2r_norm : r2l_norm).forward(x, 2);
    return out_proj.forward(x);
}

Tensor BiDecoder::embedding_lookup(const TokenBatch &input) const {
    return citrinet::embedding(embedding, input.ids, input.shape());
}

CitrinetModel::CitrinetModel(const ModelConfig &cfg, std::uint64_t seed, bool materialize)
    : cfg_((validate(cfg), cfg)), vocab_{cfg.vocab}, store_(materialize, mix_seed(seed, 0x1417)),
      encoder_(Scope(store_, "encoder"), cfg_),
      ctc_head_(Scope(store_, "ctc_head"), cfg_.epilog_dim, vocab_.ctc_classes()) {
    if (has_decoders(cfg_))
        decoder_.emplace(Scope(store_, "decoder"), cfg_);
}

Sequence CitrinetModel::encode(const FeatureBatch &batch, const ForwardContext &ctx,
                               std::vector<JasperBlock::Trace> *traces) {
    return encoder_.forward(Sequence{batch.features, batch.valid_len}, ctx, traces);
}

std::size_t count_params(const ModelConfig &cfg) {
    return CitrinetModel(cfg, 0, false).store().parameter_count();
}

std::vector<CensusLine> census(const ModelConfig &cfg) {
    const CitrinetModel model(cfg, 0, false);
    std::vector<CensusLine> out;
    for (const auto &e : model.store().entries()) {
        if (e.kind != ParameterStore::Kind::parameter)
            continue;
        // "encoder.mega1.block0.conv..." -> "encoder.mega1.block0"; others keep two components.
        std::size_t cut = 0;
        const std::size_t depth = e.name.rfind("encoder.mega", 0) == 0 ? 3 : 2;
        for (std::size_t k = 0; k < depth && cut != std::string::npos; ++k)
            cut = e.name.find('.', cut == 0 ? 0 : cut + 1);
        const std::string group = cut == std::string::npos ? e.name : e.name.substr(0, cut);
        auto it = std::find_if(out.begin(), out.end(), [&](const CensusLine &l) { return l.group == group; });
        if (it == out.end())
            it = out.insert(out.end(), {group, 0});
        it->params += numel(e.shape);
    }
    return out;
}

} // namespace citrinet
