#include "citrinet/blocks.hpp"

#include "citrinet/error.hpp"

namespace citrinet {

void validate(const BlockSpec &spec, const BlockOptions &opts) {
    if (spec.kernel % 2 == 0)
        throw ConfigError("block kernel must be odd, got " + std::to_string(spec.kernel));
    if (spec.stride != 1 && spec.stride != 2)
        throw ConfigError("block stride must be 1 or 2, got " + std::to_string(spec.stride));
    if (spec.repeat == 0)
        throw ConfigError("block repeat must be positive");
    if (spec.attention_enhanced && spec.repeat != 1)
        throw ConfigError("attention-enhanced blocks use a single repeat");
    if (spec.se_reduction == 0 || spec.out_channels % spec.se_reduction != 0)
        throw ConfigError("block channels " + std::to_string(spec.out_channels) +
                          " not divisible by SE reduction " + std::to_string(spec.se_reduction));
    if (spec.attention_enhanced && (opts.heads == 0 || spec.in_channels % opts.heads != 0))
        throw ConfigError("block input width " + std::to_string(spec.in_channels) +
                          " not divisible by " + std::to_string(opts.heads) + " attention heads");
}

SEModule::SEModule(const Scope &scope, std::size_t channels, std::size_t reduction)
    : fc1(scope / "fc1", channels, channels / reduction), fc2(scope / "fc2", channels / reduction, channels) {}

Tensor SEModule::gates(const Tensor &x, std::span<const std::size_t> valid_len) const {
    const std::size_t B = x.dim(0), C = x.dim(1);
    std::vector<double> inv_len(B);
    for (std::size_t b = 0; b < B; ++b) {
        if (valid_len[b] == 0)
            throw InputError("SE pooling over a sequence with no valid frames");
        inv_len[b] = 1.0 / static_cast<double>(valid_len[b]);
    }
    // x is zero beyond valid_len, so a plain sum is the valid-frame sum.
    const Tensor pooled = mul(sum(mask_frames(x, valid_len), 2), Tensor(Shape{B, 1}, std::move(inv_len)));
    const Tensor g = sigmoid(fc2.forward(relu(fc1.forward(pooled))));
    return reshape(g, {B, C, 1});
}

ResModule::ResModule(const Scope &scope, std::size_t in, std::size_t out, std::size_t stride)
    : conv(scope / "conv", in, out, 1, stride), norm(scope / "norm", out) {}

Sequence ResModule::forward(const Sequence &in, const ForwardContext &ctx) {
    Sequence out;
    out.valid_len.reserve(in.valid_len.size());
    for (auto l : in.valid_len)
        out.valid_len.push_back(strided_length(l, conv.stride()));
    out.x = norm.forward(conv.forward(in.x), out.valid_len, ctx.training);
    return out;
}

SeparableConv::SeparableConv(const Scope &scope, std::size_t in, std::size_t out, std::size_t kernel,
                             std::size_t stride)
    : depthwise(scope / "depthwise", in, in, kernel, stride, in), pointwise(scope / "pointwise", in, out, 1) {}

ConvModule::ConvModule(const Scope &scope, const BlockSpec &spec, const BlockOptions &opts)
    : act_(opts.act), dropout_(opts.dropout) {
    for (std::size_t r = 0; r < spec.repeat; ++r) {
        const std::size_t in = r == 0 ? spec.in_channels : spec.out_channels;
        convs.emplace_back(scope / ("sep" + std::to_string(r)), in, spec.out_channels, spec.kernel,
                           r == 0 ? spec.stride : 1);
        norms.emplace_back(scope / ("norm" + std::to_string(r)), spec.out_channels, opts.norm);
    }
}

Sequence ConvModule::forward(const Sequence &in, const ForwardContext &ctx) {
    Tensor x = mask_frames(in.x, in.valid_len);
    std::vector<std::size_t> lens = in.valid_len;
    for (std::size_t r = 0; r < convs.size(); ++r) {
        x = convs[r].depthwise.forward(x);
        if (r == 0)
            for (auto &l : lens)
                l = strided_length(l, convs[r].depthwise.stride());
        x = norms[r].forward(convs[r].pointwise.forward(x), lens, ctx);
        if (r + 1 < convs.size()) {
            x = activate(x, act_);
            if (ctx.training && dropout_ > 0.0)
                x = dropout(x, dropout_, *ctx.rng, true);
        }
    }
    return Sequence{x, std::move(lens)};
}

AttConvModule::AttConvModule(const Scope &scope, const BlockSpec &spec, const BlockOptions &opts)
    : mhsa_norm(scope / "mhsa_norm", spec.in_channels), mhsa(scope / "mhsa", spec.in_channels, opts.heads),
      conv(scope / "sep0", spec.in_channels, spec.out_channels, spec.kernel, spec.stride),
      norm(scope / "norm0", spec.out_channels, opts.norm), act_(opts.act), dropout_(opts.dropout) {
    if (opts.use_ffn) {
        ffn_norm.emplace(scope / "ffn_norm", spec.in_channels);
        ffn.emplace(scope / "ffn", spec.in_channels, 4 * spec.in_channels, opts.act, opts.dropout);
    }
}

Sequence AttConvModule::forward(const Sequence &in, const ForwardContext &ctx) {
    const std::size_t T = in.x.dim(2);
    Tensor h = transpose(mask_frames(in.x, in.valid_len), 1, 2); // [B, T, C]
    if (ffn)
        h = add(h, ffn->forward(ffn_norm->forward(h, 2), ctx));
    const auto mask = AttentionMask::padding(T, in.valid_len, T);
    const Tensor normed = mhsa_norm.forward(h, 2);
    Tensor att = mhsa.forward(normed, normed, mask);
    if (ctx.training && dropout_ > 0.0)
        att = dropout(att, dropout_, *ctx.rng, true);
    h = add(h, att);

    Tensor x = mask_frames(transpose(h, 1, 2), in.valid_len);
    x = conv.depthwise.forward(x);
    std::vector<std::size_t> lens;
    lens.reserve(in.valid_len.size());
    for (auto l : in.valid_len)
        lens.push_back(strided_length(l, conv.depthwise.stride()));
    x = norm.forward(conv.pointwise.forward(x), lens, ctx);
    x = activate(x, act_);
    if (ctx.training && dropout_ > 0.0)
        x = dropout(x, dropout_, *ctx.rng, true);
    return Sequence{mask_frames(x, lens), std::move(lens)};
}

JasperBlock::JasperBlock(const Scope &scope, const BlockSpec &spec, const BlockOptions &opts) : spec_(spec) {
    validate(spec, opts);
    if (spec.attention_enhanced)
        conv_ = std::make_unique<AttConvModule>(scope / "conv", spec, opts);
    else
        conv_ = std::make_unique<ConvModule>(scope / "conv", spec, opts);
    se_ = SEModule(scope / "se", spec.out_channels, spec.se_reduction);
    if (spec.has_residual)
        res_.emplace(scope / "res", spec.in_channels, spec.out_channels, spec.stride);
}

Sequence JasperBlock::forward(const Sequence &in, const ForwardContext &ctx, Trace *trace) {
    Sequence main = conv_->forward(in, ctx);
    const Tensor g = se_.gates(main.x, main.valid_len);
    Tensor out = mul(main.x, g);
    Tensor residual;
    if (res_) {
        residual = res_->forward(in, ctx).x;
        out = add(residual, out);
    }
    if (trace) {
        trace->main = main.x;
        trace->gates = g;
        trace->residual = residual;
    }
    return Sequence{mask_frames(out, main.valid_len), std::move(main.valid_len)};
}

} // namespace citrinet
