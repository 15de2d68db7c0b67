#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "citrinet/layers.hpp"

namespace citrinet {

struct BlockSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 11;
    std::size_t stride = 1;
    std::size_t repeat = 5;
    bool has_residual = true;
    bool attention_enhanced = false;
    std::size_t se_reduction = 8;
};

struct BlockOptions {
    NormKind norm = NormKind::batch;
    Activation act = Activation::relu;
    bool use_ffn = true;
    std::size_t heads = 8;
    double dropout = 0.1;
};

void validate(const BlockSpec &spec, const BlockOptions &opts);

// A batch of [B, C, T] sequences with per-item valid lengths. Frames past
// valid_len are kept at zero by every module.
struct Sequence {
    Tensor x;
    std::vector<std::size_t> valid_len;
};

inline std::size_t strided_length(std::size_t len, std::size_t stride) { return (len + stride - 1) / stride; }

// Squeeze-and-excitation: mean over valid frames, C -> C/r -> C, sigmoid.
class SEModule {
  public:
    SEModule() = default;
    SEModule(const Scope &scope, std::size_t channels, std::size_t reduction);

    // Gates [B, C, 1] in (0, 1).
    Tensor gates(const Tensor &x, std::span<const std::size_t> valid_len) const;

    Linear fc1;
    Linear fc2;
};

// 1x1 convolution (carrying the block stride) followed by batch norm.
class ResModule {
  public:
    ResModule() = default;
    ResModule(const Scope &scope, std::size_t in, std::size_t out, std::size_t stride);
    Sequence forward(const Sequence &in, const ForwardContext &ctx);

    Conv1d conv;
    BatchNorm1d norm;
};

// Depthwise K-conv followed by pointwise 1x1 conv.
struct SeparableConv {
    SeparableConv() = default;
    SeparableConv(const Scope &scope, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride);

    Conv1d depthwise;
    Conv1d pointwise;
};

class ConvModuleBase {
  public:
    virtual ~ConvModuleBase() = default;
    virtual Sequence forward(const Sequence &in, const ForwardContext &ctx) = 0;
    virtual std::size_t conv_weight_count() const = 0;
    virtual std::size_t residual_adds() const = 0;
};

// R repeats of [depthwise -> pointwise -> norm -> act -> dropout]; the last
// repeat stops after the norm. Stride is applied by the first depthwise conv.
class ConvModule final : public ConvModuleBase {
  public:
    ConvModule(const Scope &scope, const BlockSpec &spec, const BlockOptions &opts);
    Sequence forward(const Sequence &in, const ForwardContext &ctx) override;
    std::size_t conv_weight_count() const override { return 2 * convs.size(); }
    std::size_t residual_adds() const override { return 0; }

    std::vector<SeparableConv> convs;
    std::vector<ChannelNorm> norms;

  private:
    Activation act_;
    double dropout_;
};

// [pre-norm FFN + residual] -> [pre-norm MHSA + residual] at the input width,
// then one separable conv pair -> norm -> act -> dropout.
class AttConvModule final : public ConvModuleBase {
  public:
    AttConvModule(const Scope &scope, const BlockSpec &spec, const BlockOptions &opts);
    Sequence forward(const Sequence &in, const ForwardContext &ctx) override;
    std::size_t conv_weight_count() const override { return 2; }
    std::size_t residual_adds() const override { return ffn ? 2 : 1; }

    std::optional<LayerNorm> ffn_norm;
    std::optional<FeedForward> ffn;
    LayerNorm mhsa_norm;
    MultiHeadAttention mhsa;
    SeparableConv conv;
    ChannelNorm norm;

  private:
    Activation act_;
    double dropout_;
};

// X' = Res(X) + X~ * SE(X~), X~ = conv_module(X). Without a residual path
// (prolog/epilog) X' = X~ * SE(X~).
class JasperBlock {
  public:
    JasperBlock(const Scope &scope, const BlockSpec &spec, const BlockOptions &opts);

    struct Trace {
        Tensor main;     // X~
        Tensor gates;    // SE(X~), [B, C, 1]
        Tensor residual; // Res(X), undefined without a residual path
    };

    Sequence forward(const Sequence &in, const ForwardContext &ctx, Trace *trace = nullptr);

    const BlockSpec &spec() const { return spec_; }
    ConvModuleBase &conv_module() { return *conv_; }
    const ConvModuleBase &conv_module() const { return *conv_; }
    SEModule &se() { return se_; }
    ResModule *res() { return res_ ? &*res_ : nullptr; }

  private:
    BlockSpec spec_;
    std::unique_ptr<ConvModuleBase> conv_;
    SEModule se_;
    std::optional<ResModule> res_;
};

} // namespace citrinet
