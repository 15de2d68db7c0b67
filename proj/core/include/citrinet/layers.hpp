#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "citrinet/ops.hpp"
#include "citrinet/random.hpp"
#include "citrinet/tensor.hpp"

namespace citrinet {

enum class Activation { swish, relu };
enum class NormKind { layer, batch };

Tensor activate(const Tensor &x, Activation act);

struct ForwardContext {
    bool training = false;
    Rng *rng = nullptr; // dropout masks; needed only when training with dropout
};

// Owns every named tensor of a model. Names are hierarchical
// ("encoder.block3.conv.pw0.weight") and unique.
//
// A store built with materialize=false records names and shapes only; layers
// constructed against it hold undefined tensors and must not be run. Used for
// parameter censuses of full-size configurations.
class ParameterStore {
  public:
    enum class Kind { parameter, buffer };

    struct Entry {
        std::string name;
        Shape shape;
        Kind kind;
        Tensor tensor;
    };

    explicit ParameterStore(bool materialize = true, std::uint64_t init_seed = 0);

    // Uniform(-bound, bound) init; bound 0 gives zeros.
    Tensor parameter(const std::string &name, Shape shape, double bound);
    Tensor constant_parameter(const std::string &name, Shape shape, double value);
    Tensor buffer(const std::string &name, Shape shape, double value);

    bool materialized() const { return materialize_; }
    const std::vector<Entry> &entries() const { return entries_; }
    const Entry *find(const std::string &name) const;
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

  private:
    Entry &add(const std::string &name, Shape shape, Kind kind);

    bool materialize_;
    Rng init_rng_;
    std::vector<Entry> entries_;
};

// A naming prefix inside a store.
class Scope {
  public:
    Scope(ParameterStore &store, std::string prefix) : store_(&store), prefix_(std::move(prefix)) {}

    Scope operator/(const std::string &child) const {
        return Scope(*store_, prefix_.empty() ? child : prefix_ + "." + child);
    }
    std::string name(const std::string &leaf) const { return prefix_.empty() ? leaf : prefix_ + "." + leaf; }
    ParameterStore &store() const { return *store_; }
    const std::string &prefix() const { return prefix_; }

  private:
    ParameterStore *store_;
    std::string prefix_;
};

class Linear {
  public:
    Linear() = default;
    Linear(const Scope &scope, std::size_t in, std::size_t out, bool bias = true);
    Tensor forward(const Tensor &x) const { return linear(x, weight, bias); }

    Tensor weight; // [out, in]
    Tensor bias;   // [out] or undefined
};

class LayerNorm {
  public:
    LayerNorm() = default;
    LayerNorm(const Scope &scope, std::size_t dim);
    Tensor forward(const Tensor &x, std::size_t axis) const { return layer_norm(x, weight, bias, axis); }

    Tensor weight;
    Tensor bias;
};

class BatchNorm1d {
  public:
    BatchNorm1d() = default;
    BatchNorm1d(const Scope &scope, std::size_t channels);
    Tensor forward(const Tensor &x, std::span<const std::size_t> valid_len, bool training);

    Tensor weight;
    Tensor bias;
    Tensor running_mean;
    Tensor running_var;
};

// Channel normalization of [B, C, T] sequences, layer or batch flavour.
// Output frames beyond valid_len are zero.
class ChannelNorm {
  public:
    ChannelNorm() = default;
    ChannelNorm(const Scope &scope, std::size_t channels, NormKind kind);
    Tensor forward(const Tensor &x, std::span<const std::size_t> valid_len, const ForwardContext &ctx);
    NormKind kind() const { return kind_; }

    LayerNorm ln;
    BatchNorm1d bn;

  private:
    NormKind kind_ = NormKind::batch;
};

class Conv1d {
  public:
    Conv1d() = default;
    Conv1d(const Scope &scope, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
           std::size_t groups = 1, bool bias = false);
    Tensor forward(const Tensor &x) const { return conv1d(x, weight, bias, opts_); }
    std::size_t stride() const { return opts_.stride; }

    Tensor weight; // [out, in/groups, kernel]
    Tensor bias;

  private:
    Conv1dOptions opts_;
};

// Position-wise d -> hidden -> d with activation in between and dropout after
// each projection.
class FeedForward {
  public:
    FeedForward() = default;
    FeedForward(const Scope &scope, std::size_t d, std::size_t hidden, Activation act, double dropout);
    Tensor forward(const Tensor &x, const ForwardContext &ctx) const;

    Linear linear1;
    Linear linear2;

  private:
    Activation act_ = Activation::swish;
    double dropout_ = 0.0;
};

enum class MaskKind { none, causal, anti_causal, padding };

// Which keys each query may attend to, per batch item: [B, Tq, Tk] booleans.
class AttentionMask {
  public:
    static AttentionMask none(std::size_t batch, std::size_t tq, std::size_t tk);
    static AttentionMask causal(std::size_t batch, std::size_t t);      // j <= i
    static AttentionMask anti_causal(std::size_t batch, std::size_t t); // j >= i
    // Keys at positions >= key_valid_len[b] are hidden.
    static AttentionMask padding(std::size_t tq, std::span<const std::size_t> key_valid_len, std::size_t tk);

    MaskKind kind() const { return kind_; }
    std::size_t batch() const { return batch_; }
    std::size_t tq() const { return tq_; }
    std::size_t tk() const { return tk_; }
    bool allowed(std::size_t b, std::size_t i, std::size_t j) const {
        return bits_[(b * tq_ + i) * tk_ + j] != 0;
    }
    std::span<const std::uint8_t> bits() const { return bits_; }

  private:
    AttentionMask(MaskKind kind, std::size_t batch, std::size_t tq, std::size_t tk)
        : kind_(kind), batch_(batch), tq_(tq), tk_(tk), bits_(batch * tq * tk, 0) {}

    MaskKind kind_;
    std::size_t batch_, tq_, tk_;
    std::vector<std::uint8_t> bits_;
};

// Scaled dot-product attention with h heads over [B, T, d] sequences. No
// positional information is added here.
class MultiHeadAttention {
  public:
    MultiHeadAttention() = default;
    MultiHeadAttention(const Scope &scope, std::size_t d, std::size_t heads);

    // query [B,Tq,d], memory [B,Tk,d]. If weights is non-null it receives
    // the attention weights [B*h, Tq, Tk].
    Tensor forward(const Tensor &query, const Tensor &memory, const AttentionMask &mask,
                   Tensor *weights = nullptr) const;
    std::size_t heads() const { return heads_; }

    Linear q_proj, k_proj, v_proj, out_proj;

  private:
    std::size_t d_ = 0;
    std::size_t heads_ = 1;
};

// Fixed sinusoidal position table [length, d].
Tensor sinusoidal_positions(std::size_t length, std::size_t d);

} // namespace citrinet
