#include "citrinet/layers.hpp"

#include <cmath>

#include "citrinet/error.hpp"

namespace citrinet {

Tensor activate(const Tensor &x, Activation act) {
    return act == Activation::swish ? swish(x) : relu(x);
}

ParameterStore::ParameterStore(bool materialize, std::uint64_t init_seed)
    : materialize_(materialize), init_rng_(init_seed) {}

ParameterStore::Entry &ParameterStore::add(const std::string &name, Shape shape, Kind kind) {
    if (find(name) != nullptr)
        throw ConfigError("duplicate parameter name '" + name + "'");
    entries_.push_back(Entry{name, std::move(shape), kind, Tensor()});
    return entries_.back();
}

Tensor ParameterStore::parameter(const std::string &name, Shape shape, double bound) {
    auto &e = add(name, std::move(shape), Kind::parameter);
    if (materialize_) {
        std::vector<double> v(numel(e.shape), 0.0);
        if (bound > 0.0)
            for (auto &x : v)
                x = (2.0 * uniform01(init_rng_) - 1.0) * bound;
        e.tensor = Tensor(e.shape, std::move(v));
        e.tensor.set_requires_grad(true);
    }
    return e.tensor;
}

Tensor ParameterStore::constant_parameter(const std::string &name, Shape shape, double value) {
    auto &e = add(name, std::move(shape), Kind::parameter);
    if (materialize_) {
        e.tensor = Tensor(e.shape, value);
        e.tensor.set_requires_grad(true);
    }
    return e.tensor;
}

Tensor ParameterStore::buffer(const std::string &name, Shape shape, double value) {
    auto &e = add(name, std::move(shape), Kind::buffer);
    if (materialize_)
        e.tensor = Tensor(e.shape, value);
    return e.tensor;
}

const ParameterStore::Entry *ParameterStore::find(const std::string &name) const {
    for (const auto &e : entries_)
        if (e.name == name)
            return &e;
    return nullptr;
}

std::vector<Tensor> ParameterStore::parameters() const {
    std::vector<Tensor> out;
    for (const auto &e : entries_)
        if (e.kind == Kind::parameter)
            out.push_back(e.tensor);
    return out;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto &e : entries_)
        if (e.kind == Kind::parameter)
            n += numel(e.shape);
    return n;
}

void ParameterStore::zero_grad() {
    for (auto &e : entries_)
        if (e.kind == Kind::parameter && e.tensor.defined())
            e.tensor.zero_grad();
}

Linear::Linear(const Scope &scope, std::size_t in, std::size_t out, bool bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = scope.store().parameter(scope.name("weight"), {out, in}, bound);
    if (bias)
        this->bias = scope.store().parameter(scope.name("bias"), {out}, bound);
}

LayerNorm::LayerNorm(const Scope &scope, std::size_t dim) {
    weight = scope.store().constant_parameter(scope.name("weight"), {dim}, 1.0);
    bias = scope.store().constant_parameter(scope.name("bias"), {dim}, 0.0);
}

BatchNorm1d::BatchNorm1d(const Scope &scope, std::size_t channels) {
    weight = scope.store().constant_parameter(scope.name("weight"), {channels}, 1.0);
    bias = scope.store().constant_parameter(scope.name("bias"), {channels}, 0.0);
    running_mean = scope.store().buffer(scope.name("running_mean"), {channels}, 0.0);
    running_var = scope.store().buffer(scope.name("running_var"), {channels}, 1.0);
}

Tensor BatchNorm1d::forward(const Tensor &x, std::span<const std::size_t> valid_len, bool training) {
    BatchNormOptions opts;
    opts.training = training;
    return batch_norm1d(x, weight, bias, running_mean, running_var, valid_len, opts);
}

ChannelNorm::ChannelNorm(const Scope &scope, std::size_t channels, NormKind kind) : kind_(kind) {
    if (kind == NormKind::layer)
        ln = LayerNorm(scope, channels);
    else
        bn = BatchNorm1d(scope, channels);
}

Tensor ChannelNorm::forward(const Tensor &x, std::span<const std::size_t> valid_len, const ForwardContext &ctx) {
    if (kind_ == NormKind::batch)
        return bn.forward(x, valid_len, ctx.training);
    return mask_frames(ln.forward(x, 1), valid_len);
}

Conv1d::Conv1d(const Scope &scope, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
               std::size_t groups, bool bias) {
    if (kernel % 2 == 0)
        throw ConfigError("conv '" + scope.prefix() + "': kernel size must be odd, got " + std::to_string(kernel));
    if (groups == 0 || in % groups != 0 || out % groups != 0)
        throw ConfigError("conv '" + scope.prefix() + "': channels not divisible by groups");
    opts_.stride = stride;
    opts_.groups = groups;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in / groups * kernel));
    weight = scope.store().parameter(scope.name("weight"), {out, in / groups, kernel}, bound);
    if (bias)
        this->bias = scope.store().parameter(scope.name("bias"), {out}, bound);
}

FeedForward::FeedForward(const Scope &scope, std::size_t d, std::size_t hidden, Activation act, double dropout)
    : linear1(scope / "linear1", d, hidden), linear2(scope / "linear2", hidden, d), act_(act), dropout_(dropout) {}

Tensor FeedForward::forward(const Tensor &x, const ForwardContext &ctx) const {
    Tensor h = activate(linear1.forward(x), act_);
    if (ctx.training && dropout_ > 0.0)
        h = dropout(h, dropout_, *ctx.rng, true);
    Tensor y = linear2.forward(h);
    if (ctx.training && dropout_ > 0.0)
        y = dropout(y, dropout_, *ctx.rng, true);
    return y;
}

AttentionMask AttentionMask::none(std::size_t batch, std::size_t tq, std::size_t tk) {
    AttentionMask m(MaskKind::none, batch, tq, tk);
    std::fill(m.bits_.begin(), m.bits_.end(), 1);
    return m;
}

AttentionMask AttentionMask::causal(std::size_t batch, std::size_t t) {
    AttentionMask m(MaskKind::causal, batch, t, t);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j <= i; ++j)
                m.bits_[(b * t + i) * t + j] = 1;
    return m;
}

AttentionMask AttentionMask::anti_causal(std::size_t batch, std::size_t t) {
    AttentionMask m(MaskKind::anti_causal, batch, t, t);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = i; j < t; ++j)
                m.bits_[(b * t + i) * t + j] = 1;
    return m;
}

AttentionMask AttentionMask::padding(std::size_t tq, std::span<const std::size_t> key_valid_len, std::size_t tk) {
    AttentionMask m(MaskKind::padding, key_valid_len.size(), tq, tk);
    for (std::size_t b = 0; b < key_valid_len.size(); ++b)
        for (std::size_t i = 0; i < tq; ++i)
            for (std::size_t j = 0; j < std::min(key_valid_len[b], tk); ++j)
                m.bits_[(b * tq + i) * tk + j] = 1;
    return m;
}

MultiHeadAttention::MultiHeadAttention(const Scope &scope, std::size_t d, std::size_t heads)
    : d_(d), heads_(heads) {
    if (heads == 0 || d % heads != 0)
        throw ConfigError("attention '" + scope.prefix() + "': model dim " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
    q_proj = Linear(scope / "q_proj", d, d);
    k_proj = Linear(scope / "k_proj", d, d);
    v_proj = Linear(scope / "v_proj", d, d);
    out_proj = Linear(scope / "out_proj", d, d);
}

namespace {

// [B, T, d] -> [B*h, T, d/h]
Tensor split_heads(const Tensor &x, std::size_t h) {
    const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
    return reshape(permute(reshape(x, {B, T, h, d / h}), {0, 2, 1, 3}), {B * h, T, d / h});
}

// [B*h, T, dk] -> [B, T, h*dk]
Tensor merge_heads(const Tensor &x, std::size_t B, std::size_t h) {
    const std::size_t T = x.dim(1), dk = x.dim(2);
    return reshape(permute(reshape(x, {B, h, T, dk}), {0, 2, 1, 3}), {B, T, h * dk});
}

} // namespace

Tensor MultiHeadAttention::forward(const Tensor &query, const Tensor &memory, const AttentionMask &mask,
                                   Tensor *weights) const {
    if (query.rank() != 3 || memory.rank() != 3 || query.dim(2) != d_ || memory.dim(2) != d_ ||
        query.dim(0) != memory.dim(0))
        throw DimensionError("attention inputs " + shape_str(query.shape()) + " / " +
                             shape_str(memory.shape()) + " do not match model dim " + std::to_string(d_));
    const std::size_t B = query.dim(0), Tq = query.dim(1), Tk = memory.dim(1);
    if (mask.batch() != B || mask.tq() != Tq || mask.tk() != Tk)
        throw DimensionError("attention mask does not match [B,Tq,Tk]");
    const Tensor q = split_heads(q_proj.forward(query), heads_);
    const Tensor k = split_heads(k_proj.forward(memory), heads_);
    const Tensor v = split_heads(v_proj.forward(memory), heads_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_ / heads_));
    const Tensor scores = mul_scalar(bmm(q, transpose(k, 1, 2)), scale);
    const Tensor w = masked_softmax(scores, mask.bits(), B);
    if (weights)
        *weights = w;
    return out_proj.forward(merge_heads(bmm(w, v), B, heads_));
}

Tensor sinusoidal_positions(std::size_t length, std::size_t d) {
    std::vector<double> pe(length * d);
    for (std::size_t p = 0; p < length; ++p)
        for (std::size_t i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
            const double a = static_cast<double>(p) * freq;
            pe[p * d + i] = (i % 2 == 0) ? std::sin(a) : std::cos(a);
        }
    return Tensor(Shape{length, d}, std::move(pe));
}

} // namespace citrinet
