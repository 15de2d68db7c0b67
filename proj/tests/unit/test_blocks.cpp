#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <string>

#include "citrinet/blocks.hpp"
#include "citrinet/error.hpp"
#include "test_support.hpp"

using namespace citrinet;
using citrinet::testing::expect_zero_gradient;
using citrinet::testing::max_fd_error;
using citrinet::testing::probe_loss;
using citrinet::testing::random_tensor;
using citrinet::testing::values;
using citrinet::testing::without;

namespace {

void fill(Tensor t, double v) {
    for (auto &x : t.mutable_data())
        x = v;
}

BlockSpec original_spec(std::size_t in, std::size_t out, std::size_t stride = 1) {
    BlockSpec s;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = 5;
    s.stride = stride;
    s.repeat = 5;
    return s;
}

BlockSpec enhanced_spec(std::size_t in, std::size_t out, std::size_t stride = 1) {
    auto s = original_spec(in, out, stride);
    s.repeat = 1;
    s.attention_enhanced = true;
    return s;
}

BlockOptions original_options() {
    BlockOptions o;
    o.norm = NormKind::batch;
    o.act = Activation::relu;
    o.dropout = 0.0;
    o.heads = 4;
    return o;
}

BlockOptions enhanced_options() {
    BlockOptions o;
    o.norm = NormKind::layer;
    o.act = Activation::swish;
    o.dropout = 0.0;
    o.heads = 4;
    return o;
}

// Random [B, C, T] input, zero beyond each valid length.
Sequence random_sequence(Rng &rng, std::size_t B, std::size_t C, std::size_t T, std::vector<std::size_t> lens,
                         bool requires_grad = false) {
    auto x = random_tensor({B, C, T}, rng, requires_grad);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = lens[b]; t < T; ++t)
                x.mutable_data()[(b * C + c) * T + t] = 0.0;
    return {x, std::move(lens)};
}

std::size_t count_entries(const ParameterStore &store, const std::string &prefix, const std::string &suffix) {
    std::size_t n = 0;
    for (const auto &e : store.entries())
        if (e.name.rfind(prefix, 0) == 0 && e.name.size() >= suffix.size() &&
            e.name.compare(e.name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ++n;
    return n;
}

std::set<std::string> norm_layers(const ParameterStore &store, const std::string &prefix) {
    std::set<std::string> out;
    for (const auto &e : store.entries())
        if (e.name.rfind(prefix, 0) == 0 && e.name.find("norm") != std::string::npos) {
            const auto last = e.name.rfind('.');
            out.insert(e.name.substr(0, last));
        }
    return out;
}

void randomize(const ParameterStore &store, std::uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    for (auto t : store.parameters())
        for (auto &x : t.mutable_data())
            x += scale * standard_normal(rng);
}

} // namespace

TEST(SEModule, GatesLieStrictlyInsideUnitInterval) {
    ParameterStore store(true, 1);
    SEModule se(Scope(store, "se"), 16, 8);
    randomize(store, 1, 0.5);
    Rng rng(1);
    const auto seq = random_sequence(rng, 3, 16, 9, {9, 4, 1});
    const auto g = se.gates(seq.x, seq.valid_len);
    EXPECT_EQ(g.shape(), (Shape{3, 16, 1}));
    for (double v : g.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(SEModule, ZeroInputAndBiasesGiveHalf) {
    ParameterStore store(true, 2);
    SEModule se(Scope(store, "se"), 16, 8);
    fill(se.fc1.bias, 0.0);
    fill(se.fc2.bias, 0.0);
    const std::vector<std::size_t> lens{5, 5};
    const auto g = se.gates(Tensor::zeros({2, 16, 5}), lens);
    for (double v : g.data())
        EXPECT_EQ(v, 0.5);
}

TEST(SEModule, PadFramesDoNotChangeGates) {
    ParameterStore store(true, 3);
    SEModule se(Scope(store, "se"), 8, 8);
    Rng rng(3);
    const auto seq = random_sequence(rng, 1, 8, 6, {6});
    auto padded = Tensor::zeros({1, 8, 11});
    for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t t = 0; t < 11; ++t)
            padded.mutable_data()[c * 11 + t] = t < 6 ? seq.x.data()[c * 6 + t] : 10.0 * standard_normal(rng);
    const auto a = se.gates(seq.x, seq.valid_len), b = se.gates(padded, seq.valid_len);
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(SEModule, EmptySequenceIsError) {
    ParameterStore store(true, 4);
    SEModule se(Scope(store, "se"), 8, 8);
    const std::vector<std::size_t> lens{0};
    EXPECT_THROW(se.gates(Tensor::zeros({1, 8, 3}), lens), InputError);
}

TEST(ResModule, IdentityWeightsPassInputThrough) {
    ParameterStore store;
    ResModule res(Scope(store, "res"), 4, 4, 1);
    fill(res.conv.weight, 0.0);
    for (std::size_t c = 0; c < 4; ++c)
        res.conv.weight.mutable_data()[c * 4 + c] = 1.0;
    Rng rng(5);
    const auto seq = random_sequence(rng, 2, 4, 7, {7, 7});
    const auto y = res.forward(seq, {false, nullptr});
    for (std::size_t i = 0; i < y.x.size(); ++i)
        EXPECT_NEAR(y.x.data()[i], seq.x.data()[i] / std::sqrt(1.0 + 1e-5), 1e-15);
    for (std::size_t i = 0; i < y.x.size(); ++i)
        EXPECT_NEAR(y.x.data()[i], seq.x.data()[i], 1e-4);
}

TEST(ResModule, StrideAndWidthContract) {
    ParameterStore store(true, 6);
    ResModule res(Scope(store, "res"), 2, 3, 2);
    Rng rng(6);
    const auto y = res.forward(random_sequence(rng, 1, 2, 7, {7}), {false, nullptr});
    EXPECT_EQ(y.x.shape(), (Shape{1, 3, 4}));
    EXPECT_EQ(y.valid_len, (std::vector<std::size_t>{4}));
}

TEST(ConvModule, CensusIsTenConvsAndFiveNorms) {
    ParameterStore store;
    JasperBlock block(Scope(store, "blk"), original_spec(16, 16), original_options());
    EXPECT_EQ(block.conv_module().conv_weight_count(), 10u);
    EXPECT_EQ(count_entries(store, "blk.conv.sep", ".weight"), 10u);
    EXPECT_EQ(norm_layers(store, "blk.conv.").size(), 5u);
    EXPECT_EQ(block.conv_module().residual_adds(), 0u);
}

TEST(ConvModule, ZeroWeightsGiveZeroOutput) {
    ParameterStore store(true, 7);
    ConvModule mod(Scope(store, "conv"), original_spec(8, 16), original_options());
    for (auto &sep : mod.convs) {
        fill(sep.depthwise.weight, 0.0);
        fill(sep.pointwise.weight, 0.0);
    }
    Rng rng(7);
    const auto y = mod.forward(random_sequence(rng, 2, 8, 10, {10, 6}), {false, nullptr});
    EXPECT_EQ(values(y.x), std::vector<double>(y.x.size(), 0.0));
}

TEST(EnhancedModule, CensusOfAddedLayers) {
    ParameterStore store;
    JasperBlock block(Scope(store, "blk"), enhanced_spec(16, 24), enhanced_options());
    const auto &mod = block.conv_module();
    EXPECT_EQ(mod.conv_weight_count(), 2u);
    EXPECT_EQ(count_entries(store, "blk.conv.sep", ".weight"), 2u);
    // FFN: two projections; MHSA: query, key, value and output projections.
    EXPECT_EQ(count_entries(store, "blk.conv.ffn.", ".weight") + count_entries(store, "blk.conv.mhsa.", ".weight"),
              6u);
    EXPECT_EQ(count_entries(store, "blk.conv.ffn_norm", ".weight") +
                  count_entries(store, "blk.conv.mhsa_norm", ".weight"),
              2u);
    EXPECT_EQ(mod.residual_adds(), 2u);
    // Eight of the ten original conv tensors are gone.
    ParameterStore orig;
    JasperBlock o(Scope(orig, "blk"), original_spec(16, 24), original_options());
    EXPECT_EQ(o.conv_module().conv_weight_count() - mod.conv_weight_count(), 8u);
}

TEST(EnhancedModule, HeadsMustDivideInputWidth) {
    ParameterStore store;
    auto opts = enhanced_options();
    opts.heads = 3;
    EXPECT_THROW(JasperBlock(Scope(store, "blk"), enhanced_spec(16, 24), opts), ConfigError);
}

TEST(EnhancedModule, ZeroBranchesReduceToConvStack) {
    ParameterStore store(true, 8);
    auto opts = enhanced_options();
    AttConvModule mod(Scope(store, "conv"), enhanced_spec(8, 16, 2), opts);
    randomize(store, 8);
    for (auto t : {mod.ffn->linear2.weight, mod.ffn->linear2.bias, mod.mhsa.out_proj.weight, mod.mhsa.out_proj.bias})
        fill(t, 0.0);
    Rng rng(8);
    const auto seq = random_sequence(rng, 2, 8, 9, {9, 5});
    const auto y = mod.forward(seq, {false, nullptr});
    std::vector<std::size_t> lens{5, 3};
    auto expected = mod.norm.forward(mod.conv.pointwise.forward(mod.conv.depthwise.forward(seq.x)), lens, {});
    expected = mask_frames(activate(expected, opts.act), lens);
    EXPECT_EQ(y.valid_len, lens);
    ASSERT_EQ(y.x.shape(), expected.shape());
    for (std::size_t i = 0; i < y.x.size(); ++i)
        EXPECT_NEAR(y.x.data()[i], expected.data()[i], 1e-12);
}

class BothVariants : public ::testing::TestWithParam<bool> {
  protected:
    BlockSpec spec(std::size_t in, std::size_t out, std::size_t stride = 1) const {
        return GetParam() ? enhanced_spec(in, out, stride) : original_spec(in, out, stride);
    }
    BlockOptions options() const { return GetParam() ? enhanced_options() : original_options(); }
};

TEST_P(BothVariants, LengthContractForAnyLength) {
    for (std::size_t stride : {1u, 2u}) {
        ParameterStore store(true, 9);
        JasperBlock block(Scope(store, "blk"), spec(8, 16, stride), options());
        Rng rng(9);
        for (std::size_t T = 1; T <= 23; ++T) {
            const auto y = block.forward(random_sequence(rng, 1, 8, T, {T}), {false, nullptr});
            const std::size_t expected = (T + stride - 1) / stride;
            EXPECT_EQ(y.x.shape(), (Shape{1, 16, expected}));
            EXPECT_EQ(y.valid_len[0], expected);
        }
    }
}

TEST_P(BothVariants, OutputDecomposesIntoResidualPlusGatedMain) {
    ParameterStore store(true, 10);
    JasperBlock block(Scope(store, "blk"), spec(8, 16, 2), options());
    randomize(store, 10);
    Rng rng(10);
    JasperBlock::Trace trace;
    const auto y = block.forward(random_sequence(rng, 2, 8, 12, {12, 7}), {false, nullptr}, &trace);
    const std::size_t T = y.x.dim(2);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 16; ++c)
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t i = (b * 16 + c) * T + t;
                const double gated = trace.main.data()[i] * trace.gates.data()[b * 16 + c];
                if (t < y.valid_len[b])
                    EXPECT_NEAR(y.x.data()[i] - trace.residual.data()[i], gated, 1e-12);
                else
                    EXPECT_EQ(y.x.data()[i], 0.0);
            }
}

TEST_P(BothVariants, ClosedGatesLeaveOnlyResidual) {
    ParameterStore store(true, 11);
    JasperBlock block(Scope(store, "blk"), spec(8, 8), options());
    randomize(store, 11);
    fill(block.se().fc2.weight, 0.0);
    fill(block.se().fc2.bias, -50.0);
    Rng rng(11);
    const auto seq = random_sequence(rng, 1, 8, 10, {10});
    JasperBlock::Trace trace;
    const auto y = block.forward(seq, {false, nullptr}, &trace);
    for (std::size_t i = 0; i < y.x.size(); ++i)
        EXPECT_NEAR(y.x.data()[i], trace.residual.data()[i], 1e-6);
    const auto res = block.res()->forward(seq, {false, nullptr});
    EXPECT_EQ(values(res.x), values(trace.residual));
}

TEST_P(BothVariants, OpenGatesAddMainPath) {
    ParameterStore store(true, 12);
    JasperBlock block(Scope(store, "blk"), spec(8, 8), options());
    randomize(store, 12);
    fill(block.se().fc2.weight, 0.0);
    fill(block.se().fc2.bias, 50.0);
    Rng rng(12);
    JasperBlock::Trace trace;
    const auto y = block.forward(random_sequence(rng, 1, 8, 10, {10}), {false, nullptr}, &trace);
    for (std::size_t i = 0; i < y.x.size(); ++i)
        EXPECT_NEAR(y.x.data()[i], trace.residual.data()[i] + trace.main.data()[i], 1e-12);
}

TEST_P(BothVariants, WithoutResidualOutputIsGatedMain) {
    ParameterStore store(true, 13);
    auto s = spec(8, 16);
    s.has_residual = false;
    JasperBlock block(Scope(store, "blk"), s, options());
    EXPECT_EQ(block.res(), nullptr);
    EXPECT_EQ(store.find("blk.res.conv.weight"), nullptr);
    Rng rng(13);
    JasperBlock::Trace trace;
    const auto y = block.forward(random_sequence(rng, 1, 8, 10, {10}), {false, nullptr}, &trace);
    EXPECT_FALSE(trace.residual.defined());
    for (std::size_t c = 0; c < 16; ++c)
        for (std::size_t t = 0; t < 10; ++t)
            EXPECT_EQ(y.x.data()[c * 10 + t], trace.main.data()[c * 10 + t] * trace.gates.data()[c]);
}

TEST_P(BothVariants, FullBlockGradientMatchesFiniteDifferences) {
    ParameterStore store(true, 14);
    JasperBlock block(Scope(store, "blk"), spec(16, 16), options());
    randomize(store, 14, 0.1);
    Rng rng(14);
    auto seq = random_sequence(rng, 1, 16, 12, {12}, true);
    const auto loss = [&] { return probe_loss(block.forward(seq, {true, nullptr}).x); };
    auto tensors = store.parameters();
    if (auto *att = dynamic_cast<AttConvModule *>(&block.conv_module())) {
        tensors = without(tensors, att->mhsa.k_proj.bias);
        expect_zero_gradient(att->mhsa.k_proj.bias, loss);
    }
    tensors.push_back(seq.x);
    EXPECT_LE(max_fd_error(loss, tensors), 1e-4);
}

TEST_P(BothVariants, PadFramesDoNotChangeValidOutputs) {
    ParameterStore store(true, 15);
    JasperBlock block(Scope(store, "blk"), spec(8, 16, 2), options());
    randomize(store, 15);
    Rng rng(15);
    const auto seq = random_sequence(rng, 1, 8, 7, {7});
    auto padded = Tensor::zeros({1, 8, 12});
    for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t t = 0; t < 12; ++t)
            padded.mutable_data()[c * 12 + t] = t < 7 ? seq.x.data()[c * 7 + t] : 5.0 * standard_normal(rng);
    const auto a = block.forward(seq, {false, nullptr});
    const auto b = block.forward({padded, {7}}, {false, nullptr});
    ASSERT_EQ(a.valid_len, b.valid_len);
    for (std::size_t c = 0; c < 16; ++c)
        for (std::size_t t = 0; t < a.valid_len[0]; ++t)
            EXPECT_NEAR(a.x.data()[c * a.x.dim(2) + t], b.x.data()[c * b.x.dim(2) + t], 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Blocks, BothVariants, ::testing::Values(false, true),
                         [](const auto &info) { return info.param ? "Enhanced" : "Original"; });

TEST(Ablation, NormAndActivationSwapsKeepCensusFfnRemovalChangesIt) {
    const auto census = [](BlockOptions opts) {
        ParameterStore store(false);
        JasperBlock block(Scope(store, "blk"), enhanced_spec(16, 24), opts);
        return store.parameter_count();
    };
    const auto base = enhanced_options();
    auto batch = base;
    batch.norm = NormKind::batch;
    auto relu = base;
    relu.act = Activation::relu;
    auto no_ffn = base;
    no_ffn.use_ffn = false;
    EXPECT_EQ(census(batch), census(base));
    EXPECT_EQ(census(relu), census(base));
    EXPECT_LT(census(no_ffn), census(base));

    // Every toggle still yields a runnable block.
    for (const auto &opts : {batch, relu, no_ffn}) {
        ParameterStore store(true, 16);
        JasperBlock block(Scope(store, "blk"), enhanced_spec(16, 24, 2), opts);
        Rng rng(16);
        const auto y = block.forward(random_sequence(rng, 2, 16, 9, {9, 4}), {true, nullptr});
        EXPECT_EQ(y.x.shape(), (Shape{2, 24, 5}));
    }
}

TEST(BlockSpec, InvalidSpecsAreConfigErrors) {
    auto enhanced_repeat = enhanced_spec(16, 16);
    enhanced_repeat.repeat = 5;
    EXPECT_THROW(validate(enhanced_repeat, enhanced_options()), ConfigError);
    EXPECT_THROW(validate(original_spec(16, 12), original_options()), ConfigError);
    auto even = original_spec(16, 16);
    even.kernel = 4;
    EXPECT_THROW(validate(even, original_options()), ConfigError);
    auto stride3 = original_spec(16, 16, 3);
    EXPECT_THROW(validate(stride3, original_options()), ConfigError);
}
