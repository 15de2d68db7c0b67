#include <benchmark/benchmark.h>

#include <vector>

#include "citrinet/decoding.hpp"
#include "citrinet/features.hpp"
#include "citrinet/layers.hpp"
#include "citrinet/losses.hpp"
#include "citrinet/model.hpp"
#include "citrinet/ops.hpp"
#include "citrinet/random.hpp"
#include "citrinet/synth.hpp"

using namespace citrinet;

namespace {

Tensor random_tensor(const Shape &shape, std::uint64_t seed, bool requires_grad = false) {
    Rng rng(seed);
    std::vector<double> v(numel(shape));
    for (auto &x : v)
        x = standard_normal(rng);
    Tensor t(shape, std::move(v));
    t.set_requires_grad(requires_grad);
    return t;
}

std::vector<double> log_softmax_rows(std::size_t T, std::size_t C, std::uint64_t seed) {
    const Tensor lp = log_softmax(random_tensor({T, C}, seed), 1);
    return {lp.data().begin(), lp.data().end()};
}

ModelConfig small_config(Variant variant) {
    auto cfg = default_config(variant);
    cfg.channels = 64;
    cfg.total_blocks = 5;
    cfg.vocab = 32;
    cfg.epilog_dim = 128;
    cfg.heads = 4;
    cfg.decoder_dim = 64;
    cfg.decoder_heads = 4;
    cfg.decoder_blocks = 1;
    cfg.dropout = 0.0;
    return cfg;
}

void BM_DepthwiseConv1d(benchmark::State &state) {
    const auto C = static_cast<std::size_t>(state.range(0));
    const auto T = static_cast<std::size_t>(state.range(1));
    const Tensor x = random_tensor({4, C, T}, 1);
    const Tensor w = random_tensor({C, 1, 11}, 2);
    const Tensor b = random_tensor({C}, 3);
    for (auto _ : state)
        benchmark::DoNotOptimize(conv1d(x, w, b, {1, C}));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 4 * C * T));
}
BENCHMARK(BM_DepthwiseConv1d)->Args({64, 100})->Args({256, 100})->Args({256, 400});

void BM_PointwiseConv1d(benchmark::State &state) {
    const auto C = static_cast<std::size_t>(state.range(0));
    const Tensor x = random_tensor({4, C, 100}, 1);
    const Tensor w = random_tensor({C, C, 1}, 2);
    const Tensor b = random_tensor({C}, 3);
    for (auto _ : state)
        benchmark::DoNotOptimize(conv1d(x, w, b));
}
BENCHMARK(BM_PointwiseConv1d)->Arg(64)->Arg(256);

void BM_SelfAttention(benchmark::State &state) {
    const auto T = static_cast<std::size_t>(state.range(0));
    ParameterStore store(true, 4);
    MultiHeadAttention att(Scope(store, "mhsa"), 64, 4);
    const Tensor x = random_tensor({2, T, 64}, 5);
    const auto mask = AttentionMask::none(2, T, T);
    for (auto _ : state)
        benchmark::DoNotOptimize(att.forward(x, x, mask));
}
BENCHMARK(BM_SelfAttention)->Arg(32)->Arg(128);

void BM_CtcLossForwardBackward(benchmark::State &state) {
    const auto T = static_cast<std::size_t>(state.range(0));
    const std::size_t C = 33;
    Tensor lp(Shape{1, T, C}, log_softmax_rows(T, C, 6));
    lp.set_requires_grad(true);
    const std::vector<std::size_t> len = {T};
    std::vector<std::int64_t> target(T / 4);
    for (std::size_t i = 0; i < target.size(); ++i)
        target[i] = static_cast<std::int64_t>(i % 32);
    const std::vector<std::vector<std::int64_t>> targets = {target};
    for (auto _ : state) {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = ctc_loss(lp, len, targets, 32).loss;
        }
        backward(tape, loss);
        benchmark::DoNotOptimize(lp.grad());
    }
}
BENCHMARK(BM_CtcLossForwardBackward)->Arg(50)->Arg(200);

void BM_PrefixBeamSearch(benchmark::State &state) {
    const auto beam = static_cast<std::size_t>(state.range(0));
    const std::size_t T = 100, C = 33;
    const auto lp = log_softmax_rows(T, C, 7);
    for (auto _ : state)
        benchmark::DoNotOptimize(ctc_prefix_beam_search(lp, T, C, beam, 32));
}
BENCHMARK(BM_PrefixBeamSearch)->Arg(1)->Arg(8)->Arg(16);

void BM_Fbank(benchmark::State &state) {
    const auto wave = synth_waveform({1, 2, 3, 4, 5}, 8);
    for (auto _ : state)
        benchmark::DoNotOptimize(fbank(wave, 0.0, 0));
}
BENCHMARK(BM_Fbank);

void BM_EncoderForward(benchmark::State &state) {
    const auto variant = state.range(0) == 0 ? Variant::original : Variant::attention;
    CitrinetModel model(small_config(variant), 9);
    const Tensor feats = random_tensor({kNumMelBins, 200}, 10);
    const std::vector<Tensor> items = {feats, feats};
    const auto batch = make_feature_batch(items);
    for (auto _ : state)
        benchmark::DoNotOptimize(model.encode(batch, ForwardContext{false, nullptr}));
    state.SetLabel(variant == Variant::original ? "C" : "Att-C");
}
BENCHMARK(BM_EncoderForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
