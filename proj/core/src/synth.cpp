#include "citrinet/synth.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "citrinet/error.hpp"
#include "citrinet/features.hpp"
#include "citrinet/random.hpp"

namespace citrinet {

namespace {

constexpr double kLowHz = 250.0;
constexpr double kHighHz = 6000.0;
constexpr double kAmplitude = 8000.0;
constexpr std::size_t kEdgeSilence = 800;  // 50 ms
constexpr std::size_t kMinGap = 640;       // 40 ms
constexpr std::size_t kMaxGap = 1280;      // 80 ms
constexpr std::size_t kRamp = 80;          // 5 ms raised-cosine edges

} // namespace

double token_frequency(std::int64_t token) {
    if (token < 0 || token >= static_cast<std::int64_t>(kMaxSynthTokens))
        throw InputError("synth token " + std::to_string(token) + " outside [0, 64)");
    const double lo = hz_to_mel(kLowHz), hi = hz_to_mel(kHighHz);
    const double step = (hi - lo) / static_cast<double>(kMaxSynthTokens - 1);
    return mel_to_hz(lo + step * static_cast<double>(token));
}

std::vector<double> synth_waveform(const std::vector<std::int64_t> &tokens, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x5e7d));
    std::vector<double> wave(kEdgeSilence, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0)
            wave.resize(wave.size() + static_cast<std::size_t>(uniform_int(rng, kMinGap, kMaxGap)), 0.0);
        const double f = token_frequency(tokens[i]);
        const double phase = 2.0 * std::numbers::pi * uniform01(rng);
        for (std::size_t n = 0; n < kToneSamples; ++n) {
            double env = 1.0;
            const std::size_t edge = std::min(n, kToneSamples - 1 - n);
            if (edge < kRamp)
                env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(edge) / kRamp);
            wave.push_back(kAmplitude * env *
                           std::sin(2.0 * std::numbers::pi * f * static_cast<double>(n) / kSampleRate + phase));
        }
    }
    wave.resize(wave.size() + kEdgeSilence, 0.0);
    return wave;
}

std::vector<SynthSample> synth_dataset(std::size_t n, std::uint64_t seed, std::size_t vocab_subset,
                                       std::size_t min_len, std::size_t max_len) {
    if (vocab_subset == 0 || vocab_subset > kMaxSynthTokens)
        throw ConfigError("synth vocabulary must hold 1..64 tokens");
    if (min_len == 0 || min_len > max_len)
        throw ConfigError("synth lengths must satisfy 1 <= min_len <= max_len");
    std::vector<SynthSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SynthSample s;
        s.seed = mix_seed(seed, i);
        Rng rng(mix_seed(s.seed, 0x70c3));
        const auto len = static_cast<std::size_t>(
            uniform_int(rng, static_cast<std::int64_t>(min_len), static_cast<std::int64_t>(max_len)));
        for (std::size_t k = 0; k < len; ++k)
            s.tokens.push_back(uniform_int(rng, 0, static_cast<std::int64_t>(vocab_subset) - 1));
        s.wave = synth_waveform(s.tokens, s.seed);
        out.push_back(std::move(s));
    }
    return out;
}

void write_manifest(std::ostream &os, const std::vector<SynthSample> &samples) {
    for (const auto &s : samples) {
        os << s.seed << '\t';
        for (std::size_t i = 0; i < s.tokens.size(); ++i)
            os << (i ? " " : "") << s.tokens[i];
        os << '\n';
    }
}

std::vector<SynthSample> read_manifest(std::istream &is) {
    std::vector<SynthSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw InputError("manifest line " + std::to_string(lineno) + ": expected 'seed<TAB>tokens'");
        SynthSample s;
        try {
            s.seed = std::stoull(line.substr(0, tab));
        } catch (const std::exception &) {
            throw InputError("manifest line " + std::to_string(lineno) + ": bad seed");
        }
        std::istringstream toks(line.substr(tab + 1));
        std::int64_t t;
        while (toks >> t)
            s.tokens.push_back(t);
        if (!toks.eof())
            throw InputError("manifest line " + std::to_string(lineno) + ": bad token list");
        s.wave = synth_waveform(s.tokens, s.seed);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace citrinet
