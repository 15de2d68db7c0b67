#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace citrinet {

// Token slots available to the tone synthesizer.
inline constexpr std::size_t kMaxSynthTokens = 64;
inline constexpr std::size_t kToneSamples = 1920; // 120 ms at 16 kHz

// Fixed, strictly increasing tone frequency of a token slot in [0, 64).
double token_frequency(std::int64_t token);

struct SynthSample {
    std::vector<double> wave; // 16 kHz, int16 amplitude scale
    std::vector<std::int64_t> tokens;
    std::uint64_t seed = 0;
};

// One pure tone per token separated by seeded silence gaps. Equal
// (tokens, seed) always give the same waveform.
std::vector<double> synth_waveform(const std::vector<std::int64_t> &tokens, std::uint64_t seed);

// n samples with lengths uniform in [min_len, max_len] over tokens
// [0, vocab_subset).
std::vector<SynthSample> synth_dataset(std::size_t n, std::uint64_t seed, std::size_t vocab_subset,
                                       std::size_t min_len, std::size_t max_len);

// Manifest: one `seed<TAB>t1 t2 ...` line per sample; waveforms are
// regenerated on read.
void write_manifest(std::ostream &os, const std::vector<SynthSample> &samples);
std::vector<SynthSample> read_manifest(std::istream &is);

} // namespace citrinet
