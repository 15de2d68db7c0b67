#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "citrinet/tensor.hpp"

namespace citrinet {

inline constexpr std::size_t kNumMelBins = 80;
inline constexpr std::size_t kSampleRate = 16000;
inline constexpr std::size_t kFrameLength = 400; // 25 ms
inline constexpr std::size_t kFrameShift = 160;  // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kCmvnEps = 1e-8;

double hz_to_mel(double hz); // HTK: 2595 log10(1 + f/700)
double mel_to_hz(double mel);

std::size_t fbank_frame_count(std::size_t num_samples);

// Triangular mel weights, [kNumMelBins][kFftSize/2 + 1], spanning 0-8000 Hz.
const std::vector<std::vector<double>> &mel_filterbank();

// Log mel filterbank energies, [80, T] with T = floor((len - 400)/160) + 1.
// Seeded Gaussian dither scaled by dither_scale, Hann window, DFT magnitude.
Tensor fbank(std::span<const double> wave, double dither_scale, std::uint64_t seed);

struct CmvnStats {
    std::vector<double> mean;
    std::vector<double> variance;
    std::size_t frames = 0;
};

// Global statistics over the valid frames of a corpus of [80, T] matrices.
// valid_len may be empty (all frames valid) or give one length per matrix.
CmvnStats cmvn_fit(std::span<const Tensor> corpus, std::span<const std::size_t> valid_len = {});
Tensor cmvn_apply(const Tensor &x, const CmvnStats &stats);
Tensor cmvn_invert(const Tensor &x, const CmvnStats &stats);

// Text format: "frames N" then one "idx mean variance" line per dimension.
void write_cmvn(std::ostream &os, const CmvnStats &stats);
CmvnStats read_cmvn(std::istream &is);

struct SpecAugmentOptions {
    std::size_t freq_masks = 2;
    std::size_t max_freq_width = 10;
    std::size_t time_masks = 2;
    std::size_t max_time_width = 50;
};

struct MaskSpan {
    std::size_t start = 0;
    std::size_t width = 0;
};

struct SpecAugmentMasks {
    std::vector<MaskSpan> freq;
    std::vector<MaskSpan> time;
};

SpecAugmentMasks draw_spec_augment(std::size_t dims, std::size_t frames, std::uint64_t seed,
                                   const SpecAugmentOptions &opts = {});
Tensor apply_spec_augment(const Tensor &x, const SpecAugmentMasks &masks);
Tensor spec_augment(const Tensor &x, std::uint64_t seed, const SpecAugmentOptions &opts = {});

struct FeatureBatch {
    Tensor features; // [B, 80, Tmax], zero beyond valid_len
    std::vector<std::size_t> valid_len;
    std::size_t sample_rate = kSampleRate;

    std::size_t batch_size() const { return valid_len.size(); }
    std::size_t max_frames() const { return features.dim(2); }
};

// Pads [80, T_i] matrices into one batch; pad_to (if larger) extends Tmax.
FeatureBatch make_feature_batch(std::span<const Tensor> items, std::size_t pad_to = 0);

// Binary debug dump: "FBNK", u32 dims, u32 frames, f64 row-major (little-endian).
void write_feature_dump(std::ostream &os, const Tensor &features);
Tensor read_feature_dump(std::istream &is);

} // namespace citrinet
