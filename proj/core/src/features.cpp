#include "citrinet/features.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "citrinet/error.hpp"
#include "citrinet/random.hpp"

namespace citrinet {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t fbank_frame_count(std::size_t num_samples) {
    if (num_samples < kFrameLength)
        return 0;
    return (num_samples - kFrameLength) / kFrameShift + 1;
}

const std::vector<std::vector<double>> &mel_filterbank() {
    static const std::vector<std::vector<double>> bank = [] {
        constexpr std::size_t bins = kFftSize / 2 + 1;
        const double mel_lo = hz_to_mel(0.0);
        const double mel_hi = hz_to_mel(kSampleRate / 2.0);
        const double step = (mel_hi - mel_lo) / static_cast<double>(kNumMelBins + 1);
        std::vector<std::vector<double>> w(kNumMelBins, std::vector<double>(bins, 0.0));
        for (std::size_t m = 0; m < kNumMelBins; ++m) {
            const double left = mel_lo + step * static_cast<double>(m);
            const double center = left + step;
            const double right = center + step;
            for (std::size_t k = 0; k < bins; ++k) {
                const double mel = hz_to_mel(static_cast<double>(k) * kSampleRate / kFftSize);
                if (mel > left && mel < right)
                    w[m][k] = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
            }
        }
        return w;
    }();
    return bank;
}

namespace {

struct DftTables {
    std::vector<double> cos_t, sin_t; // [bins][kFrameLength]
    std::vector<double> window;

    DftTables() {
        constexpr std::size_t bins = kFftSize / 2 + 1;
        cos_t.resize(bins * kFrameLength);
        sin_t.resize(bins * kFrameLength);
        for (std::size_t k = 0; k < bins; ++k)
            for (std::size_t n = 0; n < kFrameLength; ++n) {
                // Frames are zero-padded to kFftSize, so only the first
                // kFrameLength terms of each basis function contribute.
                const double ang = 2.0 * std::numbers::pi * static_cast<double>((k * n) % kFftSize) /
                                   static_cast<double>(kFftSize);
                cos_t[k * kFrameLength + n] = std::cos(ang);
                sin_t[k * kFrameLength + n] = std::sin(ang);
            }
        window.resize(kFrameLength);
        for (std::size_t n = 0; n < kFrameLength; ++n)
            window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                             static_cast<double>(kFrameLength - 1));
    }
};

const DftTables &dft_tables() {
    static const DftTables tables;
    return tables;
}

} // namespace

Tensor fbank(std::span<const double> wave, double dither_scale, std::uint64_t seed) {
    const std::size_t frames = fbank_frame_count(wave.size());
    if (frames == 0)
        throw InputError("fbank: waveform of " + std::to_string(wave.size()) +
                         " samples is shorter than one 400-sample window");
    constexpr std::size_t bins = kFftSize / 2 + 1;
    const auto &tab = dft_tables();
    const auto &bank = mel_filterbank();
    Rng rng(seed);

    std::vector<double> out(kNumMelBins * frames);
    std::vector<double> frame(kFrameLength);
    std::vector<double> mag(bins);
    for (std::size_t f = 0; f < frames; ++f) {
        const double *src = wave.data() + f * kFrameShift;
        for (std::size_t n = 0; n < kFrameLength; ++n) {
            double v = src[n];
            if (dither_scale != 0.0)
                v += dither_scale * standard_normal(rng);
            frame[n] = v * tab.window[n];
        }
        for (std::size_t k = 0; k < bins; ++k) {
            const double *c = tab.cos_t.data() + k * kFrameLength;
            const double *s = tab.sin_t.data() + k * kFrameLength;
            double re = 0.0, im = 0.0;
            for (std::size_t n = 0; n < kFrameLength; ++n) {
                re += frame[n] * c[n];
                im -= frame[n] * s[n];
            }
            mag[k] = std::sqrt(re * re + im * im);
        }
        for (std::size_t m = 0; m < kNumMelBins; ++m) {
            double e = 0.0;
            for (std::size_t k = 0; k < bins; ++k)
                e += bank[m][k] * mag[k];
            out[m * frames + f] = std::log(std::max(e, kLogFloor));
        }
    }
    return Tensor(Shape{kNumMelBins, frames}, std::move(out));
}

CmvnStats cmvn_fit(std::span<const Tensor> corpus, std::span<const std::size_t> valid_len) {
    if (corpus.empty())
        throw InputError("cmvn_fit: empty corpus");
    if (!valid_len.empty() && valid_len.size() != corpus.size())
        throw DimensionError("cmvn_fit: one valid length per matrix required");
    const std::size_t dims = corpus.front().dim(0);
    CmvnStats st;
    st.mean.assign(dims, 0.0);
    st.variance.assign(dims, 0.0);
    auto frames_of = [&](std::size_t i) {
        const std::size_t T = corpus[i].dim(1);
        return valid_len.empty() ? T : std::min(valid_len[i], T);
    };
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].rank() != 2 || corpus[i].dim(0) != dims)
            throw DimensionError("cmvn_fit: inconsistent feature matrix " + shape_str(corpus[i].shape()));
        const std::size_t T = corpus[i].dim(1);
        const auto v = corpus[i].data();
        const std::size_t n = frames_of(i);
        for (std::size_t d = 0; d < dims; ++d)
            for (std::size_t t = 0; t < n; ++t)
                st.mean[d] += v[d * T + t];
        st.frames += n;
    }
    if (st.frames == 0)
        throw InputError("cmvn_fit: corpus has no valid frames");
    for (auto &m : st.mean)
        m /= static_cast<double>(st.frames);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::size_t T = corpus[i].dim(1);
        const auto v = corpus[i].data();
        const std::size_t n = frames_of(i);
        for (std::size_t d = 0; d < dims; ++d)
            for (std::size_t t = 0; t < n; ++t) {
                const double dv = v[d * T + t] - st.mean[d];
                st.variance[d] += dv * dv;
            }
    }
    for (auto &s : st.variance)
        s /= static_cast<double>(st.frames);
    return st;
}

namespace {

void check_cmvn(const Tensor &x, const CmvnStats &stats) {
    if (x.rank() != 2 || x.dim(0) != stats.mean.size() || stats.variance.size() != stats.mean.size())
        throw DimensionError("cmvn: features " + shape_str(x.shape()) + " do not match " +
                             std::to_string(stats.mean.size()) + "-dim statistics");
    if (stats.frames == 0)
        throw InputError("cmvn: statistics were fitted on zero frames");
}

} // namespace

Tensor cmvn_apply(const Tensor &x, const CmvnStats &stats) {
    check_cmvn(x, stats);
    const std::size_t D = x.dim(0), T = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t d = 0; d < D; ++d) {
        const double inv = 1.0 / std::sqrt(stats.variance[d] + kCmvnEps);
        for (std::size_t t = 0; t < T; ++t)
            out[d * T + t] = (out[d * T + t] - stats.mean[d]) * inv;
    }
    return Tensor(x.shape(), std::move(out));
}

Tensor cmvn_invert(const Tensor &x, const CmvnStats &stats) {
    check_cmvn(x, stats);
    const std::size_t D = x.dim(0), T = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t d = 0; d < D; ++d) {
        const double s = std::sqrt(stats.variance[d] + kCmvnEps);
        for (std::size_t t = 0; t < T; ++t)
            out[d * T + t] = out[d * T + t] * s + stats.mean[d];
    }
    return Tensor(x.shape(), std::move(out));
}

void write_cmvn(std::ostream &os, const CmvnStats &stats) {
    os << "frames " << stats.frames << '\n';
    os << std::setprecision(17);
    for (std::size_t d = 0; d < stats.mean.size(); ++d)
        os << d << ' ' << stats.mean[d] << ' ' << stats.variance[d] << '\n';
}

CmvnStats read_cmvn(std::istream &is) {
    CmvnStats st;
    std::string word;
    if (!(is >> word >> st.frames) || word != "frames")
        throw InputError("cmvn file: missing 'frames N' header");
    std::size_t idx;
    double m, v;
    while (is >> idx >> m >> v) {
        if (idx != st.mean.size())
            throw InputError("cmvn file: dimension index " + std::to_string(idx) + " out of order");
        if (v < 0.0)
            throw InputError("cmvn file: negative variance");
        st.mean.push_back(m);
        st.variance.push_back(v);
    }
    if (st.mean.empty())
        throw InputError("cmvn file: no dimensions");
    return st;
}

SpecAugmentMasks draw_spec_augment(std::size_t dims, std::size_t frames, std::uint64_t seed,
                                   const SpecAugmentOptions &opts) {
    Rng rng(seed);
    SpecAugmentMasks masks;
    auto draw = [&](std::size_t extent, std::size_t max_width) {
        const auto w = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(std::min(max_width, extent))));
        const auto s = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(extent - w)));
        return MaskSpan{s, w};
    };
    for (std::size_t i = 0; i < opts.freq_masks; ++i)
        masks.freq.push_back(draw(dims, opts.max_freq_width));
    for (std::size_t i = 0; i < opts.time_masks; ++i)
        masks.time.push_back(draw(frames, opts.max_time_width));
    return masks;
}

Tensor apply_spec_augment(const Tensor &x, const SpecAugmentMasks &masks) {
    if (x.rank() != 2)
        throw DimensionError("spec_augment expects [D,T], got " + shape_str(x.shape()));
    const std::size_t D = x.dim(0), T = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (const auto &m : masks.freq)
        for (std::size_t d = m.start; d < std::min(D, m.start + m.width); ++d)
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(d * T), T, 0.0);
    for (const auto &m : masks.time)
        for (std::size_t d = 0; d < D; ++d)
            for (std::size_t t = m.start; t < std::min(T, m.start + m.width); ++t)
                out[d * T + t] = 0.0;
    return Tensor(x.shape(), std::move(out));
}

Tensor spec_augment(const Tensor &x, std::uint64_t seed, const SpecAugmentOptions &opts) {
    if (x.rank() != 2)
        throw DimensionError("spec_augment expects [D,T], got " + shape_str(x.shape()));
    return apply_spec_augment(x, draw_spec_augment(x.dim(0), x.dim(1), seed, opts));
}

FeatureBatch make_feature_batch(std::span<const Tensor> items, std::size_t pad_to) {
    if (items.empty())
        throw InputError("make_feature_batch: no items");
    const std::size_t D = items.front().dim(0);
    std::size_t tmax = pad_to;
    for (const auto &x : items) {
        if (x.rank() != 2 || x.dim(0) != D)
            throw DimensionError("make_feature_batch: inconsistent item " + shape_str(x.shape()));
        tmax = std::max(tmax, x.dim(1));
    }
    FeatureBatch batch;
    std::vector<double> data(items.size() * D * tmax, 0.0);
    for (std::size_t b = 0; b < items.size(); ++b) {
        const std::size_t T = items[b].dim(1);
        const auto v = items[b].data();
        for (std::size_t d = 0; d < D; ++d)
            std::copy_n(v.data() + d * T, T, data.data() + (b * D + d) * tmax);
        batch.valid_len.push_back(T);
    }
    batch.features = Tensor(Shape{items.size(), D, tmax}, std::move(data));
    return batch;
}

void write_feature_dump(std::ostream &os, const Tensor &features) {
    if (features.rank() != 2)
        throw DimensionError("feature dump expects [D,T], got " + shape_str(features.shape()));
    io::put_bytes(os, "FBNK");
    io::put_u32(os, static_cast<std::uint32_t>(features.dim(0)));
    io::put_u32(os, static_cast<std::uint32_t>(features.dim(1)));
    for (double v : features.data())
        io::put_f64(os, v);
}

Tensor read_feature_dump(std::istream &is) {
    if (io::get_bytes(is, 4) != "FBNK")
        throw InputError("feature dump: bad magic");
    const std::size_t D = io::get_u32(is);
    const std::size_t T = io::get_u32(is);
    std::vector<double> v(D * T);
    for (auto &x : v)
        x = io::get_f64(is);
    return Tensor(Shape{D, T}, std::move(v));
}

} // namespace citrinet
