#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "citrinet/layers.hpp"

namespace citrinet {

enum class Variant { original, attention }; // "C" and "Att-C"

std::string to_string(Variant v);
std::string to_string(NormKind k);
std::string to_string(Activation a);

// Everything needed to rebuild, train and decode a model. Serialized as flat
// `key = value` text; see to_text().
struct ModelConfig {
    Variant variant = Variant::attention;
    std::size_t channels = 384;
    std::size_t total_blocks = 13;
    std::size_t vocab = 4096;
    std::size_t epilog_dim = 640;
    std::size_t heads = 8; // encoder MHSA
    std::size_t decoder_blocks = 3;
    std::size_t decoder_heads = 8;
    std::size_t decoder_dim = 0; // 0: derived from channels
    double dropout = 0.1;

    // ablation toggles
    bool use_bidecoder = true;
    bool use_ffn = true;
    NormKind norm = NormKind::layer;
    Activation act = Activation::swish;

    // losses
    double lambda1 = 0.3;
    double lambda2 = 0.7;
    double delta = 0.1;

    // optimization
    double lr_max = 0.05;
    double lr_min = 0.0;
    std::size_t warmup_steps = 10000;
    std::size_t total_steps = 100000;
    double beta1 = 0.8;
    double beta2 = 0.25;
    double weight_decay = 0.0;
    double grad_clip = 0.0; // global-norm clip; 0 disables
    std::size_t max_frames_per_batch = 4000;
    std::size_t checkpoint_every = 0;

    // front end
    double dither = 1.0;
    bool spec_augment = true;

    // decoding
    std::size_t beam_width = 8;
    double w_ctc = 0.3;

    // synthetic corpus
    std::size_t synth_samples = 10;
    std::size_t synth_vocab = 8;
    std::size_t synth_min_len = 2;
    std::size_t synth_max_len = 5;

    bool operator==(const ModelConfig &) const = default;
};

// Defaults of a variant: C uses batch norm, ReLU, 23 blocks and pure CTC;
// Att-C uses layer norm, Swish, 13 blocks and the bidirectional decoder.
ModelConfig default_config(Variant v);

bool is_allowed_total_blocks(std::size_t total);

// Throws ConfigError on any inconsistent setting.
void validate(const ModelConfig &cfg);

// Decoder width: the explicit decoder_dim, else 256 / 384 / 512 by channels.
std::size_t resolved_decoder_dim(const ModelConfig &cfg);

// Attention decoders are built only for Att-C style configs with the
// bi-decoder on and a non-zero attention weight.
bool has_decoders(const ModelConfig &cfg);

// Sets one key from its text form; unknown keys and malformed values throw
// ConfigError. Setting "variant" resets every other field to that variant's
// defaults.
void set_config_value(ModelConfig &cfg, const std::string &key, const std::string &value);

// `key = value` lines, '#' comments. A variant line is applied first.
ModelConfig parse_config(std::istream &is);
ModelConfig load_config(const std::string &path);

// Every key in a fixed order, reals printed round-trip exact.
std::string to_text(const ModelConfig &cfg);

// Special ids are appended after the V token ids.
struct Vocabulary {
    std::size_t size = 4096;

    std::int64_t blank() const { return static_cast<std::int64_t>(size); }
    std::int64_t sos() const { return static_cast<std::int64_t>(size) + 1; }
    std::int64_t eos() const { return static_cast<std::int64_t>(size) + 2; }
    std::int64_t pad() const { return static_cast<std::int64_t>(size) + 3; }

    std::size_t ctc_classes() const { return size + 1; }
    // Decoder classes: tokens, then sos, eos, pad (blank is not a decoder class).
    std::size_t decoder_classes() const { return size + 3; }
    std::int64_t decoder_sos() const { return static_cast<std::int64_t>(size); }
    std::int64_t decoder_eos() const { return static_cast<std::int64_t>(size) + 1; }
    std::int64_t decoder_pad() const { return static_cast<std::int64_t>(size) + 2; }
};

} // namespace citrinet
