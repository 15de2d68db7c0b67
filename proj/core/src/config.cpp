#include "citrinet/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "citrinet/error.hpp"

namespace citrinet {

std::string to_string(Variant v) { return v == Variant::original ? "C" : "Att-C"; }
std::string to_string(NormKind k) { return k == NormKind::layer ? "layer" : "batch"; }
std::string to_string(Activation a) { return a == Activation::swish ? "swish" : "relu"; }

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

Variant parse_variant(const std::string &s) {
    const auto v = lower(s);
    if (v == "c" || v == "citrinet" || v == "original")
        return Variant::original;
    if (v == "att-c" || v == "attc" || v == "att_c" || v == "attention")
        return Variant::attention;
    throw ConfigError("unknown variant '" + s + "' (expected C or Att-C)");
}

std::size_t parse_size(const std::string &key, const std::string &s) {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
    return v;
}

double parse_real(const std::string &key, const std::string &s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size())
            return v;
    } catch (const std::exception &) {
    }
    throw ConfigError("config key '" + key + "': expected a real number, got '" + s + "'");
}

bool parse_bool(const std::string &key, const std::string &s) {
    const auto v = lower(s);
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

std::string real_text(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    const char *key;
    std::function<std::string(const ModelConfig &)> get;
    std::function<void(ModelConfig &, const std::string &, const std::string &)> set;
};

template <typename M> Field size_field(const char *key, M member) {
    return {key, [member](const ModelConfig &c) { return std::to_string(c.*member); },
            [member](ModelConfig &c, const std::string &k, const std::string &v) { c.*member = parse_size(k, v); }};
}

template <typename M> Field real_field(const char *key, M member) {
    return {key, [member](const ModelConfig &c) { return real_text(c.*member); },
            [member](ModelConfig &c, const std::string &k, const std::string &v) { c.*member = parse_real(k, v); }};
}

template <typename M> Field bool_field(const char *key, M member) {
    return {key, [member](const ModelConfig &c) { return std::string(c.*member ? "true" : "false"); },
            [member](ModelConfig &c, const std::string &k, const std::string &v) { c.*member = parse_bool(k, v); }};
}

// Serialization order. "variant" comes first so that parsing resets defaults
// before any other key lands.
const std::vector<Field> &fields() {
    static const std::vector<Field> table = {
        {"variant", [](const ModelConfig &c) { return to_string(c.variant); },
         [](ModelConfig &c, const std::string &, const std::string &v) { c = default_config(parse_variant(v)); }},
        size_field("channels", &ModelConfig::channels),
        size_field("total_blocks", &ModelConfig::total_blocks),
        size_field("vocab", &ModelConfig::vocab),
        size_field("epilog_dim", &ModelConfig::epilog_dim),
        size_field("heads", &ModelConfig::heads),
        size_field("decoder_blocks", &ModelConfig::decoder_blocks),
        size_field("decoder_heads", &ModelConfig::decoder_heads),
        size_field("decoder_dim", &ModelConfig::decoder_dim),
        real_field("dropout", &ModelConfig::dropout),
        bool_field("use_bidecoder", &ModelConfig::use_bidecoder),
        bool_field("use_ffn", &ModelConfig::use_ffn),
        {"norm", [](const ModelConfig &c) { return to_string(c.norm); },
         [](ModelConfig &c, const std::string &k, const std::string &v) {
             const auto s = lower(v);
             if (s == "layer")
                 c.norm = NormKind::layer;
             else if (s == "batch")
                 c.norm = NormKind::batch;
             else
                 throw ConfigError("config key '" + k + "': expected layer|batch, got '" + v + "'");
         }},
        {"act", [](const ModelConfig &c) { return to_string(c.act); },
         [](ModelConfig &c, const std::string &k, const std::string &v) {
             const auto s = lower(v);
             if (s == "swish")
                 c.act = Activation::swish;
             else if (s == "relu")
                 c.act = Activation::relu;
             else
                 throw ConfigError("config key '" + k + "': expected swish|relu, got '" + v + "'");
         }},
        real_field("lambda1", &ModelConfig::lambda1),
        real_field("lambda2", &ModelConfig::lambda2),
        real_field("delta", &ModelConfig::delta),
        real_field("lr_max", &ModelConfig::lr_max),
        real_field("lr_min", &ModelConfig::lr_min),
        size_field("warmup_steps", &ModelConfig::warmup_steps),
        size_field("total_steps", &ModelConfig::total_steps),
        real_field("beta1", &ModelConfig::beta1),
        real_field("beta2", &ModelConfig::beta2),
        real_field("weight_decay", &ModelConfig::weight_decay),
        real_field("grad_clip", &ModelConfig::grad_clip),
        size_field("max_frames_per_batch", &ModelConfig::max_frames_per_batch),
        size_field("checkpoint_every", &ModelConfig::checkpoint_every),
        real_field("dither", &ModelConfig::dither),
        bool_field("spec_augment", &ModelConfig::spec_augment),
        size_field("beam_width", &ModelConfig::beam_width),
        real_field("w_ctc", &ModelConfig::w_ctc),
        size_field("synth_samples", &ModelConfig::synth_samples),
        size_field("synth_vocab", &ModelConfig::synth_vocab),
        size_field("synth_min_len", &ModelConfig::synth_min_len),
        size_field("synth_max_len", &ModelConfig::synth_max_len),
    };
    return table;
}

void check_unit(const char *key, double v) {
    if (!(v >= 0.0 && v <= 1.0))
        throw ConfigError(std::string(key) + " must lie in [0, 1], got " + real_text(v));
}

} // namespace

ModelConfig default_config(Variant v) {
    ModelConfig c;
    c.variant = v;
    if (v == Variant::original) {
        c.total_blocks = 23;
        c.norm = NormKind::batch;
        c.act = Activation::relu;
        c.use_bidecoder = false;
        c.lambda1 = 1.0;
    }
    return c;
}

bool is_allowed_total_blocks(std::size_t total) {
    static constexpr std::array<std::size_t, 11> allowed = {5, 8, 9, 10, 11, 12, 13, 15, 17, 20, 23};
    return std::find(allowed.begin(), allowed.end(), total) != allowed.end();
}

void validate(const ModelConfig &cfg) {
    if (!is_allowed_total_blocks(cfg.total_blocks))
        throw ConfigError("total_blocks " + std::to_string(cfg.total_blocks) +
                          " not in {5, 8, 9, 10, 11, 12, 13, 15, 17, 20, 23}");
    if (cfg.channels == 0 || cfg.channels % 8 != 0)
        throw ConfigError("channels must be a positive multiple of 8, got " + std::to_string(cfg.channels));
    if (cfg.epilog_dim == 0 || cfg.epilog_dim % 8 != 0)
        throw ConfigError("epilog_dim must be a positive multiple of 8, got " + std::to_string(cfg.epilog_dim));
    if (cfg.vocab == 0)
        throw ConfigError("vocab must be positive");
    if (cfg.variant == Variant::attention && (cfg.heads == 0 || cfg.channels % cfg.heads != 0))
        throw ConfigError("channels " + std::to_string(cfg.channels) + " not divisible by " +
                          std::to_string(cfg.heads) + " heads");
    check_unit("lambda1", cfg.lambda1);
    check_unit("lambda2", cfg.lambda2);
    check_unit("w_ctc", cfg.w_ctc);
    if (!(cfg.delta >= 0.0 && cfg.delta < 1.0))
        throw ConfigError("delta must lie in [0, 1)");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
        throw ConfigError("dropout must lie in [0, 1)");
    if (!cfg.use_bidecoder && cfg.lambda1 != 1.0)
        throw ConfigError("use_bidecoder = false requires lambda1 = 1");
    if (has_decoders(cfg)) {
        const auto d = resolved_decoder_dim(cfg);
        if (cfg.decoder_heads == 0 || d % cfg.decoder_heads != 0)
            throw ConfigError("decoder width " + std::to_string(d) + " not divisible by " +
                              std::to_string(cfg.decoder_heads) + " heads");
        if (cfg.decoder_blocks == 0)
            throw ConfigError("decoder_blocks must be positive");
    }
    if (cfg.warmup_steps > cfg.total_steps)
        throw ConfigError("warmup_steps exceeds total_steps");
    if (!(cfg.lr_max > 0.0) || cfg.lr_min < 0.0 || cfg.lr_min > cfg.lr_max)
        throw ConfigError("learning rates must satisfy 0 <= lr_min <= lr_max, lr_max > 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
        throw ConfigError("betas must lie in [0, 1)");
    if (cfg.beam_width == 0)
        throw ConfigError("beam_width must be positive");
    if (cfg.synth_vocab == 0 || cfg.synth_vocab > 64 || cfg.synth_vocab > cfg.vocab)
        throw ConfigError("synth_vocab must lie in [1, min(64, vocab)]");
    if (cfg.synth_min_len == 0 || cfg.synth_min_len > cfg.synth_max_len)
        throw ConfigError("synth lengths must satisfy 1 <= synth_min_len <= synth_max_len");
}

std::size_t resolved_decoder_dim(const ModelConfig &cfg) {
    if (cfg.decoder_dim != 0)
        return cfg.decoder_dim;
    if (cfg.channels == 256)
        return 256;
    if (cfg.channels == 384)
        return 384;
    return 512;
}

bool has_decoders(const ModelConfig &cfg) { return cfg.use_bidecoder && cfg.lambda1 < 1.0; }

void set_config_value(ModelConfig &cfg, const std::string &key, const std::string &value) {
    for (const auto &f : fields())
        if (key == f.key) {
            f.set(cfg, key, trim(value));
            return;
        }
    throw ConfigError("unknown config key '" + key + "'");
}

ModelConfig parse_config(std::istream &is) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    ModelConfig cfg;
    for (const auto &[k, v] : entries)
        if (k == "variant")
            set_config_value(cfg, k, v);
    for (const auto &[k, v] : entries)
        if (k != "variant")
            set_config_value(cfg, k, v);
    validate(cfg);
    return cfg;
}

ModelConfig load_config(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open config file '" + path + "'");
    return parse_config(in);
}

std::string to_text(const ModelConfig &cfg) {
    std::ostringstream os;
    for (const auto &f : fields())
        os << f.key << " = " << f.get(cfg) << '\n';
    return os.str();
}

} // namespace citrinet
