#include "citrinet/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "citrinet/error.hpp"

namespace citrinet {

namespace {

constexpr char kMagic[4] = {'C', 'I', 'T', 'R'};
const std::string kCmvnPrefix = "cmvn.";

} // namespace

Checkpoint capture_checkpoint(const CitrinetModel &model, const Novograd *opt, const Rng *rng, std::uint64_t step,
                              const CmvnStats *cmvn) {
    Checkpoint c;
    c.config = model.config();
    for (const auto &e : model.store().entries()) {
        if (!e.tensor.defined())
            throw ContractError("cannot checkpoint a shape-only model");
        const auto v = e.tensor.data();
        c.tensors.push_back({e.name, e.kind, e.shape, std::vector<double>(v.begin(), v.end())});
    }
    if (cmvn) {
        const std::size_t dims = cmvn->mean.size();
        c.tensors.push_back({kCmvnPrefix + "mean", ParameterStore::Kind::buffer, {dims}, cmvn->mean});
        c.tensors.push_back({kCmvnPrefix + "variance", ParameterStore::Kind::buffer, {dims}, cmvn->variance});
        c.tensors.push_back(
            {kCmvnPrefix + "frames", ParameterStore::Kind::buffer, {1}, {static_cast<double>(cmvn->frames)}});
    }
    if (opt)
        c.optimizer = opt->state();
    if (rng)
        c.rng_state = rng_state(*rng);
    c.step = step;
    return c;
}

void restore_model(const Checkpoint &ckpt, CitrinetModel &model) {
    std::map<std::string, const NamedTensor *> by_name;
    for (const auto &t : ckpt.tensors)
        if (t.name.rfind(kCmvnPrefix, 0) != 0)
            by_name[t.name] = &t;
    const auto &entries = model.store().entries();
    if (by_name.size() != entries.size())
        throw InputError("checkpoint holds " + std::to_string(by_name.size()) + " model tensors, model has " +
                         std::to_string(entries.size()));
    for (const auto &e : entries) {
        const auto it = by_name.find(e.name);
        if (it == by_name.end())
            throw InputError("checkpoint lacks tensor '" + e.name + "'");
        if (it->second->shape != e.shape || it->second->kind != e.kind)
            throw InputError("checkpoint tensor '" + e.name + "' has shape " + shape_str(it->second->shape) +
                             ", model expects " + shape_str(e.shape));
        auto dst = Tensor(e.tensor).mutable_data();
        std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
    }
}

std::optional<CmvnStats> checkpoint_cmvn(const Checkpoint &ckpt) {
    const NamedTensor *mean = nullptr, *var = nullptr, *frames = nullptr;
    for (const auto &t : ckpt.tensors) {
        if (t.name == kCmvnPrefix + "mean")
            mean = &t;
        else if (t.name == kCmvnPrefix + "variance")
            var = &t;
        else if (t.name == kCmvnPrefix + "frames")
            frames = &t;
    }
    if (!mean || !var || !frames)
        return std::nullopt;
    return CmvnStats{mean->values, var->values, static_cast<std::size_t>(frames->values.at(0))};
}

void write_checkpoint(std::ostream &os, const Checkpoint &ckpt) {
    os.write(kMagic, 4);
    io::put_u32(os, kCheckpointVersion);
    const std::string cfg = to_text(ckpt.config);
    io::put_u64(os, cfg.size());
    io::put_bytes(os, cfg);

    io::put_u64(os, ckpt.tensors.size());
    for (const auto &t : ckpt.tensors) {
        if (t.values.size() != numel(t.shape))
            throw ContractError("checkpoint tensor '" + t.name + "' size does not match its shape");
        io::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
        io::put_bytes(os, t.name);
        io::put_u8(os, t.kind == ParameterStore::Kind::parameter ? 0 : 1);
        io::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape)
            io::put_u64(os, d);
    }
    for (const auto &t : ckpt.tensors)
        for (double v : t.values)
            io::put_f64(os, v);

    io::put_u8(os, ckpt.optimizer ? 1 : 0);
    if (ckpt.optimizer) {
        const auto &st = *ckpt.optimizer;
        io::put_u64(os, st.step);
        io::put_u64(os, st.m.size());
        for (std::size_t i = 0; i < st.m.size(); ++i) {
            io::put_u8(os, st.initialized[i] ? 1 : 0);
            io::put_f64(os, st.v[i]);
            io::put_u64(os, st.m[i].size());
            for (double v : st.m[i])
                io::put_f64(os, v);
        }
    }
    io::put_u64(os, ckpt.rng_state.size());
    io::put_bytes(os, ckpt.rng_state);
    io::put_u64(os, ckpt.step);
    if (!os)
        throw InputError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream &is) {
    char magic[4];
    io::read_exact(is, magic, 4);
    if (!std::equal(magic, magic + 4, kMagic))
        throw InputError("not a checkpoint (bad magic)");
    if (const auto version = io::get_u32(is); version != kCheckpointVersion)
        throw InputError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    {
        std::istringstream cfg(io::get_bytes(is, io::get_u64(is)));
        c.config = parse_config(cfg);
    }
    const auto count = io::get_u64(is);
    c.tensors.resize(count);
    for (auto &t : c.tensors) {
        t.name = io::get_bytes(is, io::get_u32(is));
        const auto kind = io::get_u8(is);
        if (kind > 1)
            throw InputError("checkpoint tensor '" + t.name + "' has unknown kind");
        t.kind = kind == 0 ? ParameterStore::Kind::parameter : ParameterStore::Kind::buffer;
        t.shape.resize(io::get_u32(is));
        for (auto &d : t.shape)
            d = io::get_u64(is);
    }
    for (auto &t : c.tensors) {
        t.values.resize(numel(t.shape));
        for (auto &v : t.values)
            v = io::get_f64(is);
    }
    if (io::get_u8(is) != 0) {
        Novograd::State st;
        st.step = io::get_u64(is);
        const auto n = io::get_u64(is);
        st.m.resize(n);
        st.v.resize(n);
        st.initialized.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            st.initialized[i] = io::get_u8(is) != 0;
            st.v[i] = io::get_f64(is);
            st.m[i].resize(io::get_u64(is));
            for (auto &v : st.m[i])
                v = io::get_f64(is);
        }
        c.optimizer = std::move(st);
    }
    c.rng_state = io::get_bytes(is, io::get_u64(is));
    c.step = io::get_u64(is);
    return c;
}

void save_checkpoint(const std::string &path, const Checkpoint &ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw InputError("cannot open '" + path + "' for writing");
    write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw InputError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(is);
}

} // namespace citrinet
