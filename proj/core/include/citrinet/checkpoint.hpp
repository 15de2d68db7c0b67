#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "citrinet/config.hpp"
#include "citrinet/features.hpp"
#include "citrinet/model.hpp"
#include "citrinet/optim.hpp"

namespace citrinet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    ParameterStore::Kind kind = ParameterStore::Kind::parameter;
    Shape shape;
    std::vector<double> values;

    bool operator==(const NamedTensor &) const = default;
};

// Self-describing training snapshot. Layout (little-endian):
//   "CITR" u32 version
//   u64 config length, config text
//   u64 tensor count, then per tensor: u32 name length, name, u8 kind,
//       u32 rank, u64 extents
//   payload: f64 values of every tensor in directory order
//   u8 has optimizer [u64 step, per parameter: u8 initialized, f64 v, f64 m...]
//   u64 rng state length, rng state text
//   u64 step
struct Checkpoint {
    ModelConfig config;
    std::vector<NamedTensor> tensors;
    std::optional<Novograd::State> optimizer;
    std::string rng_state;
    std::uint64_t step = 0;
};

// Global feature statistics travel as the buffers cmvn.mean, cmvn.variance
// and cmvn.frames.
Checkpoint capture_checkpoint(const CitrinetModel &model, const Novograd *opt, const Rng *rng, std::uint64_t step,
                              const CmvnStats *cmvn);

// Copies tensors into the model by name; shapes and the name set must match.
void restore_model(const Checkpoint &ckpt, CitrinetModel &model);
std::optional<CmvnStats> checkpoint_cmvn(const Checkpoint &ckpt);

void write_checkpoint(std::ostream &os, const Checkpoint &ckpt);
Checkpoint read_checkpoint(std::istream &is);
void save_checkpoint(const std::string &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::string &path);

} // namespace citrinet
