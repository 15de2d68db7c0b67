#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "citrinet/config.hpp"
#include "citrinet/tensor.hpp"

namespace citrinet {

struct GradcheckOptions {
    double step = 1e-5;      // central-difference half width
    double threshold = 1e-4; // max allowed relative error
    // |analytic - numeric| / max(|analytic|, |numeric|, floor)
    double floor = 1e-6;
    std::size_t max_entries = 0; // sampled entries per tensor; 0 checks all
    std::uint64_t seed = 0;      // entry sampling
};

struct TensorGradReport {
    std::string name;
    std::size_t checked = 0;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool passed = true;
};

struct GradcheckReport {
    std::vector<TensorGradReport> tensors;

    bool passed() const;
    double worst() const;
    std::vector<std::string> failing() const;
};

double grad_rel_err(double analytic, double numeric, double floor);

// Compares the tape gradient of loss_fn() with central differences for every
// listed tensor. loss_fn must be deterministic and return a scalar.
GradcheckReport check_gradients(const std::function<Tensor()> &loss_fn,
                                const std::vector<std::pair<std::string, Tensor>> &inputs,
                                const GradcheckOptions &opts = {});

// Tiny Att-C model exercising every parameter kind (SE, Res, FFN, MHSA,
// both decoders, CTC head) with dropout and augmentation off.
ModelConfig gradcheck_config();

// Checks every parameter tensor of cfg's model on a seeded random batch
// under the combined training loss.
GradcheckReport gradcheck_model(const ModelConfig &cfg, std::uint64_t seed, const GradcheckOptions &opts = {});

} // namespace citrinet
