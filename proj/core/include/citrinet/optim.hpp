#pragma once

#include <cstddef>
#include <vector>

#include "citrinet/tensor.hpp"

namespace citrinet {

struct NovogradOptions {
    double beta1 = 0.8;
    double beta2 = 0.25;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Layer-wise normalized momentum. Per tensor with gradient g:
//   v <- beta2 v + (1 - beta2) |g|^2   (v <- |g|^2 on its first non-zero gradient)
//   m <- beta1 m + g / (sqrt(v) + eps) + wd w
//   w <- w - lr m
class Novograd {
  public:
    struct State {
        std::vector<std::vector<double>> m;
        std::vector<double> v;
        std::vector<bool> initialized; // v seeded for this tensor
        std::size_t step = 0;

        bool operator==(const State &) const = default;
    };

    Novograd(std::vector<Tensor> params, NovogradOptions opts = {});

    // Applies one update from the gradients currently stored on the params.
    void step(double lr);
    void zero_grad();

    const std::vector<Tensor> &params() const { return params_; }
    const NovogradOptions &options() const { return opts_; }
    const State &state() const { return state_; }
    void set_state(State state);

  private:
    std::vector<Tensor> params_;
    NovogradOptions opts_;
    State state_;
};

// Scales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_grad_norm(const std::vector<Tensor> &params, double max_norm);

struct LrSchedule {
    double lr_max = 0.05;
    double lr_min = 0.0;
    std::size_t warmup = 10000;
    std::size_t total = 100000;
};

// Linear warmup to lr_max over `warmup` steps, then cosine annealing to
// lr_min at `total`; clamped to lr_min beyond it.
double cosine_lr(std::size_t step, const LrSchedule &s);

} // namespace citrinet
