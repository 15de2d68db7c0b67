#include "citrinet/optim.hpp"

#include <cmath>
#include <numbers>

#include "citrinet/error.hpp"

namespace citrinet {

Novograd::Novograd(std::vector<Tensor> params, NovogradOptions opts) : params_(std::move(params)), opts_(opts) {
    state_.m.reserve(params_.size());
    for (const auto &p : params_) {
        if (!p.defined())
            throw ContractError("optimizer given an undefined parameter");
        state_.m.emplace_back(p.size(), 0.0);
    }
    state_.v.assign(params_.size(), 0.0);
    state_.initialized.assign(params_.size(), false);
}

void Novograd::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto &p = params_[i];
        auto w = p.mutable_data();
        auto &m = state_.m[i];
        const std::vector<double> g = p.grad();
        double norm2 = 0.0;
        for (double x : g)
            norm2 += x * x;

        bool normalize = true;
        if (!state_.initialized[i]) {
            if (norm2 == 0.0) {
                normalize = false;
            } else {
                state_.v[i] = norm2;
                state_.initialized[i] = true;
            }
        } else {
            state_.v[i] = opts_.beta2 * state_.v[i] + (1.0 - opts_.beta2) * norm2;
        }
        const double inv = normalize ? 1.0 / (std::sqrt(state_.v[i]) + opts_.eps) : 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = opts_.beta1 * m[k] + g[k] * inv + opts_.weight_decay * w[k];
            w[k] -= lr * m[k];
        }
    }
    ++state_.step;
}

void Novograd::zero_grad() {
    for (auto &p : params_)
        p.zero_grad();
}

void Novograd::set_state(State state) {
    if (state.m.size() != params_.size() || state.v.size() != params_.size() ||
        state.initialized.size() != params_.size())
        throw InputError("optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (state.m[i].size() != params_[i].size())
            throw InputError("optimizer moment size mismatch for parameter " + std::to_string(i));
    state_ = std::move(state);
}

double clip_grad_norm(const std::vector<Tensor> &params, double max_norm) {
    double total = 0.0;
    for (const auto &p : params)
        if (p.has_grad())
            for (double g : p.grad())
                total += g * g;
    total = std::sqrt(total);
    if (max_norm > 0.0 && total > max_norm) {
        const double scale = max_norm / total;
        for (auto p : params)
            if (p.has_grad())
                for (double &g : p.mutable_grad())
                    g *= scale;
    }
    return total;
}

double cosine_lr(std::size_t step, const LrSchedule &s) {
    if (s.warmup > s.total)
        throw ConfigError("warmup exceeds total steps");
    if (step < s.warmup)
        return s.lr_max * static_cast<double>(step) / static_cast<double>(s.warmup);
    if (step > s.total)
        return s.lr_min;
    if (s.total == s.warmup)
        return s.lr_max;
    const double progress = static_cast<double>(step - s.warmup) / static_cast<double>(s.total - s.warmup);
    return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

} // namespace citrinet
