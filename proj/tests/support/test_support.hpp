#pragma once

#include <functional>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace citrinet::testing {

// Softmax ignores a shift shared by all keys of a query, so an attention key
// bias gets a gradient that is zero up to round-off. Relative error is
// meaningless there; callers check the zero directly with this helper and
// leave the tensor out of the relative comparison.
inline void expect_zero_gradient(Tensor param, const std::function<Tensor()> &loss_fn) {
    param.zero_grad();
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = loss_fn();
    }
    backward(tape, loss);
    for (double g : param.grad())
        EXPECT_NEAR(g, 0.0, 1e-12);
    auto data = param.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        data[i] = orig + 1e-3;
        const double up = loss_fn().item();
        data[i] = orig;
        EXPECT_NEAR(up, loss.item(), 1e-12);
    }
}

} // namespace citrinet::testing
