#pragma once

#include <initializer_list>
#include <memory>
#include <vector>

#include "citrinet/tensor.hpp"

namespace citrinet::detail {

using NodePtr = std::shared_ptr<Node>;

inline bool tracking(std::initializer_list<const Tensor *> inputs) {
    if (active_tape() == nullptr)
        return false;
    for (const Tensor *t : inputs)
        if (t->defined() && t->requires_grad())
            return true;
    return false;
}

inline Tensor make_result(Shape shape, std::vector<double> value, bool track) {
    Tensor out(std::move(shape), std::move(value));
    if (track)
        out.set_requires_grad(true);
    return out;
}

inline void record(const Tensor &out, Tape::BackwardFn fn) {
    active_tape()->record(out.node(), std::move(fn));
}

// Gradient buffer of an input node, or nullptr when it takes no gradient.
inline std::vector<double> *grad_of(const NodePtr &node) {
    if (!node || !node->requires_grad)
        return nullptr;
    node->ensure_grad();
    return &node->grad;
}

} // namespace citrinet::detail
