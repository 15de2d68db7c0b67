#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "citrinet/random.hpp"
#include "citrinet/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the active
// tape (if any) when at least one input requires grad.
namespace citrinet {

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor div(const Tensor &a, const Tensor &b);

inline Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
inline Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
inline Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
inline Tensor operator/(const Tensor &a, const Tensor &b) { return div(a, b); }

Tensor add_scalar(const Tensor &x, double s);
Tensor mul_scalar(const Tensor &x, double s);
Tensor neg(const Tensor &x);

Tensor exp(const Tensor &x);
Tensor log(const Tensor &x);
Tensor square(const Tensor &x);
Tensor sigmoid(const Tensor &x);
Tensor relu(const Tensor &x);
Tensor swish(const Tensor &x); // x * sigmoid(x)

Tensor sum(const Tensor &x);
Tensor mean(const Tensor &x);
Tensor sum(const Tensor &x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor &x, std::size_t axis, bool keepdim = false);

Tensor reshape(const Tensor &x, Shape shape);
Tensor permute(const Tensor &x, const std::vector<std::size_t> &perm);
Tensor transpose(const Tensor &x, std::size_t axis0, std::size_t axis1);

Tensor matmul(const Tensor &a, const Tensor &b); // [M,K] x [K,N]
Tensor bmm(const Tensor &a, const Tensor &b);    // [B,M,K] x [B,K,N]

// y[..., o] = sum_i x[..., i] * w[o, i] + b[o]; `b` may be undefined.
Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b);

struct Conv1dOptions {
    std::size_t stride = 1;
    std::size_t groups = 1;
};

// Cross-correlation over time with symmetric "same" zero padding of (K-1)/2.
// x: [B, Cin, T], w: [Cout, Cin/groups, K], bias: [Cout] or undefined.
// Output: [B, Cout, ceil(T/stride)].
Tensor conv1d(const Tensor &x, const Tensor &w, const Tensor &bias, Conv1dOptions opts = {});

Tensor softmax(const Tensor &x, std::size_t axis);
Tensor log_softmax(const Tensor &x, std::size_t axis);

// Softmax over the last axis of scores [N, Tq, Tk] restricted to allowed
// keys. `allowed` is a [B, Tq, Tk] byte mask shared by the N/B consecutive
// rows of each batch item (the attention heads). Disallowed weights are 0.
Tensor masked_softmax(const Tensor &scores, std::span<const std::uint8_t> allowed,
                      std::size_t batch);

Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, std::size_t axis,
                  double eps = 1e-5);

struct BatchNormOptions {
    bool training = true;
    double momentum = 0.9; // running = momentum * running + (1 - momentum) * batch
    double eps = 1e-5;
};

// Batch norm over x: [B, C, T], statistics over the valid frames
// (t < valid_len[b]) only. Frames beyond valid_len are zero in the output.
// In training mode the running statistics are updated in place.
Tensor batch_norm1d(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                    Tensor &running_mean, Tensor &running_var,
                    std::span<const std::size_t> valid_len, const BatchNormOptions &opts);

// Zeroes frames t >= valid_len[b] of x: [B, C, T].
Tensor mask_frames(const Tensor &x, std::span<const std::size_t> valid_len);

// Rows of table [N, d] gathered by ids; output shape = ids_shape + [d].
Tensor embedding(const Tensor &table, std::span<const std::int64_t> ids, const Shape &ids_shape);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor &x, double p, Rng &rng, bool training);

} // namespace citrinet
