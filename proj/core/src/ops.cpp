#include "citrinet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "citrinet/error.hpp"
#include "op_util.hpp"

namespace citrinet {

using detail::grad_of;
using detail::make_result;
using detail::NodePtr;
using detail::record;
using detail::tracking;

namespace {

// ---------------------------------------------------------------- broadcasting

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> a_strides; // per output axis, 0 where broadcast
    std::vector<std::size_t> b_strides;
};

std::vector<std::size_t> contiguous_strides(const Shape &s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;)
        st[i - 1] = st[i] * s[i];
    return st;
}

BroadcastPlan plan_broadcast(const Shape &a, const Shape &b) {
    const std::size_t rank = std::max(a.size(), b.size());
    BroadcastPlan p;
    p.out.assign(rank, 1);
    p.a_strides.assign(rank, 0);
    p.b_strides.assign(rank, 0);
    const auto sa = contiguous_strides(a);
    const auto sb = contiguous_strides(b);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ia = i + a.size();
        const std::size_t ib = i + b.size();
        const std::size_t da = ia >= rank ? a[ia - rank] : 1;
        const std::size_t db = ib >= rank ? b[ib - rank] : 1;
        if (da != db && da != 1 && db != 1)
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        p.out[i] = std::max(da, db);
        if (ia >= rank && da != 1)
            p.a_strides[i] = sa[ia - rank];
        if (ib >= rank && db != 1)
            p.b_strides[i] = sb[ib - rank];
    }
    return p;
}

template <class F> void broadcast_loop(const BroadcastPlan &p, F &&f) {
    const std::size_t rank = p.out.size();
    if (rank == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t inner = p.out[rank - 1];
    const std::size_t total = numel(p.out);
    if (inner == 0 || total == 0)
        return;
    const std::size_t sa = p.a_strides[rank - 1];
    const std::size_t sb = p.b_strides[rank - 1];
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t oi = 0; oi < total; oi += inner) {
        for (std::size_t i = 0; i < inner; ++i)
            f(oi + i, ao + i * sa, bo + i * sb);
        for (std::size_t d = rank - 1; d-- > 0;) {
            ++idx[d];
            ao += p.a_strides[d];
            bo += p.b_strides[d];
            if (idx[d] < p.out[d])
                break;
            ao -= p.a_strides[d] * p.out[d];
            bo -= p.b_strides[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

enum class BinaryKind { add, sub, mul, div };

Tensor binary(const Tensor &a, const Tensor &b, BinaryKind kind) {
    const auto plan = plan_broadcast(a.shape(), b.shape());
    std::vector<double> out(numel(plan.out));
    const auto av = a.data();
    const auto bv = b.data();
    broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
        switch (kind) {
        case BinaryKind::add: out[o] = av[i] + bv[j]; break;
        case BinaryKind::sub: out[o] = av[i] - bv[j]; break;
        case BinaryKind::mul: out[o] = av[i] * bv[j]; break;
        case BinaryKind::div: out[o] = av[i] / bv[j]; break;
        }
    });
    const bool track = tracking({&a, &b});
    Tensor result = make_result(plan.out, std::move(out), track);
    if (track) {
        NodePtr na = a.node(), nb = b.node();
        record(result, [na, nb, plan, kind](const detail::Node &y) {
            auto *ga = grad_of(na);
            auto *gb = grad_of(nb);
            const auto &g = y.grad;
            const auto &av = na->value;
            const auto &bv = nb->value;
            broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                switch (kind) {
                case BinaryKind::add:
                    if (ga) (*ga)[i] += g[o];
                    if (gb) (*gb)[j] += g[o];
                    break;
                case BinaryKind::sub:
                    if (ga) (*ga)[i] += g[o];
                    if (gb) (*gb)[j] -= g[o];
                    break;
                case BinaryKind::mul:
                    if (ga) (*ga)[i] += g[o] * bv[j];
                    if (gb) (*gb)[j] += g[o] * av[i];
                    break;
                case BinaryKind::div:
                    if (ga) (*ga)[i] += g[o] / bv[j];
                    if (gb) (*gb)[j] -= g[o] * av[i] / (bv[j] * bv[j]);
                    break;
                }
            });
        });
    }
    return result;
}

// --------------------------------------------------------------------- unary

// f computes y from x; df computes dy/dx from (x, y).
template <class F, class DF> Tensor unary(const Tensor &x, F f, DF df) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = f(xv[i]);
    const bool track = tracking({&x});
    Tensor result = make_result(x.shape(), std::move(out), track);
    if (track) {
        NodePtr nx = x.node();
        record(result, [nx, df](const detail::Node &y) {
            auto &gx = *grad_of(nx);
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += y.grad[i] * df(nx->value[i], y.value[i]);
        });
    }
    return result;
}

double stable_sigmoid(double v) {
    if (v >= 0) {
        const double e = std::exp(-v);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape &s, std::size_t axis) {
    if (axis >= s.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(s));
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i)
        r.outer *= s[i];
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i)
        r.inner *= s[i];
    return r;
}

} // namespace

Tensor add(const Tensor &a, const Tensor &b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor &a, const Tensor &b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor &a, const Tensor &b) { return binary(a, b, BinaryKind::mul); }
Tensor div(const Tensor &a, const Tensor &b) { return binary(a, b, BinaryKind::div); }

Tensor add_scalar(const Tensor &x, double s) {
    return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor &x, double s) {
    return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor &x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor &x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor &x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor &x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sigmoid(const Tensor &x) {
    return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor &x) {
    return unary(
        x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor swish(const Tensor &x) {
    return unary(
        x, [](double v) { return v * stable_sigmoid(v); },
        [](double v, double) {
            const double s = stable_sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor &x) {
    const auto xv = x.data();
    double acc = 0.0;
    for (double v : xv)
        acc += v;
    const bool track = tracking({&x});
    Tensor result = make_result(Shape{}, {acc}, track);
    if (track) {
        NodePtr nx = x.node();
        record(result, [nx](const detail::Node &y) {
            auto &gx = *grad_of(nx);
            for (double &g : gx)
                g += y.grad[0];
        });
    }
    return result;
}

Tensor mean(const Tensor &x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum(const Tensor &x, std::size_t axis, bool keepdim) {
    const auto sp = split_axis(x.shape(), axis);
    const auto xv = x.data();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.n; ++k) {
            const double *src = xv.data() + (o * sp.n + k) * sp.inner;
            double *dst = out.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i)
                dst[i] += src[i];
        }
    Shape shape = x.shape();
    if (keepdim)
        shape[axis] = 1;
    else
        shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    const bool track = tracking({&x});
    Tensor result = make_result(shape, std::move(out), track);
    if (track) {
        NodePtr nx = x.node();
        record(result, [nx, sp](const detail::Node &y) {
            auto &gx = *grad_of(nx);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t k = 0; k < sp.n; ++k) {
                    double *dst = gx.data() + (o * sp.n + k) * sp.inner;
                    const double *src = y.grad.data() + o * sp.inner;
                    for (std::size_t i = 0; i < sp.inner; ++i)
                        dst[i] += src[i];
                }
        });
    }
    return result;
}

Tensor mean(const Tensor &x, std::size_t axis, bool keepdim) {
    const double n = static_cast<double>(x.dim(axis));
    return mul_scalar(sum(x, axis, keepdim), 1.0 / n);
}

// --------------------------------------------------------------------- shape

Tensor reshape(const Tensor &x, Shape shape) {
    if (numel(shape) != x.size())
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    const bool track = tracking({&x});
    Tensor result = make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                                track);
    if (track) {
        NodePtr nx = x.node();
        record(result, [nx](const detail::Node &y) {
            auto &gx = *grad_of(nx);
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += y.grad[i];
        });
    }
    return result;
}

Tensor permute(const Tensor &x, const std::vector<std::size_t> &perm) {
    const Shape &in = x.shape();
    const std::size_t rank = in.size();
    if (perm.size() != rank)
        throw DimensionError("permutation rank mismatch for shape " + shape_str(in));
    std::vector<bool> seen(rank, false);
    for (auto p : perm) {
        if (p >= rank || seen[p])
            throw DimensionError("invalid permutation for shape " + shape_str(in));
        seen[p] = true;
    }
    Shape out_shape(rank);
    const auto in_strides = contiguous_strides(in);
    std::vector<std::size_t> src_strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in[perm[i]];
        src_strides[i] = in_strides[perm[i]];
    }
    // Output position o maps to input offset map[o].
    const std::size_t total = x.size();
    std::vector<std::size_t> map(total);
    {
        std::vector<std::size_t> idx(rank, 0);
        std::size_t off = 0;
        for (std::size_t o = 0; o < total; ++o) {
            map[o] = off;
            for (std::size_t d = rank; d-- > 0;) {
                ++idx[d];
                off += src_strides[d];
                if (idx[d] < out_shape[d])
                    break;
                off -= src_strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    }
    const auto xv = x.data();
    std::vector<double> out(total);
    for (std::size_t o = 0; o < total; ++o)
        out[o] = xv[map[o]];
    const bool track = tracking({&x});
    Tensor result = make_result(out_shape, std::move(out), track);
    if (track) {
        NodePtr nx = x.node();
        record(result, [nx, map = std::move(map)](const detail::Node &y) {
            auto &gx = *grad_of(nx);
            for (std::size_t o = 0; o < map.size(); ++o)
                gx[map[o]] += y.grad[o];
        });
    }
    return result;
}

Tensor transpose(const Tensor &x, std::size_t axis0, std::size_t axis1) {
    std::vector<std::size_t> perm(x.rank());
    for (std::size_t i = 0; i < perm.size(); ++i)
        perm[i] = i;
    if (axis0 >= perm.size() || axis1 >= perm.size())
        throw DimensionError("transpose axes out of range for shape " + shape_str(x.shape()));
    std::swap(perm[axis0], perm[axis1]);
    return permute(x, perm);
}

// -------------------------------------------------------------------- matmul

namespace {

// c[M,N] += a[M,K] * b[K,N]
void gemm_nn(const double *a, const double *b, double *c, std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
            const double av = a[i * K + k];
            if (av == 0.0)
                continue;
            const double *brow = b + k * N;
            double *crow = c + i * N;
            for (std::size_t j = 0; j < N; ++j)
                crow[j] += av * brow[j];
        }
}

// c[M,K] += g[M,N] * b[K,N]^T
void gemm_nt(const double *g, const double *b, double *c, std::size_t M, std::size_t N, std::size_t K) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
            const double *grow = g + i * N;
            const double *brow = b + k * N;
            double acc = 0.0;
            for (std::size_t j = 0; j < N; ++j)
                acc += grow[j] * brow[j];
            c[i * K + k] += acc;
        }
}

// c[K,N] += a[M,K]^T * g[M,N]
void gemm_tn(const double *a, const double *g, double *c, std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
            const double av = a[i * K + k];
            if (av == 0.0)
                continue;
            const double *grow = g + i * N;
            double *crow = c + k * N;
            for (std::size_t j = 0; j < N; ++j)
                crow[j] += av * grow[j];
        }
}

Tensor batched_matmul(const Tensor &a, const Tensor &b, std::size_t batch, std::size_t M, std::size_t K,
                      std::size_t N, Shape out_shape) {
    std::vector<double> out(batch * M * N, 0.0);
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t s = 0; s < batch; ++s)
        gemm_nn(av.data() + s * M * K, bv.data() + s * K * N, out.data() + s * M * N, M, K, N);
    const bool track = tracking({&a, &b});
    Tensor result = make_result(std::move(out_shape), std::move(out), track);
    if (track) {
        NodePtr na = a.node(), nb = b.node();
        record(result, [na, nb, batch, M, K, N](const detail::Node &y) {
            auto *ga = grad_of(na);
            auto *gb = grad_of(nb);
            for (std::size_t s = 0; s < batch; ++s) {
                const double *g = y.grad.data() + s * M * N;
                if (ga)
                    gemm_nt(g, nb->value.data() + s * K * N, ga->data() + s * M * K, M, N, K);
                if (gb)
                    gemm_tn(na->value.data() + s * M * K, g, gb->data() + s * K * N, M, K, N);
            }
        });
    }
    return result;
}

} // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    return batched_matmul(a, b, 1, a.dim(0), a.dim(1), b.dim(1), Shape{a.dim(0), b.dim(1)});
}

Tensor bmm(const Tensor &a, const Tensor &b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw DimensionError("bmm shape mismatch: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    return batched_matmul(a, b, a.dim(0), a.dim(1), a.dim(2), b.dim(2),
                          Shape{a.dim(0), a.dim(1), b.dim(2)});
}

Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b) {
    if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(1))
        throw DimensionError("linear shape mismatch: x " + shape_str(x.shape()) + ", w " +
                             shape_str(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0)))
        throw DimensionError("linear bias shape " + shape_str(b.shape()) + " for weight " +
                             shape_str(w.shape()));
    const std::size_t in = w.dim(1), outd = w.dim(0);
    const std::size_t rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outd;
    std::vector<double> out(rows * outd);
    const auto xv = x.data();
    const auto wv = w.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double *xr = xv.data() + r * in;
        for (std::size_t o = 0; o < outd; ++o) {
            const double *wr = wv.data() + o * in;
            double acc = b.defined() ? b.data()[o] : 0.0;
            for (std::size_t i = 0; i < in; ++i)
                acc += xr[i] * wr[i];
            out[r * outd + o] = acc;
        }
    }
    const bool track = tracking({&x, &w, &b});
    Tensor result = make_result(std::move(out_shape), std::move(out), track);
    if (track) {
        NodePtr nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;
        record(result, [nx, nw, nb, rows, in, outd](const detail::Node &y) {
            auto *gx = grad_of(nx);
            auto *gw = grad_of(nw);
            auto *gb = grad_of(nb);
            for (std::size_t r = 0; r < rows; ++r) {
                const double *gr = y.grad.data() + r * outd;
                const double *xr = nx->value.data() + r * in;
                for (std::size_t o = 0; o < outd; ++o) {
                    const double g = gr[o];
                    if (g == 0.0)
                        continue;
                    if (gx) {
                        const double *wr = nw->value.data() + o * in;
                        double *dst = gx->data() + r * in;
                        for (std::size_t i = 0; i < in; ++i)
                            dst[i] += g * wr[i];
                    }
                    if (gw) {
                        double *dst = gw->data() + o * in;
                        for (std::size_t i = 0; i < in; ++i)
                            dst[i] += g * xr[i];
                    }
                    if (gb)
                        (*gb)[o] += g;
                }
            }
        });
    }
    return result;
}

// -------------------------------------------------------------------- conv1d

namespace {

struct ConvGeometry {
    std::size_t B, Cin, T, Cout, K, stride, groups, cin_g, cout_g, T_out;
    std::ptrdiff_t pad;

    // Output index range [lo, hi) whose input index t*stride + off is in [0, T).
    void valid_range(std::ptrdiff_t off, std::size_t &lo, std::size_t &hi) const {
        const auto s = static_cast<std::ptrdiff_t>(stride);
        const auto Tn = static_cast<std::ptrdiff_t>(T);
        const std::ptrdiff_t l = off < 0 ? (-off + s - 1) / s : 0;
        const std::ptrdiff_t h = (Tn - 1 - off) < 0 ? 0 : (Tn - 1 - off) / s + 1;
        lo = static_cast<std::size_t>(l);
        hi = std::min(T_out, static_cast<std::size_t>(std::max<std::ptrdiff_t>(h, 0)));
        if (lo > hi)
            lo = hi;
    }
};

} // namespace

Tensor conv1d(const Tensor &x, const Tensor &w, const Tensor &bias, Conv1dOptions opts) {
    if (x.rank() != 3 || w.rank() != 3)
        throw DimensionError("conv1d expects x [B,C,T] and w [Cout,Cin/g,K], got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    ConvGeometry g{};
    g.B = x.dim(0);
    g.Cin = x.dim(1);
    g.T = x.dim(2);
    g.Cout = w.dim(0);
    g.K = w.dim(2);
    g.stride = opts.stride;
    g.groups = opts.groups;
    if (g.groups == 0 || g.Cin % g.groups != 0 || g.Cout % g.groups != 0)
        throw ConfigError("conv1d: channels (" + std::to_string(g.Cin) + " -> " +
                          std::to_string(g.Cout) + ") not divisible by groups " +
                          std::to_string(g.groups));
    if (g.K % 2 == 0)
        throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(g.K));
    if (g.stride == 0)
        throw ConfigError("conv1d: stride must be positive");
    g.cin_g = g.Cin / g.groups;
    g.cout_g = g.Cout / g.groups;
    if (w.dim(1) != g.cin_g)
        throw DimensionError("conv1d weight " + shape_str(w.shape()) + " does not match " +
                             std::to_string(g.Cin) + " input channels in " +
                             std::to_string(g.groups) + " groups");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.Cout))
        throw DimensionError("conv1d bias shape " + shape_str(bias.shape()));
    g.T_out = (g.T + g.stride - 1) / g.stride;
    g.pad = static_cast<std::ptrdiff_t>((g.K - 1) / 2);

    const auto xv = x.data();
    const auto wv = w.data();
    std::vector<double> out(g.B * g.Cout * g.T_out, 0.0);
    for (std::size_t b = 0; b < g.B; ++b)
        for (std::size_t oc = 0; oc < g.Cout; ++oc) {
            double *yrow = out.data() + (b * g.Cout + oc) * g.T_out;
            if (bias.defined())
                std::fill(yrow, yrow + g.T_out, bias.data()[oc]);
            const std::size_t grp = oc / g.cout_g;
            for (std::size_t ic = 0; ic < g.cin_g; ++ic) {
                const double *xrow = xv.data() + (b * g.Cin + grp * g.cin_g + ic) * g.T;
                const double *wrow = wv.data() + (oc * g.cin_g + ic) * g.K;
                for (std::size_t k = 0; k < g.K; ++k) {
                    const double wk = wrow[k];
                    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - g.pad;
                    std::size_t lo, hi;
                    g.valid_range(off, lo, hi);
                    for (std::size_t t = lo; t < hi; ++t)
                        yrow[t] += wk * xrow[static_cast<std::ptrdiff_t>(t * g.stride) + off];
                }
            }
        }

    const bool track = tracking({&x, &w, &bias});
    Tensor result = make_result(Shape{g.B, g.Cout, g.T_out}, std::move(out), track);
    if (track) {
        NodePtr nx = x.node(), nw = w.node(), nb = bias.defined() ? bias.node() : nullptr;
        record(result, [nx, nw, nb, g](const detail::Node &y) {
            auto *gx = grad_of(nx);
            auto *gw = grad_of(nw);
            auto *gb = grad_of(nb);
            for (std::size_t b = 0; b < g.B; ++b)
                for (std::size_t oc = 0; oc < g.Cout; ++oc) {
                    const double *grow = y.grad.data() + (b * g.Cout + oc) * g.T_out;
                    if (gb)
                        for (std::size_t t = 0; t < g.T_out; ++t)
                            (*gb)[oc] += grow[t];
                    const std::size_t grp = oc / g.cout_g;
                    for (std::size_t ic = 0; ic < g.cin_g; ++ic) {
                        const std::size_t xoff = (b * g.Cin + grp * g.cin_g + ic) * g.T;
                        const double *xrow = nx->value.data() + xoff;
                        const std::size_t woff = (oc * g.cin_g + ic) * g.K;
                        const double *wrow = nw->value.data() + woff;
                        for (std::size_t k = 0; k < g.K; ++k) {
                            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - g.pad;
                            std::size_t lo, hi;
                            g.valid_range(off, lo, hi);
                            if (gx) {
                                double *gxrow = gx->data() + xoff;
                                const double wk = wrow[k];
                                for (std::size_t t = lo; t < hi; ++t)
                                    gxrow[static_cast<std::ptrdiff_t>(t * g.stride) + off] += wk * grow[t];
                            }
                            if (gw) {
                                double acc = 0.0;
                                for (std::size_t t = lo; t < hi; ++t)
                                    acc += xrow[static_cast<std::ptrdiff_t>(t * g.stride) + off] * grow[t];
                                (*gw)[woff + k] += acc;
                            }
                        }
                    }
                }
        });
    }
    return result;
}

// ------------------------------------------------------------------- softmax

namespace {

Tensor softmax_impl(const Tensor &x, std::size_t axis, bool log_space) {
    const auto sp = split_axis(x.shape(), axis);
    const auto xv = x.data();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < sp.n; ++k)
                mx = std::max(mx, xv[base + k * sp.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k)
                z += std::exp(xv[base + k * sp.inner] - mx);
            const double logz = mx + std::log(z);
            for (std::size_t k = 0; k < sp.n; ++k) {
                const double lp = xv[base + k * sp.inner] - logz;
                out[base + k * sp.inner] = log_space ? lp : std::exp(lp);
            }
        }
    const bool track = tracking({&x});
    Tensor result = make_result(x.shape(), std::move(out), track);
    if (track) {
        NodePtr nx = x.node();
        record(result, [nx, sp, log_space](const detail::Node &y) {
            auto &gx = *grad_of(nx);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.n * sp.inner + i;
                    if (log_space) {
                        double gs = 0.0;
                        for (std::size_t k = 0; k < sp.n; ++k)
                            gs += y.grad[base + k * sp.inner];
                        for (std::size_t k = 0; k < sp.n; ++k) {
                            const std::size_t at = base + k * sp.inner;
                            gx[at] += y.grad[at] - std::exp(y.value[at]) * gs;
                        }
                    } else {
                        double dot = 0.0;
                        for (std::size_t k = 0; k < sp.n; ++k) {
                            const std::size_t at = base + k * sp.inner;
                            dot += y.grad[at] * y.value[at];
                        }
                        for (std::size_t k = 0; k < sp.n; ++k) {
                            const std::size_t at = base + k * sp.inner;
                            gx[at] += y.value[at] * (y.grad[at] - dot);
                        }
                    }
                }
        });
    }
    return result;
}

} // namespace

Tensor softmax(const Tensor &x, std::size_t axis) { return softmax_impl(x, axis, false); }
Tensor log_softmax(const Tensor &x, std::size_t axis) { return softmax_impl(x, axis, true); }

Tensor masked_softmax(const Tensor &scores, std::span<const std::uint8_t> allowed, std::size_t batch) {
    if (scores.rank() != 3)
        throw DimensionError("masked_softmax expects [N,Tq,Tk], got " + shape_str(scores.shape()));
    const std::size_t N = scores.dim(0), Tq = scores.dim(1), Tk = scores.dim(2);
    if (batch == 0 || N % batch != 0 || allowed.size() != batch * Tq * Tk)
        throw DimensionError("masked_softmax mask does not match scores " + shape_str(scores.shape()));
    const std::size_t per_item = N / batch;
    const auto sv = scores.data();
    std::vector<double> out(scores.size(), 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t b = n / per_item;
        for (std::size_t i = 0; i < Tq; ++i) {
            const std::uint8_t *m = allowed.data() + (b * Tq + i) * Tk;
            const double *s = sv.data() + (n * Tq + i) * Tk;
            double *y = out.data() + (n * Tq + i) * Tk;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < Tk; ++j)
                if (m[j])
                    mx = std::max(mx, s[j]);
            if (mx == -std::numeric_limits<double>::infinity())
                throw ContractError("attention query row " + std::to_string(i) +
                                    " has no allowed keys");
            double z = 0.0;
            for (std::size_t j = 0; j < Tk; ++j)
                if (m[j]) {
                    y[j] = std::exp(s[j] - mx);
                    z += y[j];
                }
            for (std::size_t j = 0; j < Tk; ++j)
                y[j] /= z;
        }
    }
    const bool track = tracking({&scores});
    Tensor result = make_result(scores.shape(), std::move(out), track);
    if (track) {
        NodePtr ns = scores.node();
        record(result, [ns, N, Tq, Tk](const detail::Node &y) {
            auto &gs = *grad_of(ns);
            for (std::size_t r = 0; r < N * Tq; ++r) {
                const double *yv = y.value.data() + r * Tk;
                const double *gv = y.grad.data() + r * Tk;
                double dot = 0.0;
                for (std::size_t j = 0; j < Tk; ++j)
                    dot += yv[j] * gv[j];
                double *dst = gs.data() + r * Tk;
                for (std::size_t j = 0; j < Tk; ++j)
                    dst[j] += yv[j] * (gv[j] - dot);
            }
        });
    }
    return result;
}

// --------------------------------------------------------------------- norms

Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, std::size_t axis, double eps) {
    const auto sp = split_axis(x.shape(), axis);
    if (gamma.size() != sp.n || beta.size() != sp.n)
        throw DimensionError("layer_norm affine size " + std::to_string(gamma.size()) +
                             " does not match normalized extent " + std::to_string(sp.n));
    const auto xv = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(sp.outer * sp.inner);
    const double n = static_cast<double>(sp.n);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            double mu = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k)
                mu += xv[base + k * sp.inner];
            mu /= n;
            double var = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) {
                const double d = xv[base + k * sp.inner] - mu;
                var += d * d;
            }
            var /= n;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[o * sp.inner + i] = is;
            for (std::size_t k = 0; k < sp.n; ++k) {
                const std::size_t at = base + k * sp.inner;
                xhat[at] = (xv[at] - mu) * is;
                out[at] = xhat[at] * gv[k] + bv[k];
            }
        }
    const bool track = tracking({&x, &gamma, &beta});
    Tensor result = make_result(x.shape(), std::move(out), track);
    if (track) {
        NodePtr nx = x.node(), ng = gamma.node(), nb = beta.node();
        record(result, [nx, ng, nb, sp, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                           const detail::Node &y) {
            auto *gx = grad_of(nx);
            auto *gg = grad_of(ng);
            auto *gb = grad_of(nb);
            const double n = static_cast<double>(sp.n);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t base = o * sp.n * sp.inner + i;
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t k = 0; k < sp.n; ++k) {
                        const std::size_t at = base + k * sp.inner;
                        const double g = y.grad[at];
                        if (gg)
                            (*gg)[k] += g * xhat[at];
                        if (gb)
                            (*gb)[k] += g;
                        const double dxh = g * ng->value[k];
                        s1 += dxh;
                        s2 += dxh * xhat[at];
                    }
                    if (!gx)
                        continue;
                    const double is = inv_std[o * sp.inner + i];
                    for (std::size_t k = 0; k < sp.n; ++k) {
                        const std::size_t at = base + k * sp.inner;
                        const double dxh = y.grad[at] * ng->value[k];
                        (*gx)[at] += is * (dxh - s1 / n - xhat[at] * s2 / n);
                    }
                }
        });
    }
    return result;
}

Tensor batch_norm1d(const Tensor &x, const Tensor &gamma, const Tensor &beta, Tensor &running_mean,
                    Tensor &running_var, std::span<const std::size_t> valid_len,
                    const BatchNormOptions &opts) {
    if (x.rank() != 3)
        throw DimensionError("batch_norm1d expects [B,C,T], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
    if (valid_len.size() != B)
        throw DimensionError("batch_norm1d: valid_len has " + std::to_string(valid_len.size()) +
                             " entries for batch " + std::to_string(B));
    if (gamma.size() != C || beta.size() != C || running_mean.size() != C || running_var.size() != C)
        throw DimensionError("batch_norm1d parameter size mismatch for " + std::to_string(C) +
                             " channels");
    std::size_t count = 0;
    for (auto l : valid_len) {
        if (l > T)
            throw DimensionError("batch_norm1d: valid length exceeds frame count");
        count += l;
    }
    if (count == 0)
        throw InputError("batch_norm1d: no valid frames in batch");

    const auto xv = x.data();
    std::vector<double> mu(C, 0.0), inv_std(C, 0.0);
    if (opts.training) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < valid_len[b]; ++t)
                    s += xv[(b * C + c) * T + t];
            const double m = s / static_cast<double>(count);
            double v = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < valid_len[b]; ++t) {
                    const double d = xv[(b * C + c) * T + t] - m;
                    v += d * d;
                }
            v /= static_cast<double>(count);
            mu[c] = m;
            inv_std[c] = 1.0 / std::sqrt(v + opts.eps);
            auto rm = running_mean.mutable_data();
            auto rv = running_var.mutable_data();
            rm[c] = opts.momentum * rm[c] + (1.0 - opts.momentum) * m;
            rv[c] = opts.momentum * rv[c] + (1.0 - opts.momentum) * v;
        }
    } else {
        const auto rm = running_mean.data();
        const auto rv = running_var.data();
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = rm[c];
            inv_std[c] = 1.0 / std::sqrt(rv[c] + opts.eps);
        }
    }

    const auto gv = gamma.data();
    const auto bv = beta.data();
    std::vector<double> out(x.size(), 0.0);
    std::vector<double> xhat(x.size(), 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < valid_len[b]; ++t) {
                const std::size_t at = (b * C + c) * T + t;
                xhat[at] = (xv[at] - mu[c]) * inv_std[c];
                out[at] = xhat[at] * gv[c] + bv[c];
            }

    const bool track = tracking({&x, &gamma, &beta});
    Tensor result = make_result(x.shape(), std::move(out), track);
    if (track) {
        NodePtr nx = x.node(), ng = gamma.node(), nb = beta.node();
        std::vector<std::size_t> lens(valid_len.begin(), valid_len.end());
        record(result, [nx, ng, nb, B, C, T, count, training = opts.training, lens = std::move(lens),
                        xhat = std::move(xhat), inv_std = std::move(inv_std)](const detail::Node &y) {
            auto *gx = grad_of(nx);
            auto *gg = grad_of(ng);
            auto *gb = grad_of(nb);
            const double n = static_cast<double>(count);
            for (std::size_t c = 0; c < C; ++c) {
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t t = 0; t < lens[b]; ++t) {
                        const std::size_t at = (b * C + c) * T + t;
                        s1 += y.grad[at];
                        s2 += y.grad[at] * xhat[at];
                    }
                if (gg)
                    (*gg)[c] += s2;
                if (gb)
                    (*gb)[c] += s1;
                if (!gx)
                    continue;
                const double scale = ng->value[c] * inv_std[c];
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t t = 0; t < lens[b]; ++t) {
                        const std::size_t at = (b * C + c) * T + t;
                        if (training)
                            (*gx)[at] += scale * (y.grad[at] - s1 / n - xhat[at] * s2 / n);
                        else
                            (*gx)[at] += scale * y.grad[at];
                    }
            }
        });
    }
    return result;
}

Tensor mask_frames(const Tensor &x, std::span<const std::size_t> valid_len) {
    if (x.rank() != 3 || valid_len.size() != x.dim(0))
        throw DimensionError("mask_frames expects [B,C,T] with B valid lengths, got " +
                             shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = std::min(valid_len[b], T); t < T; ++t)
                out[(b * C + c) * T + t] = 0.0;
    const bool track = tracking({&x});
    Tensor result = make_result(x.shape(), std::move(out), track);
    if (track) {
        NodePtr nx = x.node();
        std::vector<std::size_t> lens(valid_len.begin(), valid_len.end());
        record(result, [nx, B, C, T, lens = std::move(lens)](const detail::Node &y) {
            auto &gx = *grad_of(nx);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t t = 0; t < std::min(lens[b], T); ++t) {
                        const std::size_t at = (b * C + c) * T + t;
                        gx[at] += y.grad[at];
                    }
        });
    }
    return result;
}

Tensor embedding(const Tensor &table, std::span<const std::int64_t> ids, const Shape &ids_shape) {
    if (table.rank() != 2)
        throw DimensionError("embedding table must be [N,d], got " + shape_str(table.shape()));
    if (numel(ids_shape) != ids.size())
        throw DimensionError("embedding ids do not match shape " + shape_str(ids_shape));
    const std::size_t N = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    const auto tv = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= N)
            throw InputError("embedding id " + std::to_string(ids[i]) + " out of range [0," +
                             std::to_string(N) + ")");
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    Shape shape = ids_shape;
    shape.push_back(d);
    const bool track = tracking({&table});
    Tensor result = make_result(std::move(shape), std::move(out), track);
    if (track) {
        NodePtr nt = table.node();
        std::vector<std::int64_t> idv(ids.begin(), ids.end());
        record(result, [nt, d, idv = std::move(idv)](const detail::Node &y) {
            auto &gt = *grad_of(nt);
            for (std::size_t i = 0; i < idv.size(); ++i) {
                double *dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
                const double *src = y.grad.data() + i * d;
                for (std::size_t k = 0; k < d; ++k)
                    dst[k] += src[k];
            }
        });
    }
    return result;
}

Tensor dropout(const Tensor &x, double p, Rng &rng, bool training) {
    if (!training || p <= 0.0)
        return x;
    if (p >= 1.0)
        throw ConfigError("dropout probability must be < 1");
    const double keep = 1.0 - p;
    std::vector<double> scale(x.size());
    for (double &s : scale)
        s = uniform01(rng) < keep ? 1.0 / keep : 0.0;
    return mul(x, Tensor(x.shape(), std::move(scale)));
}

} // namespace citrinet
