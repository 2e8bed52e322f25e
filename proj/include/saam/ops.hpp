#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "saam/tensor.hpp"

// Forward operations with reverse-mode backward closures. Storage is NCHW
// with W fastest; no broadcasting except scalar-with-tensor, per-channel
// statistics and the single-channel gate — every other shape mismatch is an
// error.

namespace saam {

template <class T>
T sigmoid_scalar(T v) {
    // Stable in both tails.
    if (v >= T(0)) {
        T e = std::exp(-v);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(v);
    return e / (T(1) + e);
}

// ---------------------------------------------------------------------------
// ConvSpec: one convolution's static description plus its parameters.
// Depthwise: groups == C_in == C_out, kernel second dim 1.
// Pointwise: k == 1, groups == 1.
// ---------------------------------------------------------------------------

template <class T>
struct ConvSpec {
    Tensor<T> kernel;  // (C_out, C_in/groups, k, k)
    Tensor<T> bias;    // optional, (1, C_out, 1, 1)
    int groups = 1;
    int stride = 1;
    int pad = 0;
};

namespace detail {

struct ConvDims {
    i64 N, Cin, H, W, Cout, icpg, ocpg, kh, kw, outH, outW;
    int groups, stride, pad;
};

template <class T>
ConvDims conv_check(const Shape& xs, const Shape& ks, const Tensor<T>& bias, int groups,
                    int stride, int pad) {
    if (groups < 1 || stride < 1 || pad < 0)
        throw ValueError("conv2d: groups/stride must be >= 1 and pad >= 0");
    ConvDims d{};
    d.N = xs.n; d.Cin = xs.c; d.H = xs.h; d.W = xs.w;
    d.Cout = ks.n; d.icpg = ks.c; d.kh = ks.h; d.kw = ks.w;
    d.groups = groups; d.stride = stride; d.pad = pad;
    if (d.kh != d.kw)
        throw ShapeError("conv2d: kernel must be square, got " + ks.str());
    if (d.Cin % groups != 0 || d.Cout % groups != 0)
        throw ShapeError("conv2d: channels not divisible by groups: input " + xs.str() +
                         ", kernel " + ks.str() + ", groups " + std::to_string(groups));
    if (d.icpg != d.Cin / groups)
        throw ShapeError("conv2d: kernel " + ks.str() + " expects " +
                         std::to_string(d.icpg * groups) + " input channels, input is " + xs.str());
    d.ocpg = d.Cout / groups;
    if (bias.defined() && bias.shape() != Shape{1, d.Cout, 1, 1})
        throw ShapeError("conv2d: bias shape " + bias.shape().str() + " does not match " +
                         std::to_string(d.Cout) + " output channels");
    d.outH = (d.H + 2 * pad - d.kh) / stride + 1;
    d.outW = (d.W + 2 * pad - d.kw) / stride + 1;
    if (d.H + 2 * pad < d.kh || d.W + 2 * pad < d.kw || d.outH < 1 || d.outW < 1)
        throw ShapeError("conv2d: input " + xs.str() + " too small for kernel " + ks.str() +
                         " with pad " + std::to_string(pad));
    return d;
}

// Output index range [lo,hi) for which in = out*stride - pad + k falls inside
// [0, len).
inline void conv_valid_range(i64 len_in, i64 len_out, int stride, int pad, i64 k, i64& lo,
                             i64& hi) {
    lo = clamp_index(ceil_div(pad - k, stride), 0, len_out);
    hi = clamp_index(floor_div(len_in - 1 + pad - k, stride) + 1, 0, len_out);
    if (hi < lo) hi = lo;
}

}  // namespace detail

// Grouped cross-correlation. Accumulation per output cell runs in a fixed
// index order; internal parallelism partitions disjoint output regions, so
// results are bitwise identical at any thread count.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, int groups,
                 int stride, int pad) {
    const auto d = detail::conv_check(x.shape(), kernel.shape(), bias, groups, stride, pad);
    Tensor<T> out(Shape{d.N, d.Cout, d.outH, d.outW});

    const T* xp = x.data().data();
    const T* kp = kernel.data().data();
    const T* bp = bias.defined() ? bias.data().data() : nullptr;
    T* op = out.data().data();

    parallel_for(d.N * d.Cout, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 n = t / d.Cout, oc = t % d.Cout;
            const i64 g = oc / d.ocpg;
            T* outp = op + (n * d.Cout + oc) * d.outH * d.outW;
            const T bv = bp ? bp[oc] : T(0);
            std::fill(outp, outp + d.outH * d.outW, bv);
            for (i64 icg = 0; icg < d.icpg; ++icg) {
                const i64 ic = g * d.icpg + icg;
                const T* inp = xp + (n * d.Cin + ic) * d.H * d.W;
                const T* kl = kp + (oc * d.icpg + icg) * d.kh * d.kw;
                for (i64 ky = 0; ky < d.kh; ++ky) {
                    i64 oy_lo, oy_hi;
                    detail::conv_valid_range(d.H, d.outH, d.stride, d.pad, ky, oy_lo, oy_hi);
                    for (i64 kx = 0; kx < d.kw; ++kx) {
                        const T kv = kl[ky * d.kw + kx];
                        i64 ox_lo, ox_hi;
                        detail::conv_valid_range(d.W, d.outW, d.stride, d.pad, kx, ox_lo, ox_hi);
                        for (i64 oy = oy_lo; oy < oy_hi; ++oy) {
                            const i64 iy = oy * d.stride - d.pad + ky;
                            T* orow = outp + oy * d.outW + ox_lo;
                            const T* irow = inp + iy * d.W + (ox_lo * d.stride - d.pad + kx);
                            const i64 cnt = ox_hi - ox_lo;
                            if (d.stride == 1) {
                                for (i64 i = 0; i < cnt; ++i) orow[i] += kv * irow[i];
                            } else {
                                for (i64 i = 0; i < cnt; ++i) orow[i] += kv * irow[i * d.stride];
                            }
                        }
                    }
                }
            }
        }
    });

    if (tape_active<T>({&x, &kernel, &bias})) {
        auto* on = out.node().get();
        auto xn = x.node();
        auto kn = kernel.node();
        auto bn = bias.defined() ? bias.node() : nullptr;
        std::function<void()> bp_fn = [on, xn, kn, bn, d]() {
            const T* gp = on->grad.data();
            const T* xp = xn->value.data();
            const T* kp = kn->value.data();
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                T* db = bn->grad.data();
                for (i64 n = 0; n < d.N; ++n)
                    for (i64 oc = 0; oc < d.Cout; ++oc) {
                        const T* gpl = gp + (n * d.Cout + oc) * d.outH * d.outW;
                        T acc = T(0);
                        for (i64 i = 0; i < d.outH * d.outW; ++i) acc += gpl[i];
                        db[oc] += acc;
                    }
            }
            if (kn->requires_grad) {
                kn->ensure_grad();
                T* dk = kn->grad.data();
                parallel_for(d.Cout, [&](i64 lo, i64 hi) {
                    for (i64 oc = lo; oc < hi; ++oc) {
                        const i64 g = oc / d.ocpg;
                        for (i64 icg = 0; icg < d.icpg; ++icg) {
                            const i64 ic = g * d.icpg + icg;
                            T* dkl = dk + (oc * d.icpg + icg) * d.kh * d.kw;
                            for (i64 ky = 0; ky < d.kh; ++ky) {
                                i64 oy_lo, oy_hi;
                                detail::conv_valid_range(d.H, d.outH, d.stride, d.pad, ky, oy_lo,
                                                         oy_hi);
                                for (i64 kx = 0; kx < d.kw; ++kx) {
                                    i64 ox_lo, ox_hi;
                                    detail::conv_valid_range(d.W, d.outW, d.stride, d.pad, kx,
                                                             ox_lo, ox_hi);
                                    T acc = T(0);
                                    for (i64 n = 0; n < d.N; ++n) {
                                        const T* gpl = gp + (n * d.Cout + oc) * d.outH * d.outW;
                                        const T* inp = xp + (n * d.Cin + ic) * d.H * d.W;
                                        for (i64 oy = oy_lo; oy < oy_hi; ++oy) {
                                            const i64 iy = oy * d.stride - d.pad + ky;
                                            const T* grow = gpl + oy * d.outW + ox_lo;
                                            const T* irow =
                                                inp + iy * d.W + (ox_lo * d.stride - d.pad + kx);
                                            const i64 cnt = ox_hi - ox_lo;
                                            if (d.stride == 1) {
                                                for (i64 i = 0; i < cnt; ++i)
                                                    acc += grow[i] * irow[i];
                                            } else {
                                                for (i64 i = 0; i < cnt; ++i)
                                                    acc += grow[i] * irow[i * d.stride];
                                            }
                                        }
                                    }
                                    dkl[ky * d.kw + kx] += acc;
                                }
                            }
                        }
                    }
                });
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                T* dx = xn->grad.data();
                parallel_for(d.N * d.Cin, [&](i64 lo, i64 hi) {
                    for (i64 t = lo; t < hi; ++t) {
                        const i64 n = t / d.Cin, ic = t % d.Cin;
                        const i64 g = ic / d.icpg, icg = ic % d.icpg;
                        T* dxp = dx + (n * d.Cin + ic) * d.H * d.W;
                        for (i64 ocg = 0; ocg < d.ocpg; ++ocg) {
                            const i64 oc = g * d.ocpg + ocg;
                            const T* gpl = gp + (n * d.Cout + oc) * d.outH * d.outW;
                            const T* kl = kp + (oc * d.icpg + icg) * d.kh * d.kw;
                            for (i64 ky = 0; ky < d.kh; ++ky) {
                                i64 oy_lo, oy_hi;
                                detail::conv_valid_range(d.H, d.outH, d.stride, d.pad, ky, oy_lo,
                                                         oy_hi);
                                for (i64 kx = 0; kx < d.kw; ++kx) {
                                    const T kv = kl[ky * d.kw + kx];
                                    i64 ox_lo, ox_hi;
                                    detail::conv_valid_range(d.W, d.outW, d.stride, d.pad, kx,
                                                             ox_lo, ox_hi);
                                    for (i64 oy = oy_lo; oy < oy_hi; ++oy) {
                                        const i64 iy = oy * d.stride - d.pad + ky;
                                        const T* grow = gpl + oy * d.outW + ox_lo;
                                        T* drow = dxp + iy * d.W + (ox_lo * d.stride - d.pad + kx);
                                        const i64 cnt = ox_hi - ox_lo;
                                        if (d.stride == 1) {
                                            for (i64 i = 0; i < cnt; ++i) drow[i] += kv * grow[i];
                                        } else {
                                            for (i64 i = 0; i < cnt; ++i)
                                                drow[i * d.stride] += kv * grow[i];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
        };
        if (bias.defined())
            attach_tape(out, {x, kernel, bias}, std::move(bp_fn));
        else
            attach_tape(out, {x, kernel}, std::move(bp_fn));
    }
    return out;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec<T>& spec) {
    return conv2d(x, spec.kernel, spec.bias, spec.groups, spec.stride, spec.pad);
}

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------

enum class Act { silu, sigmoid, relu };

template <class T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
    Tensor<T> out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    const i64 n = x.numel();
    switch (kind) {
        case Act::silu:
            for (i64 i = 0; i < n; ++i) ov[i] = xv[i] * sigmoid_scalar(xv[i]);
            break;
        case Act::sigmoid:
            for (i64 i = 0; i < n; ++i) ov[i] = sigmoid_scalar(xv[i]);
            break;
        case Act::relu:
            for (i64 i = 0; i < n; ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
            break;
    }
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn, kind]() {
            xn->ensure_grad();
            const T* g = on->grad.data();
            const T* xv = xn->value.data();
            const T* ov = on->value.data();
            T* dx = xn->grad.data();
            const i64 n = i64(xn->value.size());
            switch (kind) {
                case Act::silu:
                    for (i64 i = 0; i < n; ++i) {
                        T s = sigmoid_scalar(xv[i]);
                        dx[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
                    }
                    break;
                case Act::sigmoid:
                    for (i64 i = 0; i < n; ++i) dx[i] += g[i] * ov[i] * (T(1) - ov[i]);
                    break;
                case Act::relu:
                    for (i64 i = 0; i < n; ++i) dx[i] += xv[i] > T(0) ? g[i] : T(0);
                    break;
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) { return activation(x, Act::silu); }
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Act::sigmoid); }
template <class T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Act::relu); }

// ---------------------------------------------------------------------------
// Softmax. Max-subtracted for shift invariance; rows of a (1,1,R,C) matrix.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const Shape s = x.shape();
    if (s.n != 1 || s.c != 1)
        throw ShapeError("softmax_rows: expected (1,1,R,C), got " + s.str());
    Tensor<T> out(s);
    const auto& xv = x.data();
    auto& ov = out.data();
    for (i64 r = 0; r < s.h; ++r) {
        const T* row = xv.data() + r * s.w;
        T* orow = ov.data() + r * s.w;
        T m = row[0];
        for (i64 i = 1; i < s.w; ++i) m = std::max(m, row[i]);
        T sum = T(0);
        for (i64 i = 0; i < s.w; ++i) {
            orow[i] = std::exp(row[i] - m);
            sum += orow[i];
        }
        for (i64 i = 0; i < s.w; ++i) orow[i] /= sum;
    }
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn]() {
            xn->ensure_grad();
            const Shape& s = on->shape;
            const T* g = on->grad.data();
            const T* y = on->value.data();
            T* dx = xn->grad.data();
            for (i64 r = 0; r < s.h; ++r) {
                const T* yr = y + r * s.w;
                const T* gr = g + r * s.w;
                T dot = T(0);
                for (i64 i = 0; i < s.w; ++i) dot += gr[i] * yr[i];
                T* dr = dx + r * s.w;
                for (i64 i = 0; i < s.w; ++i) dr[i] += yr[i] * (gr[i] - dot);
            }
        });
    }
    return out;
}

// Plain-vector softmax used by callers outside the tape.
template <class T>
std::vector<T> softmax(const std::vector<T>& v) {
    if (v.empty()) throw ValueError("softmax: empty vector");
    T m = v[0];
    for (T x : v) m = std::max(m, x);
    std::vector<T> out(v.size());
    T sum = T(0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        sum += out[i];
    }
    for (auto& x : out) x /= sum;
    return out;
}

// ---------------------------------------------------------------------------
// Dense algebra on (1,1,R,C) matrices.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = a.shape(), bs = b.shape();
    if (as.n != 1 || as.c != 1 || bs.n != 1 || bs.c != 1 || as.w != bs.h)
        throw ShapeError("matmul: incompatible shapes " + as.str() + " x " + bs.str());
    const i64 R = as.h, K = as.w, C = bs.w;
    Tensor<T> out(Shape{1, 1, R, C});
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* op = out.data().data();
    for (i64 i = 0; i < R; ++i) {
        T* orow = op + i * C;
        for (i64 k = 0; k < K; ++k) {
            const T av = ap[i * K + k];
            const T* brow = bp + k * C;
            for (i64 j = 0; j < C; ++j) orow[j] += av * brow[j];
        }
    }
    if (tape_active<T>({&a, &b})) {
        auto* on = out.node().get();
        auto an = a.node();
        auto bn = b.node();
        attach_tape(out, {a, b}, [on, an, bn, R, K, C]() {
            const T* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                T* da = an->grad.data();
                const T* bp = bn->value.data();
                for (i64 i = 0; i < R; ++i)
                    for (i64 k = 0; k < K; ++k) {
                        T acc = T(0);
                        const T* grow = g + i * C;
                        const T* brow = bp + k * C;
                        for (i64 j = 0; j < C; ++j) acc += grow[j] * brow[j];
                        da[i * K + k] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                T* db = bn->grad.data();
                const T* ap = an->value.data();
                for (i64 i = 0; i < R; ++i) {
                    const T* grow = g + i * C;
                    for (i64 k = 0; k < K; ++k) {
                        const T av = ap[i * K + k];
                        T* drow = db + k * C;
                        for (i64 j = 0; j < C; ++j) drow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

// a (1,1,R,C) + bias (1,1,1,C), broadcast across rows.
template <class T>
Tensor<T> row_bias(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape as = a.shape(), bs = b.shape();
    if (as.n != 1 || as.c != 1 || bs != Shape{1, 1, 1, as.w})
        throw ShapeError("row_bias: bias " + bs.str() + " does not match rows of " + as.str());
    Tensor<T> out(as);
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* op = out.data().data();
    for (i64 i = 0; i < as.h; ++i)
        for (i64 j = 0; j < as.w; ++j) op[i * as.w + j] = ap[i * as.w + j] + bp[j];
    if (tape_active<T>({&a, &b})) {
        auto* on = out.node().get();
        auto an = a.node();
        auto bn = b.node();
        attach_tape(out, {a, b}, [on, an, bn]() {
            const Shape& s = on->shape;
            const T* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                T* da = an->grad.data();
                for (i64 i = 0; i < s.h * s.w; ++i) da[i] += g[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                T* db = bn->grad.data();
                for (i64 i = 0; i < s.h; ++i)
                    for (i64 j = 0; j < s.w; ++j) db[j] += g[i * s.w + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Same-shape elementwise arithmetic.
// ---------------------------------------------------------------------------

namespace detail {

template <class T, class Fwd, class Bwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Bwd bwd) {
    require_same_shape(a.shape(), b.shape(), name);
    Tensor<T> out(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    const i64 n = a.numel();
    for (i64 i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i]);
    if (tape_active<T>({&a, &b})) {
        auto* on = out.node().get();
        auto an = a.node();
        auto bn = b.node();
        attach_tape(out, {a, b}, [on, an, bn, bwd]() {
            const T* g = on->grad.data();
            const i64 n = i64(on->value.size());
            const T* av = an->value.data();
            const T* bv = bn->value.data();
            T* da = nullptr;
            T* db = nullptr;
            if (an->requires_grad) {
                an->ensure_grad();
                da = an->grad.data();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                db = bn->grad.data();
            }
            for (i64 i = 0; i < n; ++i) bwd(g[i], av[i], bv[i], da ? &da[i] : nullptr,
                                            db ? &db[i] : nullptr);
        });
    }
    return out;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T g, T, T, T* da, T* db) {
            if (da) *da += g;
            if (db) *db += g;
        });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T g, T, T, T* da, T* db) {
            if (da) *da += g;
            if (db) *db -= g;
        });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T g, T x, T y, T* da, T* db) {
            if (da) *da += g * y;
            if (db) *db += g * x;
        });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    Tensor<T> out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (i64 i = 0; i < x.numel(); ++i) ov[i] = xv[i] + s;
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn]() {
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* dx = xn->grad.data();
            for (std::size_t i = 0; i < on->value.size(); ++i) dx[i] += g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
    Tensor<T> out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (i64 i = 0; i < x.numel(); ++i) ov[i] = xv[i] * s;
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn, s]() {
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* dx = xn->grad.data();
            for (std::size_t i = 0; i < on->value.size(); ++i) dx[i] += g[i] * s;
        });
    }
    return out;
}

template <class T>
Tensor<T> absval(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (i64 i = 0; i < x.numel(); ++i) ov[i] = std::abs(xv[i]);
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn]() {
            xn->ensure_grad();
            const T* g = on->grad.data();
            const T* xv = xn->value.data();
            T* dx = xn->grad.data();
            for (std::size_t i = 0; i < on->value.size(); ++i)
                dx[i] += xv[i] > T(0) ? g[i] : (xv[i] < T(0) ? -g[i] : T(0));
        });
    }
    return out;
}

template <class T>
Tensor<T> sqrtval(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (i64 i = 0; i < x.numel(); ++i) ov[i] = std::sqrt(xv[i]);
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn]() {
            xn->ensure_grad();
            const T* g = on->grad.data();
            const T* ov = on->value.data();
            T* dx = xn->grad.data();
            for (std::size_t i = 0; i < on->value.size(); ++i)
                dx[i] += g[i] * T(0.5) / std::max(ov[i], T(1e-12));
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn]() {
            xn->ensure_grad();
            const T g = on->grad[0];
            for (auto& d : xn->grad) d += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    const T inv = T(1) / T(x.numel());
    Tensor<T> out = Tensor<T>::scalar(acc * inv);
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn, inv]() {
            xn->ensure_grad();
            const T g = on->grad[0] * inv;
            for (auto& d : xn->grad) d += g;
        });
    }
    return out;
}

// Per-channel spatial mean: (N,C,H,W) -> (N,C,1,1), or (1,C,1,1) when
// over_batch (batch-norm statistics).
template <class T>
Tensor<T> channel_mean(const Tensor<T>& x, bool over_batch = false) {
    const Shape s = x.shape();
    const i64 outN = over_batch ? 1 : s.n;
    const i64 cnt = s.h * s.w * (over_batch ? s.n : 1);
    Tensor<T> out(Shape{outN, s.c, 1, 1});
    const T* xp = x.data().data();
    T* op = out.data().data();
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c) {
            const T* plane = xp + (n * s.c + c) * s.h * s.w;
            T acc = T(0);
            for (i64 i = 0; i < s.h * s.w; ++i) acc += plane[i];
            op[(over_batch ? 0 : n) * s.c + c] += acc / T(cnt);
        }
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn, over_batch, cnt]() {
            xn->ensure_grad();
            const Shape& s = xn->shape;
            const T* g = on->grad.data();
            T* dx = xn->grad.data();
            for (i64 n = 0; n < s.n; ++n)
                for (i64 c = 0; c < s.c; ++c) {
                    const T gv = g[(over_batch ? 0 : n) * s.c + c] / T(cnt);
                    T* plane = dx + (n * s.c + c) * s.h * s.w;
                    for (i64 i = 0; i < s.h * s.w; ++i) plane[i] += gv;
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-channel statistic broadcast: x (N,C,H,W) combined with s (N,C,1,1) or
// (1,C,1,1).
// ---------------------------------------------------------------------------

enum class BcOp { add, sub, mul, divide };

inline int op_kind(BcOp op) { return int(op); }

template <class T>
Tensor<T> bcast(const Tensor<T>& x, const Tensor<T>& s, BcOp kind) {
    const Shape xs = x.shape(), ss = s.shape();
    if (ss.c != xs.c || ss.h != 1 || ss.w != 1 || (ss.n != xs.n && ss.n != 1))
        throw ShapeError("bcast: stat " + ss.str() + " does not broadcast over " + xs.str());
    Tensor<T> out(xs);
    const T* xp = x.data().data();
    const T* sp = s.data().data();
    T* op = out.data().data();
    const i64 hw = xs.h * xs.w;
    for (i64 n = 0; n < xs.n; ++n)
        for (i64 c = 0; c < xs.c; ++c) {
            const T sv = sp[(ss.n == 1 ? 0 : n) * xs.c + c];
            const T* xpl = xp + (n * xs.c + c) * hw;
            T* opl = op + (n * xs.c + c) * hw;
            switch (op_kind(kind)) {
                case 0: for (i64 i = 0; i < hw; ++i) opl[i] = xpl[i] + sv; break;
                case 1: for (i64 i = 0; i < hw; ++i) opl[i] = xpl[i] - sv; break;
                case 2: for (i64 i = 0; i < hw; ++i) opl[i] = xpl[i] * sv; break;
                default: for (i64 i = 0; i < hw; ++i) opl[i] = xpl[i] / sv; break;
            }
        }
    if (tape_active<T>({&x, &s})) {
        auto* on = out.node().get();
        auto xn = x.node();
        auto sn = s.node();
        attach_tape(out, {x, s}, [on, xn, sn, kind]() {
            const Shape& xs = xn->shape;
            const Shape& ss = sn->shape;
            const T* g = on->grad.data();
            const T* xp = xn->value.data();
            const T* sp = sn->value.data();
            T* dx = nullptr;
            T* ds = nullptr;
            if (xn->requires_grad) {
                xn->ensure_grad();
                dx = xn->grad.data();
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                ds = sn->grad.data();
            }
            const i64 hw = xs.h * xs.w;
            for (i64 n = 0; n < xs.n; ++n)
                for (i64 c = 0; c < xs.c; ++c) {
                    const i64 sidx = (ss.n == 1 ? 0 : n) * xs.c + c;
                    const T sv = sp[sidx];
                    const T* gpl = g + (n * xs.c + c) * hw;
                    const T* xpl = xp + (n * xs.c + c) * hw;
                    T* dxp = dx ? dx + (n * xs.c + c) * hw : nullptr;
                    T sacc = T(0);
                    switch (op_kind(kind)) {
                        case 0:
                            if (dxp) for (i64 i = 0; i < hw; ++i) dxp[i] += gpl[i];
                            if (ds) for (i64 i = 0; i < hw; ++i) sacc += gpl[i];
                            break;
                        case 1:
                            if (dxp) for (i64 i = 0; i < hw; ++i) dxp[i] += gpl[i];
                            if (ds) for (i64 i = 0; i < hw; ++i) sacc -= gpl[i];
                            break;
                        case 2:
                            if (dxp) for (i64 i = 0; i < hw; ++i) dxp[i] += gpl[i] * sv;
                            if (ds) for (i64 i = 0; i < hw; ++i) sacc += gpl[i] * xpl[i];
                            break;
                        default:
                            if (dxp) for (i64 i = 0; i < hw; ++i) dxp[i] += gpl[i] / sv;
                            if (ds)
                                for (i64 i = 0; i < hw; ++i)
                                    sacc -= gpl[i] * xpl[i] / (sv * sv);
                            break;
                    }
                    if (ds) ds[sidx] += sacc;
                }
        });
    }
    return out;
}

template <class T> Tensor<T> bcast_add(const Tensor<T>& x, const Tensor<T>& s) { return bcast(x, s, BcOp::add); }
template <class T> Tensor<T> bcast_sub(const Tensor<T>& x, const Tensor<T>& s) { return bcast(x, s, BcOp::sub); }
template <class T> Tensor<T> bcast_mul(const Tensor<T>& x, const Tensor<T>& s) { return bcast(x, s, BcOp::mul); }
template <class T> Tensor<T> bcast_div(const Tensor<T>& x, const Tensor<T>& s) { return bcast(x, s, BcOp::divide); }

// x (N,C,H,W) * m (N,1,H,W): single-channel gate broadcast across channels.
template <class T>
Tensor<T> mul_gate(const Tensor<T>& x, const Tensor<T>& m) {
    const Shape xs = x.shape(), ms = m.shape();
    if (ms.n != xs.n || ms.c != 1 || ms.h != xs.h || ms.w != xs.w)
        throw ShapeError("mul_gate: gate " + ms.str() + " does not match " + xs.str());
    Tensor<T> out(xs);
    const T* xp = x.data().data();
    const T* mp = m.data().data();
    T* op = out.data().data();
    const i64 hw = xs.h * xs.w;
    for (i64 n = 0; n < xs.n; ++n) {
        const T* mpl = mp + n * hw;
        for (i64 c = 0; c < xs.c; ++c) {
            const T* xpl = xp + (n * xs.c + c) * hw;
            T* opl = op + (n * xs.c + c) * hw;
            for (i64 i = 0; i < hw; ++i) opl[i] = xpl[i] * mpl[i];
        }
    }
    if (tape_active<T>({&x, &m})) {
        auto* on = out.node().get();
        auto xn = x.node();
        auto mn = m.node();
        attach_tape(out, {x, m}, [on, xn, mn]() {
            const Shape& xs = xn->shape;
            const i64 hw = xs.h * xs.w;
            const T* g = on->grad.data();
            const T* xp = xn->value.data();
            const T* mp = mn->value.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                T* dx = xn->grad.data();
                for (i64 n = 0; n < xs.n; ++n) {
                    const T* mpl = mp + n * hw;
                    for (i64 c = 0; c < xs.c; ++c) {
                        const T* gpl = g + (n * xs.c + c) * hw;
                        T* dxp = dx + (n * xs.c + c) * hw;
                        for (i64 i = 0; i < hw; ++i) dxp[i] += gpl[i] * mpl[i];
                    }
                }
            }
            if (mn->requires_grad) {
                mn->ensure_grad();
                T* dm = mn->grad.data();
                for (i64 n = 0; n < xs.n; ++n) {
                    T* dmp = dm + n * hw;
                    for (i64 c = 0; c < xs.c; ++c) {
                        const T* gpl = g + (n * xs.c + c) * hw;
                        const T* xpl = xp + (n * xs.c + c) * hw;
                        for (i64 i = 0; i < hw; ++i) dmp[i] += gpl[i] * xpl[i];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape moves.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& s) {
    if (s.numel() != x.numel())
        throw ShapeError("reshape: " + x.shape().str() + " -> " + s.str() +
                         " changes element count");
    Tensor<T> out(s);
    out.data() = x.data();
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn]() {
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* dx = xn->grad.data();
            for (std::size_t i = 0; i < on->value.size(); ++i) dx[i] += g[i];
        });
    }
    return out;
}

// Nearest-neighbor resize to an explicit target size (floor index mapping),
// used by the hourglass decoder to restore odd spatial dims exactly.
template <class T>
Tensor<T> nn_upsample(const Tensor<T>& x, i64 out_h, i64 out_w) {
    const Shape s = x.shape();
    if (out_h < 1 || out_w < 1)
        throw ShapeError("nn_upsample: target dims must be positive");
    Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
    std::vector<i64> ry(out_h), rx(out_w);
    for (i64 y = 0; y < out_h; ++y) ry[y] = y * s.h / out_h;
    for (i64 x_ = 0; x_ < out_w; ++x_) rx[x_] = x_ * s.w / out_w;
    const T* xp = x.data().data();
    T* op = out.data().data();
    for (i64 nc = 0; nc < s.n * s.c; ++nc) {
        const T* ipl = xp + nc * s.h * s.w;
        T* opl = op + nc * out_h * out_w;
        for (i64 y = 0; y < out_h; ++y) {
            const T* irow = ipl + ry[y] * s.w;
            T* orow = opl + y * out_w;
            for (i64 x_ = 0; x_ < out_w; ++x_) orow[x_] = irow[rx[x_]];
        }
    }
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn, ry, rx, out_h, out_w]() {
            xn->ensure_grad();
            const Shape& s = xn->shape;
            const T* g = on->grad.data();
            T* dx = xn->grad.data();
            for (i64 nc = 0; nc < s.n * s.c; ++nc) {
                T* dpl = dx + nc * s.h * s.w;
                const T* gpl = g + nc * out_h * out_w;
                for (i64 y = 0; y < out_h; ++y) {
                    T* drow = dpl + ry[y] * s.w;
                    const T* grow = gpl + y * out_w;
                    for (i64 x_ = 0; x_ < out_w; ++x_) drow[rx[x_]] += grow[x_];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-pixel kernel gather: the sampling core of the scale-aware upsampler.
// w is (1,1,out_h*out_w,ku*ku), shared across batch and channels; row_idx /
// col_idx hold the edge-clamped tap coordinates per output row/column.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> kernel_gather(const Tensor<T>& feat, const Tensor<T>& w, const std::vector<i64>& row_idx,
                        const std::vector<i64>& col_idx, int ku, i64 out_h, i64 out_w) {
    const Shape fs = feat.shape();
    const i64 taps = i64(ku) * ku;
    if (w.shape() != Shape{1, 1, out_h * out_w, taps})
        throw ShapeError("kernel_gather: weights " + w.shape().str() + " do not match " +
                         std::to_string(out_h * out_w) + " pixels x " + std::to_string(taps) +
                         " taps");
    if (i64(row_idx.size()) != out_h * ku || i64(col_idx.size()) != out_w * ku)
        throw ShapeError("kernel_gather: tap index tables do not match output dims");
    Tensor<T> out(Shape{fs.n, fs.c, out_h, out_w});
    const T* fp = feat.data().data();
    const T* wp = w.data().data();
    T* op = out.data().data();
    parallel_for(fs.n * fs.c, [&](i64 lo, i64 hi) {
        for (i64 nc = lo; nc < hi; ++nc) {
            const T* fpl = fp + nc * fs.h * fs.w;
            T* opl = op + nc * out_h * out_w;
            for (i64 oy = 0; oy < out_h; ++oy) {
                const i64* ry = row_idx.data() + oy * ku;
                T* orow = opl + oy * out_w;
                for (i64 ox = 0; ox < out_w; ++ox) {
                    const i64* cx = col_idx.data() + ox * ku;
                    const T* wrow = wp + (oy * out_w + ox) * taps;
                    T acc = T(0);
                    for (int dy = 0; dy < ku; ++dy) {
                        const T* frow = fpl + ry[dy] * fs.w;
                        const T* wline = wrow + dy * ku;
                        for (int dx = 0; dx < ku; ++dx) acc += wline[dx] * frow[cx[dx]];
                    }
                    orow[ox] = acc;
                }
            }
        }
    });
    if (tape_active<T>({&feat, &w})) {
        auto* on = out.node().get();
        auto fn = feat.node();
        auto wn = w.node();
        attach_tape(out, {feat, w}, [on, fn, wn, row_idx, col_idx, ku, out_h, out_w]() {
            const Shape& fs = fn->shape;
            const i64 taps = i64(ku) * ku;
            const T* g = on->grad.data();
            const T* fp = fn->value.data();
            const T* wp = wn->value.data();
            if (fn->requires_grad) {
                fn->ensure_grad();
                T* df = fn->grad.data();
                parallel_for(fs.n * fs.c, [&](i64 lo, i64 hi) {
                    for (i64 nc = lo; nc < hi; ++nc) {
                        T* dpl = df + nc * fs.h * fs.w;
                        const T* gpl = g + nc * out_h * out_w;
                        for (i64 oy = 0; oy < out_h; ++oy) {
                            const i64* ry = row_idx.data() + oy * ku;
                            const T* grow = gpl + oy * out_w;
                            for (i64 ox = 0; ox < out_w; ++ox) {
                                const T gv = grow[ox];
                                const i64* cx = col_idx.data() + ox * ku;
                                const T* wrow = wp + (oy * out_w + ox) * taps;
                                for (int dy = 0; dy < ku; ++dy) {
                                    T* drow = dpl + ry[dy] * fs.w;
                                    const T* wline = wrow + dy * ku;
                                    for (int dx = 0; dx < ku; ++dx)
                                        drow[cx[dx]] += gv * wline[dx];
                                }
                            }
                        }
                    }
                });
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                T* dw = wn->grad.data();
                parallel_for(out_h, [&](i64 lo, i64 hi) {
                    for (i64 oy = lo; oy < hi; ++oy) {
                        const i64* ry = row_idx.data() + oy * ku;
                        for (i64 ox = 0; ox < out_w; ++ox) {
                            const i64* cx = col_idx.data() + ox * ku;
                            T* dwrow = dw + (oy * out_w + ox) * taps;
                            for (i64 nc = 0; nc < fs.n * fs.c; ++nc) {
                                const T* fpl = fp + nc * fs.h * fs.w;
                                const T gv = g[nc * out_h * out_w + oy * out_w + ox];
                                for (int dy = 0; dy < ku; ++dy) {
                                    const T* frow = fpl + ry[dy] * fs.w;
                                    T* dwline = dwrow + dy * ku;
                                    for (int dx = 0; dx < ku; ++dx)
                                        dwline[dx] += gv * frow[cx[dx]];
                                }
                            }
                        }
                    }
                });
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Patchwise biased variance over non-overlapping n x n windows (remainder
// truncated). Two-pass form so constant patches give exactly ~0.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> variance_map(const Tensor<T>& x, int n) {
    if (n < 2) throw ValueError("variance_map: window must be >= 2");
    const Shape s = x.shape();
    if (s.h < n || s.w < n)
        throw ShapeError("variance_map: image " + s.str() + " smaller than one " +
                         std::to_string(n) + "x" + std::to_string(n) + " patch");
    const i64 ph = s.h / n, pw = s.w / n;
    Tensor<T> out(Shape{s.n, s.c, ph, pw});
    std::vector<T> means(std::size_t(s.n * s.c * ph * pw));
    const T* xp = x.data().data();
    T* op = out.data().data();
    const T inv = T(1) / T(n * n);
    for (i64 nc = 0; nc < s.n * s.c; ++nc) {
        const T* xpl = xp + nc * s.h * s.w;
        T* opl = op + nc * ph * pw;
        T* mpl = means.data() + nc * ph * pw;
        for (i64 py = 0; py < ph; ++py)
            for (i64 px = 0; px < pw; ++px) {
                T sum = T(0);
                for (int dy = 0; dy < n; ++dy) {
                    const T* row = xpl + (py * n + dy) * s.w + px * n;
                    for (int dx = 0; dx < n; ++dx) sum += row[dx];
                }
                const T mu = sum * inv;
                T var = T(0);
                for (int dy = 0; dy < n; ++dy) {
                    const T* row = xpl + (py * n + dy) * s.w + px * n;
                    for (int dx = 0; dx < n; ++dx) {
                        const T dv = row[dx] - mu;
                        var += dv * dv;
                    }
                }
                mpl[py * pw + px] = mu;
                opl[py * pw + px] = var * inv;
            }
    }
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn, means, n, ph, pw, inv]() {
            xn->ensure_grad();
            const Shape& s = xn->shape;
            const T* g = on->grad.data();
            const T* xp = xn->value.data();
            T* dx = xn->grad.data();
            for (i64 nc = 0; nc < s.n * s.c; ++nc) {
                const T* xpl = xp + nc * s.h * s.w;
                T* dpl = dx + nc * s.h * s.w;
                const T* gpl = g + nc * ph * pw;
                const T* mpl = means.data() + nc * ph * pw;
                for (i64 py = 0; py < ph; ++py)
                    for (i64 px = 0; px < pw; ++px) {
                        const T gv = gpl[py * pw + px] * T(2) * inv;
                        const T mu = mpl[py * pw + px];
                        for (int dy = 0; dy < n; ++dy) {
                            const T* row = xpl + (py * n + dy) * s.w + px * n;
                            T* drow = dpl + (py * n + dy) * s.w + px * n;
                            for (int dxi = 0; dxi < n; ++dxi)
                                drow[dxi] += gv * (row[dxi] - mu);
                        }
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Small non-tape utilities.
// ---------------------------------------------------------------------------

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0;
    for (i64 i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
    return m;
}

template <class T>
void clamp01_inplace(Tensor<T>& t) {
    for (auto& v : t.data()) v = std::min(T(1), std::max(T(0), v));
}

}  // namespace saam
