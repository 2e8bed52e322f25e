#pragma once

#include "saam/tensor.hpp"

namespace saam {

enum class ResampleDir { up, down };

// Keys cubic convolution kernel, a = -0.5 (Catmull-Rom). Exact partition of
// unity across the four taps at any phase.
inline double keys_cubic(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

namespace detail {

struct ResampleTaps {
    std::vector<i64> idx;    // 4 clamped source indices per output position
    std::vector<double> wt;  // matching kernel weights
};

// Center-aligned mapping src = (o + 0.5) * (in/out) - 0.5; weights are taken
// at the unclamped distances so edge replication keeps the weight sum at 1.
inline ResampleTaps resample_axis(i64 in, i64 out) {
    ResampleTaps t;
    t.idx.resize(std::size_t(out) * 4);
    t.wt.resize(std::size_t(out) * 4);
    const double ratio = double(in) / double(out);
    for (i64 o = 0; o < out; ++o) {
        const double src = (double(o) + 0.5) * ratio - 0.5;
        const i64 base = i64(std::floor(src));
        for (int d = 0; d < 4; ++d) {
            const i64 tap = base - 1 + d;
            t.idx[std::size_t(o) * 4 + d] = clamp_index(tap, 0, in - 1);
            t.wt[std::size_t(o) * 4 + d] = keys_cubic(src - double(tap));
        }
    }
    return t;
}

}  // namespace detail

// Separable cubic resampling to explicit output dims (non-differentiable
// image utility; accumulates in double).
template <class T>
Tensor<T> bicubic_to(const Tensor<T>& img, i64 out_h, i64 out_w) {
    const Shape s = img.shape();
    if (out_h < 1 || out_w < 1)
        throw ShapeError("bicubic_to: output dims must be >= 1");
    const auto tv = detail::resample_axis(s.h, out_h);
    const auto th = detail::resample_axis(s.w, out_w);
    Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
    std::vector<double> row_buf(std::size_t(s.h) * out_w);
    for (i64 nc = 0; nc < s.n * s.c; ++nc) {
        const T* src = img.data().data() + nc * s.h * s.w;
        // Horizontal pass.
        for (i64 y = 0; y < s.h; ++y) {
            const T* srow = src + y * s.w;
            double* drow = row_buf.data() + y * out_w;
            for (i64 x = 0; x < out_w; ++x) {
                const i64* ix = th.idx.data() + x * 4;
                const double* wx = th.wt.data() + x * 4;
                drow[x] = wx[0] * srow[ix[0]] + wx[1] * srow[ix[1]] + wx[2] * srow[ix[2]] +
                          wx[3] * srow[ix[3]];
            }
        }
        // Vertical pass.
        T* dst = out.data().data() + nc * out_h * out_w;
        for (i64 y = 0; y < out_h; ++y) {
            const i64* iy = tv.idx.data() + y * 4;
            const double* wy = tv.wt.data() + y * 4;
            T* drow = dst + y * out_w;
            for (i64 x = 0; x < out_w; ++x) {
                drow[x] = T(wy[0] * row_buf[iy[0] * out_w + x] + wy[1] * row_buf[iy[1] * out_w + x] +
                            wy[2] * row_buf[iy[2] * out_w + x] + wy[3] * row_buf[iy[3] * out_w + x]);
            }
        }
    }
    return out;
}

// up: dims floor(in * r); down: dims floor(in / r). Down is the standard SR
// degradation.
template <class T>
Tensor<T> bicubic_resample(const Tensor<T>& img, const ScalePair& scale, ResampleDir dir) {
    if (scale.rv < 1.0 || scale.rh < 1.0)
        throw ValueError("bicubic_resample: scale " + scale.str() + " below 1");
    const Shape s = img.shape();
    i64 oh, ow;
    if (dir == ResampleDir::up) {
        oh = i64(std::floor(double(s.h) * scale.rv));
        ow = i64(std::floor(double(s.w) * scale.rh));
    } else {
        oh = i64(std::floor(double(s.h) / scale.rv));
        ow = i64(std::floor(double(s.w) / scale.rh));
    }
    if (oh < 1 || ow < 1)
        throw ShapeError("bicubic_resample: " + s.str() + " at " + scale.str() +
                         " gives an empty output");
    return bicubic_to(img, oh, ow);
}

}  // namespace saam
