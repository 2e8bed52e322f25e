#pragma once

#include "saam/init.hpp"
#include "saam/simam.hpp"

namespace saam {

enum class RoundMode { floor, round };

inline i64 scaled_dim(i64 in, double r, RoundMode mode) {
    double v = double(in) * r;
    i64 out = mode == RoundMode::floor ? i64(std::floor(v)) : i64(std::llround(v));
    return std::max<i64>(1, out);
}

// ---------------------------------------------------------------------------
// Center-aligned inverse mapping from output pixels to source coordinates:
// src = (out + 0.5) / r - 0.5. base/frac derive from src clamped to
// [0, in-1]; taps are anchored at base + {-1,0,1,2} with edge clamping.
// ---------------------------------------------------------------------------

struct CoordMap {
    i64 out_h = 0, out_w = 0;
    std::vector<double> src_v, src_h;    // raw source coordinates
    std::vector<double> frac_v, frac_h;  // in [0,1)
    std::vector<i64> base_v, base_h;     // anchor indices
};

namespace detail {
inline void map_axis(i64 in, i64 out, double r, std::vector<double>& src,
                     std::vector<double>& frac, std::vector<i64>& base) {
    src.resize(out);
    frac.resize(out);
    base.resize(out);
    for (i64 o = 0; o < out; ++o) {
        const double s = (double(o) + 0.5) / r - 0.5;
        const double sc = std::min(double(in - 1), std::max(0.0, s));
        i64 b = i64(std::floor(sc));
        if (b > in - 1) b = in - 1;
        src[o] = s;
        base[o] = b;
        frac[o] = sc - double(b);
    }
}
}  // namespace detail

inline CoordMap map_coords(i64 in_h, i64 in_w, const ScalePair& scale,
                           RoundMode mode = RoundMode::floor) {
    if (scale.rv < 1.0 || scale.rh < 1.0)
        throw ValueError("map_coords: scale " + scale.str() + " below 1");
    CoordMap cm;
    cm.out_h = scaled_dim(in_h, scale.rv, mode);
    cm.out_w = scaled_dim(in_w, scale.rh, mode);
    detail::map_axis(in_h, cm.out_h, scale.rv, cm.src_v, cm.frac_v, cm.base_v);
    detail::map_axis(in_w, cm.out_w, scale.rh, cm.src_h, cm.frac_h, cm.base_h);
    return cm;
}

// ---------------------------------------------------------------------------
// SAAM upsampling layer: depthwise feature conv -> SimAM -> SiLU, then a
// per-pixel predicted k_u x k_u sampling kernel shared across channels.
// Kernel weights are softmax-normalized, so constants are preserved exactly
// up to rounding.
// ---------------------------------------------------------------------------

template <class T>
struct UpsamplerParams {
    ConvSpec<T> feat_dw;  // depthwise 3x3 over input features
    Dense<T> kpred1;      // 4 -> d_u
    Dense<T> kpred2;      // d_u -> k_u^2
    ConvSpec<T> recon;    // 1x1 to 3 channels
    int k_u = 4;
    SimamConfig simam_cfg;
    RoundMode round_mode = RoundMode::floor;

    static UpsamplerParams make(int channels, int k_u, int d_u, const SimamConfig& simam_cfg,
                                Rng& rng) {
        UpsamplerParams u;
        u.feat_dw = make_conv<T>(channels, 1, 3, channels, 1, 1, rng);
        u.kpred1 = Dense<T>::make(4, d_u, rng);
        u.kpred2 = Dense<T>::make(d_u, i64(k_u) * k_u, rng);
        u.recon = make_conv<T>(3, channels, 1, 1, 1, 0, rng);
        u.k_u = k_u;
        u.simam_cfg = simam_cfg;
        return u;
    }
};

// Sampling kernel for one output pixel.
template <class T>
Tensor<T> predict_kernel(double frac_v, double frac_h, const ScalePair& scale,
                         const UpsamplerParams<T>& params) {
    Tensor<T> feat = Tensor<T>::from_data(
        Shape{1, 1, 1, 4}, {T(frac_v), T(frac_h), T(1.0 / scale.rv), T(1.0 / scale.rh)});
    return softmax_rows(params.kpred2(silu(params.kpred1(feat))));
}

// All output pixels at once: one (P,4) matrix through the prediction network
// instead of a per-pixel loop. Weights are shared across batch and channels.
template <class T>
Tensor<T> predict_kernels(const CoordMap& cm, const ScalePair& scale,
                          const UpsamplerParams<T>& params) {
    const i64 pixels = cm.out_h * cm.out_w;
    std::vector<T> rows(std::size_t(pixels) * 4);
    const T iv = T(1.0 / scale.rv), ih = T(1.0 / scale.rh);
    for (i64 oy = 0; oy < cm.out_h; ++oy)
        for (i64 ox = 0; ox < cm.out_w; ++ox) {
            T* r = rows.data() + (oy * cm.out_w + ox) * 4;
            r[0] = T(cm.frac_v[oy]);
            r[1] = T(cm.frac_h[ox]);
            r[2] = iv;
            r[3] = ih;
        }
    Tensor<T> feat = Tensor<T>::from_data(Shape{1, 1, pixels, 4}, std::move(rows));
    return softmax_rows(params.kpred2(silu(params.kpred1(feat))));
}

namespace detail {
inline std::vector<i64> tap_table(const std::vector<i64>& base, i64 in, int ku) {
    std::vector<i64> idx(base.size() * std::size_t(ku));
    for (std::size_t o = 0; o < base.size(); ++o)
        for (int d = 0; d < ku; ++d)
            idx[o * ku + d] = clamp_index(base[o] + d - 1, 0, in - 1);
    return idx;
}
}  // namespace detail

// HR feature map at (floor(H*r_v), floor(W*r_h)).
template <class T>
Tensor<T> upsample(const Tensor<T>& x, const ScalePair& scale, const UpsamplerParams<T>& params) {
    const Shape s = x.shape();
    if (s.h < params.k_u || s.w < params.k_u)
        throw ShapeError("upsample: input " + s.str() + " smaller than the " +
                         std::to_string(params.k_u) + "-tap neighborhood");
    Tensor<T> feat = silu(simam(conv2d(x, params.feat_dw), params.simam_cfg));
    CoordMap cm = map_coords(s.h, s.w, scale, params.round_mode);
    Tensor<T> w = predict_kernels(cm, scale, params);
    auto row_idx = detail::tap_table(cm.base_v, s.h, params.k_u);
    auto col_idx = detail::tap_table(cm.base_h, s.w, params.k_u);
    return kernel_gather(feat, w, row_idx, col_idx, params.k_u, cm.out_h, cm.out_w);
}

// 1x1 projection to RGB. Not clamped here: training needs raw values; export
// clamps.
template <class T>
Tensor<T> reconstruct(const Tensor<T>& feat, const UpsamplerParams<T>& params) {
    if (feat.shape().c != params.recon.kernel.shape().c)
        throw ShapeError("reconstruct: features " + feat.shape().str() + " do not match " +
                         params.recon.kernel.shape().str() + " projection");
    return conv2d(feat, params.recon);
}

}  // namespace saam
