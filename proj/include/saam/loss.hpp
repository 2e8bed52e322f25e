#pragma once

#include "saam/ops.hpp"

namespace saam {

inline constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;  // BT.601

// ---------------------------------------------------------------------------
// Gradient-variance loss: L2-style distance between patchwise variance maps
// of Sobel gradients of the HR and SR images, added to plain L1. Generated
// images smooth their gradients; this term pushes local variance back up.
// ---------------------------------------------------------------------------

struct GvConfig {
    int window = 8;          // non-overlapping patch size
    double lambda_gv = 0.01;

    void validate() const {
        if (window < 2) throw ValueError("GvConfig: window must be >= 2");
        if (lambda_gv < 0) throw ValueError("GvConfig: lambda_gv must be >= 0");
    }
};

template <class T>
Tensor<T> rgb_to_gray(const Tensor<T>& img) {
    if (img.shape().c != 3)
        throw ShapeError("rgb_to_gray: expected 3 channels, got " + img.shape().str());
    Tensor<T> k = Tensor<T>::from_data(Shape{1, 3, 1, 1}, {T(kLumaR), T(kLumaG), T(kLumaB)});
    return conv2d(img, k, Tensor<T>{}, 1, 1, 0);
}

namespace detail {
template <class T>
Tensor<T> sobel_kernel_x() {
    return Tensor<T>::from_data(Shape{1, 1, 3, 3},
                                {T(-1), T(0), T(1), T(-2), T(0), T(2), T(-1), T(0), T(1)});
}
template <class T>
Tensor<T> sobel_kernel_y() {
    return Tensor<T>::from_data(Shape{1, 1, 3, 3},
                                {T(-1), T(-2), T(-1), T(0), T(0), T(0), T(1), T(2), T(1)});
}
}  // namespace detail

// Fixed (non-trainable) Sobel filters, zero padding.
template <class T>
std::pair<Tensor<T>, Tensor<T>> sobel_gradients(const Tensor<T>& gray) {
    if (gray.shape().c != 1)
        throw ShapeError("sobel_gradients: expected 1 channel, got " + gray.shape().str());
    Tensor<T> gx = conv2d(gray, detail::sobel_kernel_x<T>(), Tensor<T>{}, 1, 1, 1);
    Tensor<T> gy = conv2d(gray, detail::sobel_kernel_y<T>(), Tensor<T>{}, 1, 1, 1);
    return {gx, gy};
}

// L_GV: the expectation realized as the mean of per-patch |V_hr - V_sr| over
// the patch grid (and batch), per gradient axis.
template <class T>
Tensor<T> gv_loss(const Tensor<T>& hr, const Tensor<T>& sr, const GvConfig& cfg = {}) {
    cfg.validate();
    require_same_shape(hr.shape(), sr.shape(), "gv_loss");
    Tensor<T> gray_hr = rgb_to_gray(hr);
    Tensor<T> gray_sr = rgb_to_gray(sr);
    auto [gx_hr, gy_hr] = sobel_gradients(gray_hr);
    auto [gx_sr, gy_sr] = sobel_gradients(gray_sr);
    Tensor<T> vx_hr = variance_map(gx_hr, cfg.window);
    Tensor<T> vy_hr = variance_map(gy_hr, cfg.window);
    Tensor<T> vx_sr = variance_map(gx_sr, cfg.window);
    Tensor<T> vy_sr = variance_map(gy_sr, cfg.window);
    return add(mean_all(absval(sub(vx_hr, vx_sr))), mean_all(absval(sub(vy_hr, vy_sr))));
}

template <class T>
struct LossTerms {
    Tensor<T> total, l1, gv;
};

// L_all = |I_hr - I_sr|_1 + lambda_gv * L_GV. The GV term is evaluated for
// logging even at lambda 0, but only joins the graph when it contributes.
template <class T>
LossTerms<T> total_loss_terms(const Tensor<T>& hr, const Tensor<T>& sr, const GvConfig& cfg = {}) {
    cfg.validate();
    require_same_shape(hr.shape(), sr.shape(), "total_loss");
    LossTerms<T> out;
    out.l1 = mean_all(absval(sub(hr, sr)));
    if (cfg.lambda_gv > 0) {
        out.gv = gv_loss(hr, sr, cfg);
        out.total = add(out.l1, mul_scalar(out.gv, T(cfg.lambda_gv)));
    } else {
        NoGradGuard ng;
        out.gv = gv_loss(hr.detach(), sr.detach(), cfg);
        out.total = out.l1;
    }
    return out;
}

template <class T>
Tensor<T> total_loss(const Tensor<T>& hr, const Tensor<T>& sr, const GvConfig& cfg = {}) {
    return total_loss_terms(hr, sr, cfg).total;
}

}  // namespace saam
