#pragma once

#include "saam/init.hpp"
#include "saam/simam.hpp"

namespace saam {

// ---------------------------------------------------------------------------
// The plug-in block: guidance hourglass + lightweight scale-aware convolution,
// fused as  F' = F + F_adpt . M.
// ---------------------------------------------------------------------------

// E depthwise kernel experts blended per scale through a small routing
// network. With dense_layer the experts are stored as a compressed basis of
// dim d_b plus an expansion map, cutting the stored parameter count below
// E*C*k^2.
template <class T>
struct ExpertBank {
    int num_experts = 16;  // E
    int channels = 0;      // C
    int ksize = 3;         // k
    bool dense_layer = true;

    Tensor<T> experts;  // (1,1,E,C*k*k) when !dense_layer
    Tensor<T> basis;    // (1,1,d_b,C*k*k) when dense_layer
    Tensor<T> expand;   // (1,1,E,d_b) when dense_layer

    Dense<T> routing1;  // 2 -> d_r
    Dense<T> routing2;  // d_r -> E

    double scale_min = 1.0;
    double scale_max = 4.5;  // training range guard

    static ExpertBank make(int channels, int num_experts, int ksize, int d_r, int d_b,
                           bool dense_layer, Rng& rng) {
        ExpertBank b;
        b.num_experts = num_experts;
        b.channels = channels;
        b.ksize = ksize;
        b.dense_layer = dense_layer;
        const i64 kk = i64(channels) * ksize * ksize;
        if (dense_layer) {
            // Safe init: zero basis makes every blended kernel zero at step 0.
            b.basis = Tensor<T>::zeros(Shape{1, 1, d_b, kk});
            b.basis.set_requires_grad(true);
            b.expand = Tensor<T>::zeros(Shape{1, 1, num_experts, d_b});
            he_uniform(b.expand, d_b, rng);
            b.expand.set_requires_grad(true);
        } else {
            b.experts = Tensor<T>::zeros(Shape{1, 1, num_experts, kk});
            b.experts.set_requires_grad(true);
        }
        b.routing1 = Dense<T>::make(2, d_r, rng);
        b.routing2 = Dense<T>::make(d_r, num_experts, rng);
        return b;
    }

    void check_scale(const ScalePair& scale) const {
        for (double r : {scale.rv, scale.rh})
            if (r < scale_min || r > scale_max)
                throw ValueError("scale " + scale.str() + " outside guard range [" +
                                 std::to_string(scale_min) + ", " + std::to_string(scale_max) +
                                 "]");
    }
};

// Routing features are the reciprocals (1/r_v, 1/r_h): bounded in (0,1] over
// the guard range. Output sums to 1 by softmax.
template <class T>
Tensor<T> routing_weights(const ScalePair& scale, const ExpertBank<T>& bank) {
    bank.check_scale(scale);
    Tensor<T> feat = Tensor<T>::from_data(Shape{1, 1, 1, 2},
                                          {T(1.0 / scale.rv), T(1.0 / scale.rh)});
    Tensor<T> hidden = silu(bank.routing1(feat));
    return softmax_rows(bank.routing2(hidden));
}

// kernel = sum_e w_e * expert_e, after basis expansion when dense_layer is
// on. Linear in w.
template <class T>
Tensor<T> blend_experts(const ExpertBank<T>& bank, const Tensor<T>& w) {
    if (w.shape() != Shape{1, 1, 1, bank.num_experts})
        throw ValueError("blend_experts: weight vector " + w.shape().str() + " does not match " +
                         std::to_string(bank.num_experts) + " experts");
    Tensor<T> flat = bank.dense_layer ? matmul(matmul(w, bank.expand), bank.basis)
                                      : matmul(w, bank.experts);
    return reshape(flat, Shape{bank.channels, 1, bank.ksize, bank.ksize});
}

// Depthwise conv with the blended kernel, then 1x1 channel merge. Shape
// preserving.
template <class T>
Tensor<T> scale_aware_conv(const Tensor<T>& x, const ScalePair& scale, const ExpertBank<T>& bank,
                           const ConvSpec<T>& pointwise) {
    if (x.shape().c != bank.channels)
        throw ShapeError("scale_aware_conv: input " + x.shape().str() + " does not carry " +
                         std::to_string(bank.channels) + " channels");
    Tensor<T> w = routing_weights(scale, bank);
    Tensor<T> kernel = blend_experts(bank, w);
    Tensor<T> dw = conv2d(x, kernel, Tensor<T>{}, /*groups=*/bank.channels, /*stride=*/1,
                          /*pad=*/bank.ksize / 2);
    return conv2d(dw, pointwise);
}

// ---------------------------------------------------------------------------
// Guidance hourglass: conv(stride2) -> norm -> SiLU -> conv -> norm -> SiLU
// -> NN-upsample to input size -> conv -> sigmoid. Norm slots hold SimAM by
// default, batch normalization for the ablation arm.
// ---------------------------------------------------------------------------

template <class T>
struct Hourglass {
    ConvSpec<T> down;  // 3x3 stride 2, C -> Cb
    ConvSpec<T> mid;   // 3x3, Cb -> Cb
    ConvSpec<T> head;  // 3x3, Cb -> guidance channels
    NormKind norm = NormKind::simam;
    SimamConfig simam_cfg;
    BatchNorm2d<T> bn1, bn2;

    static Hourglass make(int channels, int guidance_channels, NormKind norm,
                          const SimamConfig& simam_cfg, Rng& rng) {
        Hourglass h;
        const int cb = std::max(4, channels / 2);
        h.down = make_conv<T>(cb, channels, 3, 1, 2, 1, rng);
        h.mid = make_conv<T>(cb, cb, 3, 1, 1, 1, rng);
        h.head = make_conv<T>(guidance_channels, cb, 3, 1, 1, 1, rng);
        h.norm = norm;
        h.simam_cfg = simam_cfg;
        if (norm == NormKind::batchnorm) {
            h.bn1 = BatchNorm2d<T>::make(cb);
            h.bn2 = BatchNorm2d<T>::make(cb);
        }
        return h;
    }

    Tensor<T> norm_slot(const Tensor<T>& x, int which, bool training) {
        if (norm == NormKind::simam) return simam(x, simam_cfg);
        return (which == 1 ? bn1 : bn2).forward(x, training);
    }
};

// Guidance map M in (0,1), same spatial dims as the input (odd sizes restored
// by explicit-target nearest-neighbor upsampling).
template <class T>
Tensor<T> guidance_map(const Tensor<T>& x, Hourglass<T>& hg, bool training = false) {
    const Shape s = x.shape();
    if (s.h < 2 || s.w < 2)
        throw ShapeError("guidance_map: input " + s.str() + " too small for the stride-2 stage");
    Tensor<T> e = silu(hg.norm_slot(conv2d(x, hg.down), 1, training));
    Tensor<T> m = silu(hg.norm_slot(conv2d(e, hg.mid), 2, training));
    Tensor<T> u = nn_upsample(m, s.h, s.w);
    return activation(conv2d(u, hg.head), Act::sigmoid);
}

// ---------------------------------------------------------------------------
// One plug-in instance.
// ---------------------------------------------------------------------------

template <class T>
struct SaamBlockParams {
    Hourglass<T> hourglass;
    ExpertBank<T> bank;
    ConvSpec<T> pointwise;  // 1x1, C -> C
    int guidance_channels = 1;

    static SaamBlockParams make(int channels, int num_experts, int ksize, int d_r, int d_b,
                                bool dense_layer, int guidance_channels, NormKind norm,
                                const SimamConfig& simam_cfg, Rng& rng) {
        SaamBlockParams p;
        p.hourglass = Hourglass<T>::make(channels, guidance_channels, norm, simam_cfg, rng);
        p.bank = ExpertBank<T>::make(channels, num_experts, ksize, d_r, d_b, dense_layer, rng);
        // Zero bias keeps F_adpt == 0 at init (safe insertion); the weight is
        // live so experts receive gradient from step 1.
        p.pointwise = make_conv<T>(channels, channels, 1, 1, 1, 0, rng);
        p.guidance_channels = guidance_channels;
        return p;
    }
};

// Eq. 1 fusion against an explicit guidance map (test/inspection path).
template <class T>
Tensor<T> saam_forward_gated(const Tensor<T>& x, const ScalePair& scale,
                             const SaamBlockParams<T>& params, const Tensor<T>& guidance) {
    Tensor<T> adapted = scale_aware_conv(x, scale, params.bank, params.pointwise);
    Tensor<T> gated = guidance.shape().c == 1 ? mul_gate(adapted, guidance)
                                              : mul(adapted, guidance);
    return add(x, gated);
}

// F' = F + F_adpt . M.
template <class T>
Tensor<T> saam_forward(const Tensor<T>& x, const ScalePair& scale, SaamBlockParams<T>& params,
                       bool training = false) {
    Tensor<T> m = guidance_map(x, params.hourglass, training);
    return saam_forward_gated(x, scale, params, m);
}

}  // namespace saam
