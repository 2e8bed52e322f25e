#pragma once

#include "saam/ops.hpp"

namespace saam {

// ---------------------------------------------------------------------------
// SimAM: parameter-free 3-D attention, used in every slot where the hourglass
// and upsampler would otherwise carry batch normalization.
//
// Per channel with spatial mean mu and biased variance var:
//   a(t) = sigmoid( ((t - mu)^2 + 2 var + 2 lambda) / (4 (var + lambda)) )
//   out  = a . x
// The attention floor is sigmoid(0.5), reached at t == mu; a 1x1 channel
// degenerates to a(t) = sigmoid(0.5) uniformly because (t - mu)^2 and var
// both vanish.
// ---------------------------------------------------------------------------

struct SimamConfig {
    double lambda = 1e-4;
    bool variance_unbiased = false;  // divide by n-1 instead of n

    void validate() const {
        if (lambda <= 0) throw ValueError("SimamConfig: lambda must be > 0");
    }
};

template <class T>
Tensor<T> simam(const Tensor<T>& x, const SimamConfig& cfg = {}) {
    cfg.validate();
    const Shape s = x.shape();
    Tensor<T> mu = channel_mean(x);                 // (N,C,1,1)
    Tensor<T> d = bcast_sub(x, mu);                 // t - mu
    Tensor<T> d2 = mul(d, d);
    Tensor<T> var = channel_mean(d2);               // biased: divide by H*W
    if (cfg.variance_unbiased) {
        const i64 n = s.h * s.w;
        var = mul_scalar(var, T(n) / T(std::max<i64>(1, n - 1)));
    }
    const T lam = T(cfg.lambda);
    Tensor<T> num = bcast_add(d2, add_scalar(mul_scalar(var, T(2)), T(2) * lam));
    Tensor<T> den = add_scalar(mul_scalar(var, T(4)), T(4) * lam);
    Tensor<T> attn = activation(bcast_div(num, den), Act::sigmoid);
    return mul(attn, x);
}

// Attention weights alone (test/inspection path).
template <class T>
Tensor<T> simam_weights(const Tensor<T>& x, const SimamConfig& cfg = {}) {
    NoGradGuard ng;
    Tensor<T> y = simam(x, cfg);
    Tensor<T> w(x.shape());
    for (i64 i = 0; i < x.numel(); ++i) {
        const T xv = x.data()[i];
        w.data()[i] = xv != T(0) ? y.data()[i] / xv : T(sigmoid_scalar(0.5));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Per-channel batch normalization with running statistics; the Table-3
// "Batch" arm for the hourglass norm slots. Normalization uses biased batch
// variance; running stats update with momentum 0.1.
// ---------------------------------------------------------------------------

template <class T>
struct BatchNorm2d {
    Tensor<T> gamma;         // (1,C,1,1), trainable
    Tensor<T> beta;          // (1,C,1,1), trainable
    Tensor<T> running_mean;  // (1,C,1,1), buffer
    Tensor<T> running_var;   // (1,C,1,1), buffer
    double eps = 1e-5;
    double momentum = 0.1;

    static BatchNorm2d make(i64 channels) {
        BatchNorm2d bn;
        bn.gamma = Tensor<T>::full(Shape{1, channels, 1, 1}, T(1));
        bn.beta = Tensor<T>::zeros(Shape{1, channels, 1, 1});
        bn.running_mean = Tensor<T>::zeros(Shape{1, channels, 1, 1});
        bn.running_var = Tensor<T>::full(Shape{1, channels, 1, 1}, T(1));
        bn.gamma.set_requires_grad(true);
        bn.beta.set_requires_grad(true);
        return bn;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> xhat;
        if (training) {
            Tensor<T> mu = channel_mean(x, /*over_batch=*/true);
            Tensor<T> d = bcast_sub(x, mu);
            Tensor<T> var = channel_mean(mul(d, d), /*over_batch=*/true);
            {
                // Running stats track batch stats outside the tape.
                NoGradGuard ng;
                for (i64 c = 0; c < x.shape().c; ++c) {
                    auto& rm = running_mean.data()[std::size_t(c)];
                    auto& rv = running_var.data()[std::size_t(c)];
                    rm = T(1 - momentum) * rm + T(momentum) * mu.data()[std::size_t(c)];
                    rv = T(1 - momentum) * rv + T(momentum) * var.data()[std::size_t(c)];
                }
            }
            xhat = bcast_div(d, sqrtval(add_scalar(var, T(eps))));
        } else {
            Tensor<T> mu = running_mean.detach();
            Tensor<T> var = running_var.detach();
            xhat = bcast_div(bcast_sub(x, mu), sqrtval(add_scalar(var, T(eps))));
        }
        return bcast_add(bcast_mul(xhat, gamma), beta);
    }
};

enum class NormKind { simam, batchnorm };

}  // namespace saam
