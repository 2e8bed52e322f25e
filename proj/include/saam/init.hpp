#pragma once

#include "saam/ops.hpp"

namespace saam {

// He-uniform fill: U(-b, b) with b = sqrt(6 / fan_in).
template <class T>
void he_uniform(Tensor<T>& t, i64 fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(std::max<i64>(1, fan_in)));
    for (auto& v : t.data()) v = T(rng.uniform(-bound, bound));
}

template <class T>
ConvSpec<T> make_conv(i64 c_out, i64 c_in_per_group, int k, int groups, int stride, int pad,
                      Rng& rng, bool with_bias = true, bool zero_init = false) {
    ConvSpec<T> spec;
    spec.kernel = Tensor<T>::zeros(Shape{c_out, c_in_per_group, k, k});
    if (!zero_init) he_uniform(spec.kernel, c_in_per_group * k * k, rng);
    spec.kernel.set_requires_grad(true);
    if (with_bias) {
        spec.bias = Tensor<T>::zeros(Shape{1, c_out, 1, 1});
        spec.bias.set_requires_grad(true);
    }
    spec.groups = groups;
    spec.stride = stride;
    spec.pad = pad;
    return spec;
}

// Dense layer on (1,1,R,in) matrices: y = x W + b.
template <class T>
struct Dense {
    Tensor<T> w;  // (1,1,in,out)
    Tensor<T> b;  // (1,1,1,out)

    static Dense make(i64 in, i64 out, Rng& rng) {
        Dense d;
        d.w = Tensor<T>::zeros(Shape{1, 1, in, out});
        he_uniform(d.w, in, rng);
        d.w.set_requires_grad(true);
        d.b = Tensor<T>::zeros(Shape{1, 1, 1, out});
        d.b.set_requires_grad(true);
        return d;
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return row_bias(matmul(x, w), b); }
};

}  // namespace saam
