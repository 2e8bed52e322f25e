#pragma once

#include <functional>

#include "saam/ops.hpp"

namespace saam {

// Central-difference verification of reverse-mode gradients. Run in double
// precision; single-precision differences drown in rounding noise.
//
// Returns max over coordinates of |analytic - numeric| / max(1e-8,
// |analytic| + |numeric|).
inline double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                Tensor<double> x, double eps = 1e-3) {
    if (eps < 1e-5 || eps > 1e-2)
        throw ValueError("finite_diff_check: eps must be in [1e-5, 1e-2]");

    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<double> loss = f(x);
    if (loss.numel() != 1)
        throw ValueError("finite_diff_check: f must return a scalar, got shape " +
                         loss.shape().str());
    loss.backward();
    std::vector<double> analytic = x.grad();

    double worst = 0;
    auto& xv = x.data();
    NoGradGuard ng;
    for (i64 i = 0; i < x.numel(); ++i) {
        const double keep = xv[i];
        xv[i] = keep + eps;
        const double fp = f(x).data()[0];
        xv[i] = keep - eps;
        const double fm = f(x).data()[0];
        xv[i] = keep;
        const double numeric = (fp - fm) / (2 * eps);
        const double a = analytic[std::size_t(i)];
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace saam
