#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "saam/tensor.hpp"

namespace saam::selftest {

struct CheckResult {
    std::string name;
    bool pass = false;
    double measured = 0;  // observed error or value
    double bound = 0;     // threshold compared against
};

// Brute-force 7-deep nested-loop convolution. This is the reference every
// conv path is judged against; it stays loop-per-output-cell and must not
// share code with the production implementation.
template <class T>
Tensor<T> reference_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                           int groups, int stride, int pad) {
    const Shape xs = x.shape(), ks = kernel.shape();
    const i64 N = xs.n, Cin = xs.c, H = xs.h, W = xs.w;
    const i64 Cout = ks.n, icpg = ks.c, k = ks.h;
    const i64 ocpg = Cout / groups;
    (void)Cin;
    const i64 outH = (H + 2 * pad - k) / stride + 1;
    const i64 outW = (W + 2 * pad - k) / stride + 1;
    Tensor<T> out(Shape{N, Cout, outH, outW});
    for (i64 n = 0; n < N; ++n)
        for (i64 oc = 0; oc < Cout; ++oc)
            for (i64 oy = 0; oy < outH; ++oy)
                for (i64 ox = 0; ox < outW; ++ox) {
                    T acc = bias.defined() ? bias.data()[std::size_t(oc)] : T(0);
                    const i64 g = oc / ocpg;
                    for (i64 icg = 0; icg < icpg; ++icg)
                        for (i64 ky = 0; ky < k; ++ky)
                            for (i64 kx = 0; kx < k; ++kx) {
                                const i64 iy = oy * stride - pad + ky;
                                const i64 ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += kernel.at(oc, icg, ky, kx) * x.at(n, g * icpg + icg, iy, ix);
                            }
                    out.at(n, oc, oy, ox) = acc;
                }
    return out;
}

// Deliberately corrupts one conv backward path inside the gradient checks so
// harness sensitivity itself is testable.
void set_fault_injection(bool on);

std::vector<CheckResult> run_gradient_checks(std::uint64_t seed = 7);
std::vector<CheckResult> run_conv_oracle(std::uint64_t seed = 11, int float_cases = 100,
                                         int double_cases = 30);
std::vector<CheckResult> run_invariant_checks(std::uint64_t seed = 13);
std::vector<CheckResult> run_all(std::uint64_t seed = 7);

// One PASS/FAIL line per check with the measured error; returns 0 iff all
// pass.
int report(const std::vector<CheckResult>& results, std::ostream& os);

}  // namespace saam::selftest
