#include "saam/selftest.hpp"

#include <atomic>
#include <cmath>
#include <ostream>

#include "saam/gradcheck.hpp"
#include "saam/loss.hpp"
#include "saam/model.hpp"
#include "saam/resample.hpp"

namespace saam::selftest {

namespace {

std::atomic<bool> g_fault{false};

// Forward identity whose backward multiplies the gradient by `factor`; the
// fault-injection hook uses factor != 1 to make a conv backward wrong.
template <class T>
Tensor<T> grad_scale(const Tensor<T>& x, T factor) {
    Tensor<T> out(x.shape());
    out.data() = x.data();
    if (tape_active<T>({&x})) {
        auto* on = out.node().get();
        auto xn = x.node();
        attach_tape(out, {x}, [on, xn, factor]() {
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* dx = xn->grad.data();
            for (std::size_t i = 0; i < on->value.size(); ++i) dx[i] += g[i] * factor;
        });
    }
    return out;
}

template <class T>
Tensor<T> random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(s);
    for (auto& v : t.data()) v = T(rng.uniform(lo, hi));
    return t;
}

CheckResult error_check(const std::string& name, double measured, double bound) {
    return {name, measured < bound, measured, bound};
}

using D = Tensor<double>;
using GradFn = std::function<D(const D&)>;

void grad_case(std::vector<CheckResult>& out, const std::string& name, const GradFn& f, D x,
               double bound = 1e-4) {
    const double err = finite_diff_check(f, std::move(x), 1e-3);
    out.push_back(error_check("grad/" + name, err, bound));
}

}  // namespace

void set_fault_injection(bool on) { g_fault.store(on); }

// ---------------------------------------------------------------------------
// Gradient checks: every differentiable op, then composite paths up to the
// full model with the Eq. 3 objective.
// ---------------------------------------------------------------------------

std::vector<CheckResult> run_gradient_checks(std::uint64_t seed) {
    std::vector<CheckResult> out;
    Rng rng(seed);
    const double fault_factor = g_fault.load() ? 1.05 : 1.0;

    grad_case(out, "silu",
              [](const D& x) { return mean_all(silu(x)); },
              random_tensor<double>({1, 2, 3, 4}, rng));
    grad_case(out, "sigmoid",
              [](const D& x) { return mean_all(sigmoid(x)); },
              random_tensor<double>({1, 2, 3, 4}, rng));
    {
        // Keep values away from the kink at 0.
        D x = random_tensor<double>({1, 2, 3, 4}, rng, 0.2, 1.0);
        for (std::size_t i = 0; i < x.data().size(); i += 2) x.data()[i] *= -1.0;
        grad_case(out, "relu", [](const D& x) { return mean_all(relu(x)); }, std::move(x));
    }
    {
        D w = random_tensor<double>({1, 1, 3, 5}, rng);
        grad_case(out, "softmax_rows",
                  [w](const D& x) { return mean_all(mul(softmax_rows(x), w)); },
                  random_tensor<double>({1, 1, 3, 5}, rng));
    }
    {
        D b = random_tensor<double>({1, 1, 4, 6}, rng);
        grad_case(out, "matmul_lhs",
                  [b](const D& x) { return mean_all(matmul(x, b)); },
                  random_tensor<double>({1, 1, 3, 4}, rng));
        D a = random_tensor<double>({1, 1, 3, 4}, rng);
        grad_case(out, "matmul_rhs",
                  [a](const D& x) { return mean_all(matmul(a, x)); },
                  random_tensor<double>({1, 1, 4, 6}, rng));
        grad_case(out, "row_bias",
                  [b](const D& x) { return mean_all(row_bias(b, x)); },
                  random_tensor<double>({1, 1, 1, 6}, rng));
    }
    {
        D k = random_tensor<double>({3, 2, 3, 3}, rng);
        D bias = random_tensor<double>({1, 3, 1, 1}, rng);
        D w = random_tensor<double>({1, 3, 5, 6}, rng);
        grad_case(out, "conv3x3_input",
                  [k, bias, w, fault_factor](const D& x) {
                      D y = conv2d(grad_scale(x, fault_factor), k, bias, 1, 1, 1);
                      return mean_all(mul(y, w));
                  },
                  random_tensor<double>({1, 2, 5, 6}, rng));
        D x0 = random_tensor<double>({1, 2, 5, 6}, rng);
        grad_case(out, "conv3x3_kernel",
                  [x0, bias, w](const D& k) { return mean_all(mul(conv2d(x0, k, bias, 1, 1, 1), w)); },
                  std::move(k));
        D k2 = random_tensor<double>({3, 2, 3, 3}, rng);
        grad_case(out, "conv3x3_bias",
                  [x0, k2, w](const D& b) { return mean_all(mul(conv2d(x0, k2, b, 1, 1, 1), w)); },
                  std::move(bias));
    }
    {
        D k = random_tensor<double>({4, 1, 3, 3}, rng);
        grad_case(out, "conv_depthwise",
                  [k](const D& x) { return mean_all(conv2d(x, k, D{}, 4, 1, 1)); },
                  random_tensor<double>({2, 4, 5, 5}, rng));
    }
    {
        D k = random_tensor<double>({2, 4, 1, 1}, rng);
        grad_case(out, "conv_pointwise",
                  [k](const D& x) { return mean_all(conv2d(x, k, D{}, 1, 1, 0)); },
                  random_tensor<double>({1, 4, 4, 4}, rng));
    }
    {
        D k = random_tensor<double>({3, 2, 3, 3}, rng);
        grad_case(out, "conv_stride2",
                  [k](const D& x) { return mean_all(conv2d(x, k, D{}, 1, 2, 1)); },
                  random_tensor<double>({1, 2, 7, 6}, rng));
    }
    {
        D m = random_tensor<double>({2, 1, 4, 4}, rng);
        grad_case(out, "mul_gate_features",
                  [m](const D& x) { return mean_all(mul_gate(x, m)); },
                  random_tensor<double>({2, 3, 4, 4}, rng));
        D f = random_tensor<double>({2, 3, 4, 4}, rng);
        grad_case(out, "mul_gate_gate",
                  [f](const D& m) { return mean_all(mul_gate(f, m)); }, std::move(m));
    }
    grad_case(out, "simam",
              [](const D& x) { return mean_all(simam(x, SimamConfig{})); },
              random_tensor<double>({1, 3, 5, 4}, rng));
    {
        BatchNorm2d<double> bn = BatchNorm2d<double>::make(3);
        for (auto& v : bn.gamma.data()) v = rng.uniform(0.5, 1.5);
        grad_case(out, "batchnorm",
                  [bn](const D& x) mutable { return mean_all(bn.forward(x, true)); },
                  random_tensor<double>({2, 3, 4, 4}, rng));
    }
    {
        D w = random_tensor<double>({1, 1, 2, 3}, rng);
        grad_case(out, "variance_map",
                  [w](const D& x) { return mean_all(mul(variance_map(x, 2), w)); },
                  random_tensor<double>({1, 1, 4, 6}, rng));
    }
    grad_case(out, "nn_upsample",
              [](const D& x) { return mean_all(mul_scalar(nn_upsample(x, 7, 9), 0.7)); },
              random_tensor<double>({1, 2, 3, 5}, rng));
    {
        Rng prm(seed + 1);
        auto up = UpsamplerParams<double>::make(6, 4, 8, SimamConfig{}, prm);
        grad_case(out, "upsampler",
                  [up](const D& x) { return mean_all(upsample(x, ScalePair(1.7, 2.3), up)); },
                  random_tensor<double>({1, 6, 6, 6}, rng));
        D feat = random_tensor<double>({1, 6, 5, 5}, rng);
        grad_case(out, "reconstruct",
                  [up, feat](const D& k) {
                      auto spec = up.recon;
                      spec.kernel = k;
                      return mean_all(conv2d(feat, spec));
                  },
                  up.recon.kernel.clone());
    }
    {
        GvConfig gv;
        gv.window = 4;
        D hr = random_tensor<double>({1, 3, 12, 12}, rng, 0.0, 1.0);
        grad_case(out, "gv_loss",
                  [hr, gv](const D& sr) { return gv_loss(hr, sr, gv); },
                  random_tensor<double>({1, 3, 12, 12}, rng, 0.0, 1.0));
        grad_case(out, "total_loss",
                  [hr, gv](const D& sr) { return total_loss(hr, sr, gv); },
                  random_tensor<double>({1, 3, 12, 12}, rng, 0.0, 1.0));
    }
    {
        // Full SAAM block + Eq. 3 on a 1x8x6x6 input (projected to RGB).
        Rng prm(seed + 2);
        auto block = SaamBlockParams<double>::make(8, 4, 3, 8, 4, true, 1, NormKind::simam,
                                                   SimamConfig{}, prm);
        // Give the zero-initialized bank real values so gradients flow.
        for (auto& v : block.bank.basis.data()) v = prm.uniform(-0.3, 0.3);
        D proj = random_tensor<double>({3, 8, 1, 1}, prm);
        D target = random_tensor<double>({1, 3, 6, 6}, prm, 0.0, 1.0);
        GvConfig gv;
        gv.window = 3;
        grad_case(out, "saam_block_eq3",
                  [block, proj, target, gv](const D& x) mutable {
                      D y = saam_forward(x, ScalePair(2.0, 3.0), block);
                      D rgb = conv2d(y, proj, D{}, 1, 1, 0);
                      return total_loss(target, rgb, gv);
                  },
                  random_tensor<double>({1, 8, 6, 6}, rng));
    }
    {
        // Full model + Eq. 3 pipeline on a 1x3x8x8 input at scale (2,2).
        ModelConfig cfg;
        cfg.channels = 8;
        cfg.d_u = 8;
        cfg.d_r = 8;
        cfg.d_b = 4;
        cfg.experts = 4;
        cfg.seed = seed + 3;
        Model<double> model = build_model<double>(cfg);
        // Move the safe-init bank off zero so every path carries gradient.
        Rng prm(seed + 4);
        for (auto& sb : model.saam_blocks)
            for (auto& v : sb.bank.basis.data()) v = prm.uniform(-0.3, 0.3);
        D target = random_tensor<double>({1, 3, 16, 16}, prm, 0.0, 1.0);
        GvConfig gv;
        gv.window = 4;
        grad_case(out, "full_model_eq3",
                  [model, target, gv](const D& x) mutable {
                      D sr = forward(model, x, ScalePair(2.0));
                      return total_loss(target, sr, gv);
                  },
                  random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Randomized convolution oracle comparison (includes depthwise, pointwise,
// strided and padded cases).
// ---------------------------------------------------------------------------

namespace {

template <class T>
double conv_oracle_sweep(Rng& rng, int cases) {
    double worst = 0;
    for (int i = 0; i < cases; ++i) {
        const i64 N = 1 + rng.uniform_int(2);
        const i64 C = 1 + rng.uniform_int(4);
        const i64 H = 3 + rng.uniform_int(7);  // up to 9
        const i64 W = 3 + rng.uniform_int(7);
        const int k = (i % 2 == 0) ? 3 : 1;
        const bool depthwise = (i % 3 == 0);
        const int groups = depthwise ? int(C) : 1;
        const i64 Cout = depthwise ? C : 1 + rng.uniform_int(4);
        const int stride = (i % 5 == 0) ? 2 : 1;
        const int pad = (k == 3 && i % 4 != 0) ? 1 : 0;
        if (H + 2 * pad < k || W + 2 * pad < k) continue;
        Tensor<T> x = random_tensor<T>({N, C, H, W}, rng);
        Tensor<T> kernel = random_tensor<T>({Cout, depthwise ? 1 : C, k, k}, rng);
        Tensor<T> bias = random_tensor<T>({1, Cout, 1, 1}, rng);
        Tensor<T> got = conv2d(x, kernel, bias, groups, stride, pad);
        Tensor<T> want = reference_conv2d(x, kernel, bias, groups, stride, pad);
        worst = std::max(worst, max_abs_diff(got, want));
    }
    return worst;
}

}  // namespace

std::vector<CheckResult> run_conv_oracle(std::uint64_t seed, int float_cases, int double_cases) {
    std::vector<CheckResult> out;
    Rng rng(seed);
    out.push_back(error_check("conv_oracle/float_" + std::to_string(float_cases) + "cases",
                              conv_oracle_sweep<float>(rng, float_cases), 1e-5));
    out.push_back(error_check("conv_oracle/double_" + std::to_string(double_cases) + "cases",
                              conv_oracle_sweep<double>(rng, double_cases), 1e-10));
    return out;
}

// ---------------------------------------------------------------------------
// Structural invariants: partition of unity, Eq. 1 gate identities, plug-in
// neutrality, softmax and routing contracts, the SimAM floor.
// ---------------------------------------------------------------------------

std::vector<CheckResult> run_invariant_checks(std::uint64_t seed) {
    std::vector<CheckResult> out;
    Rng rng(seed);

    {
        // Upsampler partition of unity: identity depthwise feature conv,
        // constant input, any scale.
        Rng prm(seed + 1);
        auto up = UpsamplerParams<float>::make(5, 4, 16, SimamConfig{}, prm);
        std::fill(up.feat_dw.kernel.data().begin(), up.feat_dw.kernel.data().end(), 0.0f);
        for (i64 c = 0; c < 5; ++c) up.feat_dw.kernel.at(c, 0, 1, 1) = 1.0f;
        std::fill(up.feat_dw.bias.data().begin(), up.feat_dw.bias.data().end(), 0.0f);
        double worst = 0;
        NoGradGuard ng;
        for (int i = 0; i < 20; ++i) {
            const double rv = 1.0 + 0.175 * i;  // spans [1, 4.325]
            const double rh = (i % 3 == 0) ? rv : 1.0 + 0.175 * ((i + 7) % 20);
            Tensor<float> x(Shape{1, 5, 6, 7}, 0.37f);
            Tensor<float> y = upsample(x, ScalePair(rv, rh), up);
            Tensor<float> feat = silu(simam(x, up.simam_cfg));
            const float expect = feat.data()[0];
            double dev = 0;
            for (float v : y.data()) dev = std::max(dev, std::abs(double(v) - double(expect)));
            worst = std::max(worst, dev);
        }
        out.push_back(error_check("invariant/upsampler_partition_of_unity", worst, 1e-5));
    }
    {
        double worst = 0;
        for (int i = 0; i < 20; ++i) {
            const double rv = 1.0 + 0.15 * i;
            const double rh = (i % 2 == 0) ? rv : 1.0 + 0.15 * ((i + 5) % 20);
            Tensor<float> img(Shape{1, 3, 9, 11}, 0.41f);
            for (auto dir : {ResampleDir::up, ResampleDir::down}) {
                Tensor<float> y = bicubic_resample(img, ScalePair(rv, rh), dir);
                for (float v : y.data()) worst = std::max(worst, std::abs(double(v) - 0.41));
            }
        }
        out.push_back(error_check("invariant/bicubic_partition_of_unity", worst, 1e-6));
    }
    {
        // Eq. 1 gate identities on random inputs and parameters.
        double worst0 = 0, worst1 = 0;
        NoGradGuard ng;
        for (int i = 0; i < 20; ++i) {
            Rng prm(seed + 100 + i);
            auto block = SaamBlockParams<float>::make(6, 4, 3, 8, 4, i % 2 == 0, 1,
                                                      NormKind::simam, SimamConfig{}, prm);
            auto& bank_kernels = block.bank.dense_layer ? block.bank.basis : block.bank.experts;
            for (auto& v : bank_kernels.data()) v = float(prm.uniform(-0.5, 0.5));
            for (auto& v : block.pointwise.bias.data()) v = float(prm.uniform(-0.5, 0.5));
            Tensor<float> x = random_tensor<float>({2, 6, 5, 7}, rng);
            const ScalePair scale(1.0 + prm.uniform(0.0, 3.5), 1.0 + prm.uniform(0.0, 3.5));
            Tensor<float> zero_gate(Shape{2, 1, 5, 7}, 0.0f);
            Tensor<float> one_gate(Shape{2, 1, 5, 7}, 1.0f);
            worst0 = std::max(worst0,
                              max_abs_diff(saam_forward_gated(x, scale, block, zero_gate), x));
            Tensor<float> adapted = scale_aware_conv(x, scale, block.bank, block.pointwise);
            worst1 = std::max(worst1, max_abs_diff(saam_forward_gated(x, scale, block, one_gate),
                                                   add(x, adapted)));
        }
        out.push_back(error_check("invariant/gate_identity_M0", worst0, 1e-6));
        out.push_back(error_check("invariant/gate_identity_M1", worst1, 1e-6));
    }
    {
        // Plug-in neutrality of the safe initialization.
        ModelConfig cfg;
        cfg.seed = seed + 5;
        Model<float> model = build_model<float>(cfg);
        double worst = 0;
        NoGradGuard ng;
        for (int i = 0; i < 10; ++i) {
            Tensor<float> x = random_tensor<float>({1, 3, 8 + (i % 3), 9 - (i % 2)}, rng, 0.0, 1.0);
            for (double r : {1.5, 2.0, 3.5}) {
                Tensor<float> with = forward(model, x, ScalePair(r));
                Tensor<float> without = forward(model, x, ScalePair(r), /*bypass_saam=*/true);
                worst = std::max(worst, max_abs_diff(with, without));
            }
        }
        out.push_back(error_check("invariant/plugin_neutrality_at_init", worst, 1e-6));
    }
    {
        double worst = 0;
        for (int i = 0; i < 50; ++i) {
            const i64 len = 1 + rng.uniform_int(12);
            std::vector<double> v(std::size_t(len));
            for (auto& x : v) x = rng.uniform(-30.0, 30.0);
            auto s = softmax(v);
            double sum = 0, shifted_dev = 0;
            for (double x : s) sum += x;
            auto s2 = softmax([&] {
                auto c = v;
                for (auto& x : c) x += 13.5;
                return c;
            }());
            for (std::size_t j = 0; j < s.size(); ++j)
                shifted_dev = std::max(shifted_dev, std::abs(s[j] - s2[j]));
            worst = std::max({worst, std::abs(sum - 1.0), shifted_dev});
        }
        out.push_back(error_check("invariant/softmax_sum_and_shift", worst, 1e-6));
    }
    {
        // SimAM floor: weights never drop below sigmoid(0.5).
        double min_weight = 1.0;
        for (int i = 0; i < 10; ++i) {
            Tensor<float> x = random_tensor<float>({1, 4, 6, 5}, rng, -2.0, 2.0);
            Tensor<float> w = simam_weights(x);
            for (float v : w.data()) min_weight = std::min(min_weight, double(v));
        }
        out.push_back({"invariant/simam_weight_floor", min_weight >= 0.62245, min_weight,
                       0.62245});
    }
    {
        // Routing stays on the simplex across the whole guard range.
        Rng prm(seed + 6);
        auto bank = ExpertBank<float>::make(6, 16, 3, 16, 8, true, prm);
        double worst = 0;
        bool nonneg = true;
        NoGradGuard ng;
        for (double r = 1.0; r <= 4.501; r += 0.1) {
            Tensor<float> w = routing_weights(ScalePair(r, std::min(4.5, r + 0.3)), bank);
            double sum = 0;
            for (float v : w.data()) {
                nonneg = nonneg && v >= 0.0f;
                sum += double(v);
            }
            worst = std::max(worst, std::abs(sum - 1.0));
        }
        out.push_back({"invariant/routing_simplex", nonneg && worst < 1e-6, worst, 1e-6});
    }
    {
        // blend_experts is linear in the weights.
        Rng prm(seed + 7);
        double worst = 0;
        NoGradGuard ng;
        for (int i = 0; i < 10; ++i) {
            auto bank = ExpertBank<float>::make(4, 8, 3, 8, 4, i % 2 == 0, prm);
            auto& kernels = bank.dense_layer ? bank.basis : bank.experts;
            for (auto& v : kernels.data()) v = float(prm.uniform(-1.0, 1.0));
            Tensor<float> w1 = random_tensor<float>({1, 1, 1, 8}, rng);
            Tensor<float> w2 = random_tensor<float>({1, 1, 1, 8}, rng);
            Tensor<float> lhs = add(blend_experts(bank, w1), blend_experts(bank, w2));
            Tensor<float> rhs = blend_experts(bank, add(w1, w2));
            worst = std::max(worst, max_abs_diff(lhs, rhs));
        }
        out.push_back(error_check("invariant/blend_linearity", worst, 1e-6));
    }
    {
        // SiLU is monotone for t >= -1.2785.
        bool monotone = true;
        double prev = -1e30;
        for (double t = -1.2785; t <= 6.0; t += 0.004) {
            const double y = t * sigmoid_scalar(t);
            monotone = monotone && y >= prev - 1e-12;
            prev = y;
        }
        out.push_back({"invariant/silu_monotone_above_minus_1.2785", monotone,
                       monotone ? 1.0 : 0.0, 1.0});
    }
    {
        // Output dims follow the floor rule.
        Rng prm(seed + 8);
        auto up = UpsamplerParams<float>::make(4, 4, 8, SimamConfig{}, prm);
        bool ok = true;
        NoGradGuard ng;
        for (int i = 0; i < 100; ++i) {
            const i64 H = 4 + rng.uniform_int(8), W = 4 + rng.uniform_int(8);
            const double rv = rng.uniform(1.0, 4.5), rh = rng.uniform(1.0, 4.5);
            Tensor<float> x = random_tensor<float>({1, 4, H, W}, rng);
            Tensor<float> y = upsample(x, ScalePair(rv, rh), up);
            ok = ok && y.shape().h == i64(std::floor(H * rv)) &&
                 y.shape().w == i64(std::floor(W * rh));
        }
        out.push_back({"invariant/upsample_floor_dims", ok, ok ? 1.0 : 0.0, 1.0});
    }
    return out;
}

std::vector<CheckResult> run_all(std::uint64_t seed) {
    auto out = run_gradient_checks(seed);
    auto conv = run_conv_oracle(seed + 1000);
    out.insert(out.end(), conv.begin(), conv.end());
    auto inv = run_invariant_checks(seed + 2000);
    out.insert(out.end(), inv.begin(), inv.end());
    return out;
}

int report(const std::vector<CheckResult>& results, std::ostream& os) {
    int failures = 0;
    for (const auto& r : results) {
        os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  measured=" << r.measured
           << " bound=" << r.bound << "\n";
        if (!r.pass) ++failures;
    }
    os << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) FAILED")
       << " (" << results.size() << " total)\n";
    return failures == 0 ? 0 : 1;
}

}  // namespace saam::selftest
