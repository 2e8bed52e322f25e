#pragma once

#include <iomanip>
#include <string>
#include <vector>

#include "saam/loss.hpp"

namespace saam {

namespace detail {

// Luma plane in double. Accepts RGB or single-channel input.
template <class T>
std::vector<double> luma_plane(const Tensor<T>& img) {
    const Shape s = img.shape();
    if (s.n != 1)
        throw ShapeError("metrics: expected a single image, got batch " + s.str());
    std::vector<double> y(std::size_t(s.h * s.w));
    const T* p = img.data().data();
    if (s.c == 3) {
        const i64 hw = s.h * s.w;
        for (i64 i = 0; i < hw; ++i)
            y[std::size_t(i)] = kLumaR * p[i] + kLumaG * p[hw + i] + kLumaB * p[2 * hw + i];
    } else if (s.c == 1) {
        for (i64 i = 0; i < s.h * s.w; ++i) y[std::size_t(i)] = double(p[i]);
    } else {
        throw ShapeError("metrics: expected 1 or 3 channels, got " + s.str());
    }
    return y;
}

}  // namespace detail

// PSNR in dB on the luma channel after cropping `crop` border pixels.
// Identical images report the 100 dB sentinel so tables stay finite.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, int crop = 0) {
    require_same_shape(a.shape(), b.shape(), "psnr");
    const Shape s = a.shape();
    if (s.h <= 2 * crop || s.w <= 2 * crop)
        throw ShapeError("psnr: crop " + std::to_string(crop) + " leaves no pixels of " + s.str());
    auto ya = detail::luma_plane(a);
    auto yb = detail::luma_plane(b);
    double mse = 0;
    i64 count = 0;
    for (i64 y = crop; y < s.h - crop; ++y)
        for (i64 x = crop; x < s.w - crop; ++x) {
            const double d = ya[std::size_t(y * s.w + x)] - yb[std::size_t(y * s.w + x)];
            mse += d * d;
            ++count;
        }
    mse /= double(count);
    if (mse <= 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

// Mean local SSIM on the luma channel: 11x11 Gaussian window (sigma 1.5),
// C1=(0.01)^2, C2=(0.03)^2 on unit range, valid windows only.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "ssim");
    const Shape s = a.shape();
    constexpr int win = 11;
    constexpr double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    if (s.h < win || s.w < win)
        throw ShapeError("ssim: image " + s.str() + " smaller than the 11x11 window");

    double g[win];
    {
        double sum = 0;
        for (int i = 0; i < win; ++i) {
            const double d = i - (win - 1) / 2.0;
            g[i] = std::exp(-d * d / (2 * sigma * sigma));
            sum += g[i];
        }
        for (auto& v : g) v /= sum;
    }

    auto ya = detail::luma_plane(a);
    auto yb = detail::luma_plane(b);
    const i64 H = s.h, W = s.w;
    const i64 vh = H - win + 1, vw = W - win + 1;

    // Separable filtering of the five moment planes.
    auto filt = [&](const std::vector<double>& x, const std::vector<double>& y,
                    bool product) -> std::vector<double> {
        std::vector<double> rows(std::size_t(H * vw));
        for (i64 r = 0; r < H; ++r)
            for (i64 c = 0; c < vw; ++c) {
                double acc = 0;
                for (int k = 0; k < win; ++k) {
                    const double xv = x[std::size_t(r * W + c + k)];
                    acc += g[k] * (product ? xv * y[std::size_t(r * W + c + k)] : xv);
                }
                rows[std::size_t(r * vw + c)] = acc;
            }
        std::vector<double> out(std::size_t(vh * vw));
        for (i64 r = 0; r < vh; ++r)
            for (i64 c = 0; c < vw; ++c) {
                double acc = 0;
                for (int k = 0; k < win; ++k) acc += g[k] * rows[std::size_t((r + k) * vw + c)];
                out[std::size_t(r * vw + c)] = acc;
            }
        return out;
    };

    auto mu1 = filt(ya, ya, false);
    auto mu2 = filt(yb, yb, false);
    auto m11 = filt(ya, ya, true);
    auto m22 = filt(yb, yb, true);
    auto m12 = filt(ya, yb, true);

    double total = 0;
    for (std::size_t i = 0; i < mu1.size(); ++i) {
        const double u1 = mu1[i], u2 = mu2[i];
        const double s1 = m11[i] - u1 * u1;
        const double s2 = m22[i] - u2 * u2;
        const double s12 = m12[i] - u1 * u2;
        total += ((2 * u1 * u2 + c1) * (2 * s12 + c2)) /
                 ((u1 * u1 + u2 * u2 + c1) * (s1 + s2 + c2));
    }
    return total / double(mu1.size());
}

// ---------------------------------------------------------------------------
// Evaluation report: one row per image, serialized as a plain-text table and
// as CSV (columns: image, scale_v, scale_h, psnr_db, ssim).
// ---------------------------------------------------------------------------

struct QualityRow {
    std::string image;
    double scale_v = 0, scale_h = 0;
    double psnr_db = 0, ssim = 0;
};

struct QualityReport {
    std::vector<QualityRow> rows;
    int crop = 0;

    double mean_psnr() const {
        double s = 0;
        for (auto& r : rows) s += r.psnr_db;
        return rows.empty() ? 0 : s / double(rows.size());
    }
    double mean_ssim() const {
        double s = 0;
        for (auto& r : rows) s += r.ssim;
        return rows.empty() ? 0 : s / double(rows.size());
    }

    std::string to_text() const {
        std::ostringstream os;
        os << std::left << std::setw(28) << "image" << std::right << std::setw(9) << "scale_v"
           << std::setw(9) << "scale_h" << std::setw(11) << "psnr_db" << std::setw(9) << "ssim"
           << "\n";
        os << std::fixed;
        for (const auto& r : rows)
            os << std::left << std::setw(28) << r.image << std::right << std::setprecision(2)
               << std::setw(9) << r.scale_v << std::setw(9) << r.scale_h << std::setprecision(3)
               << std::setw(11) << r.psnr_db << std::setprecision(4) << std::setw(9) << r.ssim
               << "\n";
        if (!rows.empty())
            os << std::left << std::setw(28) << "mean" << std::right << std::setw(9) << ""
               << std::setw(9) << "" << std::setprecision(3) << std::setw(11) << mean_psnr()
               << std::setprecision(4) << std::setw(9) << mean_ssim() << "\n";
        return os.str();
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "image,scale_v,scale_h,psnr_db,ssim\n";
        os << std::fixed;
        for (const auto& r : rows)
            os << r.image << "," << std::setprecision(4) << r.scale_v << "," << r.scale_h << ","
               << std::setprecision(6) << r.psnr_db << "," << r.ssim << "\n";
        return os.str();
    }
};

}  // namespace saam
