#include "rmm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

namespace rmm::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr double kMsExponents[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

const std::vector<double>& window_weights() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kWindow * kWindow);
        const int half = kWindow / 2;
        double sum = 0.0;
        for (int y = 0; y < kWindow; ++y)
            for (int x = 0; x < kWindow; ++x) {
                const double dy = y - half, dx = x - half;
                v[static_cast<size_t>(y) * kWindow + x] =
                    std::exp(-(dx * dx + dy * dy) / (2.0 * kWindowSigma * kWindowSigma));
                sum += v[static_cast<size_t>(y) * kWindow + x];
            }
        for (auto& e : v) e /= sum;
        return v;
    }();
    return w;
}

struct SsimMoments {
    double luminance = 0.0;   // mean of the luminance term over windows
    double contrast = 0.0;    // mean of the contrast-structure term
    double combined = 0.0;    // mean of the full per-window product
    int64_t windows = 0;
};

SsimMoments ssim_moments(const Tensor& a, const Tensor& b, double peak) {
    require(a.shape == b.shape, ErrorCode::Contract, "ssim: shape mismatch");
    require(a.rank() == 3, ErrorCode::Contract, "ssim: need [C,H,W]");
    const int c = a.shape[0], h = a.shape[1], w = a.shape[2];
    require(h >= kWindow && w >= kWindow, ErrorCode::Contract, "ssim: image ", h, "x", w,
            " smaller than the ", kWindow, "x", kWindow, " window");
    const auto& win = window_weights();
    const double c1 = (kK1 * peak) * (kK1 * peak);
    const double c2 = (kK2 * peak) * (kK2 * peak);

    SsimMoments m;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y + kWindow <= h; ++y)
            for (int x = 0; x + kWindow <= w; ++x) {
                double mx = 0.0, my = 0.0, xx = 0.0, yy = 0.0, xy = 0.0;
                for (int wy = 0; wy < kWindow; ++wy)
                    for (int wx = 0; wx < kWindow; ++wx) {
                        const double wt = win[static_cast<size_t>(wy) * kWindow + wx];
                        const double va = a.at3(ch, y + wy, x + wx);
                        const double vb = b.at3(ch, y + wy, x + wx);
                        mx += wt * va;
                        my += wt * vb;
                        xx += wt * va * va;
                        yy += wt * vb * vb;
                        xy += wt * va * vb;
                    }
                const double sx = xx - mx * mx;
                const double sy = yy - my * my;
                const double sxy = xy - mx * my;
                const double lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                const double cs = (2.0 * sxy + c2) / (sx + sy + c2);
                m.luminance += lum;
                m.contrast += cs;
                m.combined += lum * cs;
                ++m.windows;
            }
    m.luminance /= static_cast<double>(m.windows);
    m.contrast /= static_cast<double>(m.windows);
    m.combined /= static_cast<double>(m.windows);
    return m;
}

Tensor downsample2(const Tensor& t) {
    const int c = t.shape[0], h = t.shape[1] / 2, w = t.shape[2] / 2;
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at3(ch, y, x) = 0.25 * (t.at3(ch, 2 * y, 2 * x) + t.at3(ch, 2 * y, 2 * x + 1) +
                                            t.at3(ch, 2 * y + 1, 2 * x) + t.at3(ch, 2 * y + 1, 2 * x + 1));
    return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
    require(a.shape == b.shape, ErrorCode::Contract, "psnr: shape mismatch");
    require(peak > 0.0, ErrorCode::Contract, "psnr: peak must be positive");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
    return ssim_moments(a, b, peak).combined;
}

double ms_ssim(const Tensor& a, const Tensor& b, double peak) {
    require(a.shape == b.shape, ErrorCode::Contract, "ms_ssim: shape mismatch");
    const int target_scales = 5;
    int usable = 0;
    {
        int side = std::min(a.shape[1], a.shape[2]);
        while (usable < target_scales && side >= kWindow) {
            ++usable;
            side /= 2;
        }
    }
    require(usable >= 1, ErrorCode::Contract, "ms_ssim: image too small for an 11x11 window");
    if (usable < target_scales)
        std::fprintf(stderr, "warning: ms_ssim falling back to %d scale(s) for %dx%d input\n", usable,
                     a.shape[1], a.shape[2]);
    if (usable == 1) return ssim(a, b, peak);

    double exp_sum = 0.0;
    for (int j = 0; j < usable; ++j) exp_sum += kMsExponents[j];

    Tensor xa = a, xb = b;
    double result = 1.0;
    for (int j = 0; j < usable; ++j) {
        const SsimMoments m = ssim_moments(xa, xb, peak);
        const double alpha = kMsExponents[j] / exp_sum;
        const double cs = std::max(m.contrast, 0.0);
        result *= std::pow(cs, alpha);
        if (j == usable - 1) result *= std::pow(std::max(m.luminance, 0.0), alpha);
        else {
            xa = downsample2(xa);
            xb = downsample2(xb);
        }
    }
    return result;
}

}  // namespace rmm::metrics
