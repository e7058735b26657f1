#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rmm/degradation.hpp"
#include "rmm/rng.hpp"

using namespace rmm;
using namespace rmm::degradation;

namespace {

Tensor random_image(int c, int h, int w, Rng& rng) {
    Tensor t({c, h, w});
    for (auto& v : t.data) v = rng.uniform(0.0, 1.0);
    return t;
}

Tensor smooth_image(int size, Rng& rng) {
    Tensor base = random_image(3, 4, 4, rng);
    Tensor up = bicubic_resize(base, size, size);
    for (auto& v : up.data) v = std::clamp(v, 0.0, 1.0);
    return up;
}

double mse(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return acc / static_cast<double>(a.numel());
}

double kernel_sum(const Tensor& k) {
    double s = 0.0;
    for (double v : k.data) s += v;
    return s;
}

double cubic(double t) {
    t = std::fabs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

}  // namespace

TEST_CASE("gaussian kernel: unit mass, symmetry, delta limit, formula oracle") {
    for (double sigma : {0.4, 1.0, 2.5, 5.0}) {
        Tensor k = gaussian_kernel(sigma);
        CHECK(std::fabs(kernel_sum(k) - 1.0) <= 1e-12);
        const int n = k.shape[0];
        CHECK(n == 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                CHECK(k.data[static_cast<size_t>(y) * n + x] ==
                      doctest::Approx(k.data[static_cast<size_t>(n - 1 - y) * n + (n - 1 - x)]).epsilon(1e-12));
    }
    CHECK(gaussian_kernel(0.1).data[4] > 0.99);  // 3x3 kernel, center dominates
    CHECK_THROWS_AS(gaussian_kernel(0.0), Error);
    CHECK_THROWS_AS(gaussian_kernel(-1.0), Error);

    // direct e^{-(x^2+y^2)/2s^2} evaluation
    Tensor k = gaussian_kernel(1.0);
    const int n = k.shape[0], half = n / 2;
    double norm = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) norm += std::exp(-((x - half) * (x - half) + (y - half) * (y - half)) / 2.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double expected =
                std::exp(-((x - half) * (x - half) + (y - half) * (y - half)) / 2.0) / norm;
            CHECK(k.data[static_cast<size_t>(y) * n + x] == doctest::Approx(expected).epsilon(1e-12));
        }
}

TEST_CASE("motion kernel: delta, axis-aligned taps, diagonal mass") {
    Tensor d = motion_kernel(1, 0.7);
    CHECK(d.shape[0] == 1);
    CHECK(d.data[0] == doctest::Approx(1.0));

    Tensor h = motion_kernel(5, 0.0);
    REQUIRE(h.shape[0] == 5);
    for (int x = 0; x < 5; ++x) CHECK(h.data[static_cast<size_t>(2) * 5 + x] == doctest::Approx(0.2).epsilon(1e-12));
    for (int y = 0; y < 5; ++y)
        if (y != 2)
            for (int x = 0; x < 5; ++x) CHECK(h.data[static_cast<size_t>(y) * 5 + x] == 0.0);

    const double quarter = 3.14159265358979323846 / 4.0;
    Tensor diag = motion_kernel(5, quarter);
    CHECK(std::fabs(kernel_sum(diag) - 1.0) <= 1e-12);
    const int n = diag.shape[0];
    double off_band = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (std::abs(x - y) > 1) off_band += diag.data[static_cast<size_t>(y) * n + x];
    CHECK(off_band == doctest::Approx(0.0));

    // independent rasterization: splat 5 unit samples bilinearly and compare
    Tensor ref({n, n});
    const double c = (n - 1) / 2.0;
    for (int t = 0; t < 5; ++t) {
        const double px = c + (t - 2.0) * std::cos(quarter);
        const double py = c + (t - 2.0) * std::sin(quarter);
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        ref.data[static_cast<size_t>(y0) * n + x0] += (1 - fx) * (1 - fy);
        if (x0 + 1 < n) ref.data[static_cast<size_t>(y0) * n + x0 + 1] += fx * (1 - fy);
        if (y0 + 1 < n) ref.data[static_cast<size_t>(y0 + 1) * n + x0] += (1 - fx) * fy;
        if (x0 + 1 < n && y0 + 1 < n) ref.data[static_cast<size_t>(y0 + 1) * n + x0 + 1] += fx * fy;
    }
    for (auto& v : ref.data) v /= 5.0;
    for (size_t i = 0; i < ref.data.size(); ++i)
        CHECK(diag.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
}

TEST_CASE("bicubic: constants exact, linear ramp preserved in the interior") {
    Tensor c = Tensor::full({3, 12, 12}, 0.61803);
    for (auto [h, w] : {std::pair{5, 7}, {24, 24}, {3, 17}}) {
        Tensor r = bicubic_resize(c, h, w);
        for (double v : r.data) CHECK(v == doctest::Approx(0.61803).epsilon(1e-14));
    }

    Tensor ramp({1, 8, 32});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 32; ++x) ramp.at3(0, y, x) = x / 31.0;
    Tensor down = bicubic_resize(ramp, 8, 16);
    Tensor up = bicubic_resize(down, 8, 32);
    // interior: outside the reach of edge clamping (4 coarse taps -> 8 pixels)
    for (int x = 8; x < 24; ++x) CHECK(up.at3(0, 4, x) == doctest::Approx(ramp.at3(0, 4, x)).epsilon(1e-6));

    CHECK_THROWS_AS(bicubic_resize(c, 0, 4), Error);
}

TEST_CASE("bicubic matches a direct 2D kernel-sum oracle") {
    Rng rng(9);
    Tensor img = random_image(2, 16, 16, rng);
    for (auto [oh, ow] : {std::pair{8, 8}, {23, 9}, {16, 16}, {4, 31}}) {
        Tensor out = bicubic_resize(img, oh, ow);
        const double sy = static_cast<double>(oh) / 16, sx = static_cast<double>(ow) / 16;
        const double ky = std::min(sy, 1.0), kx = std::min(sx, 1.0);
        const double ry = 2.0 / ky, rx = 2.0 / kx;
        for (int ch = 0; ch < 2; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const double cy = (y + 0.5) / sy - 0.5, cx = (x + 0.5) / sx - 0.5;
                    double acc = 0.0, wsum = 0.0;
                    for (int iy = static_cast<int>(std::floor(cy - ry)); iy <= static_cast<int>(std::ceil(cy + ry)); ++iy)
                        for (int ix = static_cast<int>(std::floor(cx - rx)); ix <= static_cast<int>(std::ceil(cx + rx)); ++ix) {
                            const double w = cubic((iy - cy) * ky) * cubic((ix - cx) * kx);
                            if (w == 0.0) continue;
                            acc += w * img.at3(ch, std::clamp(iy, 0, 15), std::clamp(ix, 0, 15));
                            wsum += w;
                        }
                    CHECK(out.at3(ch, y, x) == doctest::Approx(acc / wsum).epsilon(1e-9));
                }
    }
}

TEST_CASE("gaussian noise: identity at zero, correct scale, deterministic") {
    Rng rng(3);
    Tensor img = random_image(1, 8, 8, rng);
    Rng r0(10);
    Tensor same = add_gaussian_noise(img, 0.0, r0);
    CHECK(same.data == img.data);

    Tensor gray = Tensor::full({1, 1000, 1000}, 0.5);
    Rng r1(11);
    Tensor noisy = add_gaussian_noise(gray, 15.0, r1);
    double var = 0.0;
    for (size_t i = 0; i < noisy.data.size(); ++i) {
        const double d = noisy.data[i] - 0.5;
        var += d * d;
    }
    const double std_hat = std::sqrt(var / static_cast<double>(noisy.numel()));
    CHECK(std_hat == doctest::Approx(15.0 / 255.0).epsilon(0.02));

    Rng ra(12), rb(12);
    Tensor na = add_gaussian_noise(img, 7.0, ra);
    Tensor nb = add_gaussian_noise(img, 7.0, rb);
    CHECK(na.data == nb.data);
}

TEST_CASE("8x8 DCT of a constant block has only the DC coefficient") {
    double block[64], coef[64];
    for (auto& v : block) v = 3.25;
    dct8x8(block, coef);
    CHECK(coef[0] == doctest::Approx(8.0 * 3.25).epsilon(1e-12));
    for (int i = 1; i < 64; ++i) CHECK(std::fabs(coef[i]) < 1e-12);

    double back[64];
    idct8x8(coef, back);
    for (int i = 0; i < 64; ++i) CHECK(back[i] == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("jpeg_like: q=100 on a flat image is exact within rounding") {
    Tensor img = Tensor::full({3, 16, 16}, 100.0 / 255.0);
    Tensor out = jpeg_like(img, 100);
    for (size_t i = 0; i < img.data.size(); ++i) CHECK(std::fabs(out.data[i] - img.data[i]) <= 1.0 / 255.0);
    CHECK_THROWS_AS(jpeg_like(img, 0), Error);
    CHECK_THROWS_AS(jpeg_like(img, 101), Error);
}

TEST_CASE("jpeg_like: quality 40 loses at least as much as quality 80 on 48/50 images") {
    Rng rng(21);
    int wins = 0;
    for (int t = 0; t < 50; ++t) {
        Tensor img = smooth_image(32, rng);
        const double m40 = mse(img, jpeg_like(img, 40));
        const double m80 = mse(img, jpeg_like(img, 80));
        if (m40 >= m80) ++wins;
    }
    CHECK(wins >= 48);
}

TEST_CASE("quant table scaling follows the 5000/q and 200-2q law") {
    CHECK(jpeg_scaled_quant(16, 50) == std::clamp((16 * 100 + 50) / 100, 1, 255));
    CHECK(jpeg_scaled_quant(16, 100) == 1);
    CHECK(jpeg_scaled_quant(61, 40) == std::clamp((61 * 125 + 50) / 100, 1, 255));
    CHECK(jpeg_scaled_quant(61, 80) == std::clamp((61 * 40 + 50) / 100, 1, 255));
}

TEST_CASE("degrade: pass-through config is the identity") {
    Rng rng(31);
    Tensor img = random_image(3, 16, 16, rng);
    DegradationConfig cfg;
    cfg.scale_r = 1;
    Tensor out = degrade(img, cfg);
    CHECK(out.shape == img.shape);
    for (size_t i = 0; i < img.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
}

TEST_CASE("degrade: deterministic for a fixed config, output dims follow r") {
    Rng rng(33);
    Tensor img = random_image(3, 64, 64, rng);
    Rng sampler(5);
    DegradationConfig cfg = sample_config(sampler, DegradationRanges{});
    cfg.scale_r = 4;
    Tensor a = degrade(img, cfg);
    Tensor b = degrade(img, cfg);
    CHECK(a.data == b.data);
    CHECK(a.shape == std::vector<int>{3, 16, 16});

    for (int r : {2, 4, 8}) {
        cfg.scale_r = r;
        CHECK(degrade(img, cfg).shape == std::vector<int>{3, 64 / r, 64 / r});
    }
}

TEST_CASE("active noise strictly hurts PSNR vs the downsample-only reference") {
    Rng rng(37);
    Tensor img = smooth_image(64, rng);
    DegradationConfig clean;
    clean.scale_r = 4;
    DegradationConfig noisy = clean;
    noisy.noise_on = true;
    noisy.noise_sigma = 15.0;
    noisy.seed = 99;
    Tensor ref = degrade(img, clean);
    Tensor lq = degrade(img, noisy);
    CHECK(lq.shape == ref.shape);
    CHECK(mse(ref, lq) > 0.0);

    DegradationConfig full = noisy;
    full.blur_on = true;
    full.blur_kind = BlurKind::Gaussian;
    full.gaussian_sigma = 2.0;
    full.jpeg_on = true;
    full.jpeg_quality = 40;
    Tensor worst = degrade(img, full);
    CHECK(mse(ref, worst) > mse(ref, lq) * 0.5);  // compound degradation is at least comparable
}

TEST_CASE("sampled configs stay inside the declared ranges") {
    Rng rng(41);
    DegradationRanges ranges;
    for (int t = 0; t < 2000; ++t) {
        DegradationConfig cfg = sample_config(rng, ranges);
        if (cfg.blur_on) {
            CHECK(cfg.gaussian_sigma >= 1.0);
            CHECK(cfg.gaussian_sigma <= 5.0);
            CHECK(cfg.motion_length >= 3);
            CHECK(cfg.motion_length <= 11);
        }
        CHECK(cfg.scale_r >= 2);
        CHECK(cfg.scale_r <= 12);
        CHECK(cfg.noise_sigma >= 1.0);
        CHECK(cfg.noise_sigma <= 15.0);
        CHECK(cfg.jpeg_quality >= 40);
        CHECK(cfg.jpeg_quality <= 80);
    }
}
