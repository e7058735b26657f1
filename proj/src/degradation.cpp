#include "rmm/degradation.hpp"

#include <algorithm>
#include <cmath>

namespace rmm::degradation {

namespace {

constexpr double kPi = 3.14159265358979323846;

double catmull_rom(double t) {
    t = std::fabs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

// per-axis resampling weights, imresize-style: widened kernel when
// downscaling, weights renormalized, indices clamped at the borders
struct AxisPlan {
    std::vector<int> index;     // flattened taps x outputs
    std::vector<double> weight;
    int taps = 0;
};

AxisPlan plan_axis(int in, int out) {
    AxisPlan plan;
    const double scale = static_cast<double>(out) / in;
    const double kscale = std::min(scale, 1.0);
    const double radius = 2.0 / kscale;
    plan.taps = static_cast<int>(std::ceil(radius)) * 2 + 1;
    plan.index.resize(static_cast<size_t>(out) * plan.taps);
    plan.weight.resize(static_cast<size_t>(out) * plan.taps);
    for (int o = 0; o < out; ++o) {
        const double center = (o + 0.5) / scale - 0.5;
        const int left = static_cast<int>(std::floor(center - radius));
        double sum = 0.0;
        for (int t = 0; t < plan.taps; ++t) {
            const int src = left + t;
            const double w = catmull_rom((src - center) * kscale);
            plan.index[static_cast<size_t>(o) * plan.taps + t] = std::clamp(src, 0, in - 1);
            plan.weight[static_cast<size_t>(o) * plan.taps + t] = w;
            sum += w;
        }
        for (int t = 0; t < plan.taps; ++t) plan.weight[static_cast<size_t>(o) * plan.taps + t] /= sum;
    }
    return plan;
}

}  // namespace

Tensor gaussian_kernel(double sigma) {
    require(sigma > 0.0, ErrorCode::Contract, "gaussian_kernel: sigma must be positive, got ", sigma);
    const int half = static_cast<int>(std::ceil(3.0 * sigma));
    const int k = 2 * half + 1;
    Tensor kernel({k, k});
    double sum = 0.0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            const double dy = y - half, dx = x - half;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            kernel.data[static_cast<size_t>(y) * k + x] = v;
            sum += v;
        }
    for (auto& v : kernel.data) v /= sum;
    return kernel;
}

Tensor motion_kernel(int length, double angle) {
    require(length >= 1, ErrorCode::Contract, "motion_kernel: length must be >= 1");
    const int k = (length % 2 == 1) ? length : length + 1;
    Tensor kernel({k, k});
    const double cx = (k - 1) / 2.0, cy = (k - 1) / 2.0;
    const double dir_x = std::cos(angle), dir_y = std::sin(angle);
    for (int t = 0; t < length; ++t) {
        const double offset = t - (length - 1) / 2.0;
        const double px = cx + offset * dir_x;
        const double py = cy + offset * dir_y;
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        // bilinear splat of one unit sample
        const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int i = 0; i < 4; ++i)
            if (xs[i] >= 0 && xs[i] < k && ys[i] >= 0 && ys[i] < k && w[i] > 0.0)
                kernel.data[static_cast<size_t>(ys[i]) * k + xs[i]] += w[i];
    }
    double sum = 0.0;
    for (double v : kernel.data) sum += v;
    for (auto& v : kernel.data) v /= sum;
    return kernel;
}

Tensor convolve_reflect(const Tensor& image, const Tensor& kernel) {
    require(image.rank() == 3 && kernel.rank() == 2, ErrorCode::Contract,
            "convolve_reflect: need [C,H,W] image and [k,k] kernel");
    const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    const int kh = kernel.shape[0], kw = kernel.shape[1];
    const int hy = kh / 2, hx = kw / 2;
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i;
            if (i >= n) i = 2 * n - 2 - i;
        }
        return i;
    };
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const int sy = reflect(y + ky - hy, h);
                        const int sx = reflect(x + kx - hx, w);
                        acc += image.at3(ch, sy, sx) * kernel.data[static_cast<size_t>(ky) * kw + kx];
                    }
                out.at3(ch, y, x) = acc;
            }
    return out;
}

Tensor bicubic_resize(const Tensor& image, int out_h, int out_w) {
    require(image.rank() == 3, ErrorCode::Contract, "bicubic_resize: need [C,H,W]");
    require(out_h >= 1 && out_w >= 1, ErrorCode::Contract, "bicubic_resize: target must be positive, got ",
            out_h, "x", out_w);
    const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    const AxisPlan py = plan_axis(h, out_h);
    const AxisPlan px = plan_axis(w, out_w);

    // rows first (width), then columns
    Tensor tmp({c, h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (int t = 0; t < px.taps; ++t)
                    acc += image.at3(ch, y, px.index[static_cast<size_t>(x) * px.taps + t]) *
                           px.weight[static_cast<size_t>(x) * px.taps + t];
                tmp.at3(ch, y, x) = acc;
            }
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (int t = 0; t < py.taps; ++t)
                    acc += tmp.at3(ch, py.index[static_cast<size_t>(y) * py.taps + t], x) *
                           py.weight[static_cast<size_t>(y) * py.taps + t];
                out.at3(ch, y, x) = acc;
            }
    return out;
}

Tensor add_gaussian_noise(const Tensor& image, double sigma_255, Rng& rng) {
    require(sigma_255 >= 0.0, ErrorCode::Contract, "add_gaussian_noise: sigma must be >= 0");
    Tensor out = image;
    if (sigma_255 == 0.0) return out;
    const double s = sigma_255 / 255.0;
    for (auto& v : out.data) v = std::clamp(v + s * rng.gaussian(), 0.0, 1.0);
    return out;
}

// ITU-T T.81 Annex K.1 luminance table
const int kLuminanceQuant[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

int jpeg_scaled_quant(int base, int quality) {
    const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    return std::clamp((base * s + 50) / 100, 1, 255);
}

void dct8x8(const double in[64], double out[64]) {
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double acc = 0.0;
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    acc += in[y * 8 + x] * std::cos((2 * y + 1) * u * kPi / 16.0) *
                           std::cos((2 * x + 1) * v * kPi / 16.0);
            const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
            const double cv = v == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
            out[u * 8 + v] = 0.25 * cu * cv * acc;
        }
}

void idct8x8(const double in[64], double out[64]) {
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int u = 0; u < 8; ++u)
                for (int v = 0; v < 8; ++v) {
                    const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
                    const double cv = v == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
                    acc += cu * cv * in[u * 8 + v] * std::cos((2 * y + 1) * u * kPi / 16.0) *
                           std::cos((2 * x + 1) * v * kPi / 16.0);
                }
            out[y * 8 + x] = 0.25 * acc;
        }
}

Tensor jpeg_like(const Tensor& image, int quality) {
    require(image.rank() == 3 && (image.shape[0] == 1 || image.shape[0] == 3), ErrorCode::Contract,
            "jpeg_like: need 1 or 3 channels");
    require(quality >= 1 && quality <= 100, ErrorCode::Contract, "jpeg_like: quality ", quality,
            " outside [1,100]");
    const int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;

    // to YCbCr on the 0..255 scale (identity for grayscale), replicate-padded
    Tensor planes({c, ph, pw});
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
            const int sy = std::min(y, h - 1), sx = std::min(x, w - 1);
            if (c == 1) {
                planes.at3(0, y, x) = image.at3(0, sy, sx) * 255.0;
            } else {
                const double r = image.at3(0, sy, sx) * 255.0;
                const double g = image.at3(1, sy, sx) * 255.0;
                const double b = image.at3(2, sy, sx) * 255.0;
                planes.at3(0, y, x) = 0.299 * r + 0.587 * g + 0.114 * b;
                planes.at3(1, y, x) = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
                planes.at3(2, y, x) = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
            }
        }

    int quant[64];
    for (int i = 0; i < 64; ++i) quant[i] = jpeg_scaled_quant(kLuminanceQuant[i], quality);

    double block[64], coef[64];
    for (int ch = 0; ch < c; ++ch)
        for (int by = 0; by < ph; by += 8)
            for (int bx = 0; bx < pw; bx += 8) {
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) block[y * 8 + x] = planes.at3(ch, by + y, bx + x) - 128.0;
                dct8x8(block, coef);
                for (int i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / quant[i]) * quant[i];
                idct8x8(coef, block);
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) planes.at3(ch, by + y, bx + x) = block[y * 8 + x] + 128.0;
            }

    Tensor out({c, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (c == 1) {
                out.at3(0, y, x) = std::clamp(planes.at3(0, y, x) / 255.0, 0.0, 1.0);
            } else {
                const double yv = planes.at3(0, y, x);
                const double cb = planes.at3(1, y, x) - 128.0;
                const double cr = planes.at3(2, y, x) - 128.0;
                out.at3(0, y, x) = std::clamp((yv + 1.402 * cr) / 255.0, 0.0, 1.0);
                out.at3(1, y, x) = std::clamp((yv - 0.344136 * cb - 0.714136 * cr) / 255.0, 0.0, 1.0);
                out.at3(2, y, x) = std::clamp((yv + 1.772 * cb) / 255.0, 0.0, 1.0);
            }
        }
    return out;
}

DegradationConfig sample_config(Rng& rng, const DegradationRanges& ranges) {
    DegradationConfig cfg;
    cfg.blur_on = rng.bernoulli(0.5);
    if (cfg.blur_on) {
        cfg.blur_kind = rng.bernoulli(0.5) ? BlurKind::Gaussian : BlurKind::Motion;
        cfg.gaussian_sigma = rng.uniform(ranges.sigma_min, ranges.sigma_max);
        cfg.motion_length = static_cast<int>(rng.uniform_int(ranges.motion_min, ranges.motion_max));
        cfg.motion_angle = rng.uniform(0.0, kPi);
    }
    cfg.scale_r = static_cast<int>(rng.uniform_int(ranges.scale_min, ranges.scale_max));
    cfg.noise_on = rng.bernoulli(0.5);
    cfg.noise_sigma = rng.uniform(ranges.noise_min, ranges.noise_max);
    cfg.jpeg_on = rng.bernoulli(0.5);
    cfg.jpeg_quality = static_cast<int>(rng.uniform_int(ranges.jpeg_min, ranges.jpeg_max));
    cfg.seed = rng.next_u64();
    return cfg;
}

Tensor degrade(const Tensor& image, const DegradationConfig& config) {
    require(image.rank() == 3, ErrorCode::Contract, "degrade: need [C,H,W]");
    require(config.scale_r >= 1, ErrorCode::Contract, "degrade: scale_r must be >= 1");
    Tensor x = image;
    if (config.blur_on && config.blur_kind != BlurKind::None) {
        const Tensor kernel = config.blur_kind == BlurKind::Gaussian
                                  ? gaussian_kernel(config.gaussian_sigma)
                                  : motion_kernel(config.motion_length, config.motion_angle);
        x = convolve_reflect(x, kernel);
    }
    const int oh = std::max(1, static_cast<int>(std::lround(static_cast<double>(image.shape[1]) / config.scale_r)));
    const int ow = std::max(1, static_cast<int>(std::lround(static_cast<double>(image.shape[2]) / config.scale_r)));
    x = bicubic_resize(x, oh, ow);
    if (config.noise_on && config.noise_sigma > 0.0) {
        Rng noise_rng = Rng::substream(config.seed, "noise", 0);
        x = add_gaussian_noise(x, config.noise_sigma, noise_rng);
    }
    if (config.jpeg_on) x = jpeg_like(x, config.jpeg_quality);
    return x;
}

}  // namespace rmm::degradation
