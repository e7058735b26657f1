#pragma once

#include <cstdint>

#include "rmm/rng.hpp"
#include "rmm/tensor.hpp"

namespace rmm::degradation {

// Blind degradation synthesis: optional blur, bicubic downsampling (always
// on), additive Gaussian noise, and a baseline-style JPEG transform, applied
// in that order. Sampling is reproducible from the config seed.
enum class BlurKind { None, Gaussian, Motion };

struct DegradationRanges {
    double sigma_min = 1.0, sigma_max = 5.0;   // Gaussian blur sigma
    int motion_min = 3, motion_max = 11;       // motion kernel length
    int scale_min = 2, scale_max = 12;         // downsampling factor r
    double noise_min = 1.0, noise_max = 15.0;  // noise sigma on the 0..255 scale
    int jpeg_min = 40, jpeg_max = 80;          // compression quality
};

struct DegradationConfig {
    bool blur_on = false, noise_on = false, jpeg_on = false;  // downsample is always on
    BlurKind blur_kind = BlurKind::None;
    double gaussian_sigma = 0.0;
    int motion_length = 0;
    double motion_angle = 0.0;  // radians
    int scale_r = 1;
    double noise_sigma = 0.0;
    int jpeg_quality = 0;
    uint64_t seed = 0;  // drives the noise stage
};

// normalized 2D Gaussian, k = 2*ceil(3*sigma)+1
Tensor gaussian_kernel(double sigma);

// anti-aliased unit-mass line segment of `length` samples through the center
Tensor motion_kernel(int length, double angle);

// separable Catmull-Rom (a = -0.5) resampling with half-pixel centers;
// the kernel is widened when downscaling and weights are renormalized per
// output sample, so constants are reproduced exactly
Tensor bicubic_resize(const Tensor& image, int out_h, int out_w);

// x + N(0, sigma/255), clamped to [0,1]
Tensor add_gaussian_noise(const Tensor& image, double sigma_255, Rng& rng);

// YCbCr, per-channel 8x8 DCT, quantization by the scaled standard luminance
// table, inverse transform. Quantization is the only lossy step.
Tensor jpeg_like(const Tensor& image, int quality);

// 2D correlation with reflected borders, same-size output
Tensor convolve_reflect(const Tensor& image, const Tensor& kernel);

DegradationConfig sample_config(Rng& rng, const DegradationRanges& ranges);

Tensor degrade(const Tensor& image, const DegradationConfig& config);

// exposed 8x8 transform pieces
void dct8x8(const double in[64], double out[64]);
void idct8x8(const double in[64], double out[64]);
extern const int kLuminanceQuant[64];
int jpeg_scaled_quant(int base, int quality);

}  // namespace rmm::degradation
