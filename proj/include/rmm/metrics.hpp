#pragma once

#include "rmm/tensor.hpp"

namespace rmm::metrics {

// 10*log10(peak^2 / MSE); +infinity for identical inputs
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// standard constants: 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
// valid-position windows, averaged over channels
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

// five dyadic scales with exponents (0.0448, 0.2856, 0.3001, 0.2363, 0.1333);
// smaller images fall back to the scales that still fit an 11x11 window, with
// renormalized exponents and a warning (a single scale degenerates to ssim)
double ms_ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

}  // namespace rmm::metrics
