#pragma once

#include "image/image.h"

namespace nvs {

// 10*log10(1/MSE) over all pixels and channels for [0,1] images, capped at
// the 99 dB sentinel (identical inputs would otherwise be infinite).
double psnr(const Image& a, const Image& b);

// Gaussian-window SSIM (11x11, sigma 1.5, k1=0.01, k2=0.03, L=1), windows
// fully inside the image, channel-averaged.
double ssim(const Image& a, const Image& b);

inline constexpr double kPsnrCap = 99.0;

}  // namespace nvs
