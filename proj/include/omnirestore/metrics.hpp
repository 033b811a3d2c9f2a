#pragma once

#include "omnirestore/image.hpp"

namespace omnirestore {

// 10*log10(1/MSE) on the [0,1] scale, capped at 100 dB for identical images.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

// Single-scale SSIM on Rec.601 luminance: 11x11 Gaussian window (sigma 1.5),
// k1=0.01, k2=0.03, valid-region mean. Extents must be at least 11.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

}  // namespace omnirestore
