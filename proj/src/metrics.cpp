#include "omnirestore/metrics.hpp"

#include <cmath>
#include <vector>

#include "omnirestore/error.hpp"

namespace omnirestore {

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("psnr: image extents differ");
    double mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 1e-10) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> luminance(const ImageBuffer& img) {
    std::vector<double> y(static_cast<size_t>(img.pixels()));
    for (long i = 0; i < img.pixels(); ++i)
        y[static_cast<size_t>(i)] = 0.299 * img.data[static_cast<size_t>(i) * 3] +
                                    0.587 * img.data[static_cast<size_t>(i) * 3 + 1] +
                                    0.114 * img.data[static_cast<size_t>(i) * 3 + 2];
    return y;
}

constexpr int kWin = 11;

std::vector<double> gaussian_kernel() {
    std::vector<double> k(kWin);
    const double sigma = 1.5;
    double sum = 0;
    for (int i = 0; i < kWin; ++i) {
        const double x = i - (kWin - 1) / 2.0;
        k[static_cast<size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable valid-region Gaussian filter.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w) {
    static const std::vector<double> kern = gaussian_kernel();
    const int oh = h - kWin + 1, ow = w - kWin + 1;
    std::vector<double> tmp(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < kWin; ++i) acc += kern[static_cast<size_t>(i)] * img[static_cast<size_t>(y) * w + x + i];
            tmp[static_cast<size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < kWin; ++i) acc += kern[static_cast<size_t>(i)] * tmp[static_cast<size_t>(y + i) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("ssim: image extents differ");
    if (a.height < kWin || a.width < kWin)
        throw ValueError("ssim: extents must be at least " + std::to_string(kWin));
    const int h = a.height, w = a.width;
    std::vector<double> ya = luminance(a), yb = luminance(b);
    std::vector<double> ya2(ya.size()), yb2(ya.size()), yab(ya.size());
    for (size_t i = 0; i < ya.size(); ++i) {
        ya2[i] = ya[i] * ya[i];
        yb2[i] = yb[i] * yb[i];
        yab[i] = ya[i] * yb[i];
    }
    const auto mu_a = filter_valid(ya, h, w);
    const auto mu_b = filter_valid(yb, h, w);
    const auto m_a2 = filter_valid(ya2, h, w);
    const auto m_b2 = filter_valid(yb2, h, w);
    const auto m_ab = filter_valid(yab, h, w);

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double acc = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_a2[i] - mu_a[i] * mu_a[i];
        const double vb = m_b2[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        acc += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(mu_a.size());
}

}  // namespace omnirestore
