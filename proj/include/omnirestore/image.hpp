#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "omnirestore/tensor.hpp"

namespace omnirestore {

// H x W x 3 float image, values in [0,1], row-major with channels innermost.
// The 8-bit quantization rule everywhere is round(v * 255).
struct ImageBuffer {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // height * width * 3

    ImageBuffer() = default;
    ImageBuffer(int h, int w, float fill = 0.f)
        : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {
        if (h <= 0 || w <= 0) throw ShapeError("image extents must be positive");
    }

    long pixels() const { return static_cast<long>(height) * width; }

    float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }

    void clamp() {
        for (auto& v : data) v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    }

    static std::uint8_t quantize(float v) {
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        return static_cast<std::uint8_t>(std::lround(v * 255.f));
    }
};

template <class S>
Tensor<S> image_to_tensor(const ImageBuffer& img) {
    std::vector<S> data(img.data.begin(), img.data.end());
    return Tensor<S>::from({img.height, img.width, 3}, std::move(data));
}

template <class S>
ImageBuffer tensor_to_image(const Tensor<S>& t) {
    if (t.ndim() != 3 || t.dim(2) != 3)
        throw ShapeError("tensor_to_image: expected [H,W,3], got " + shape_str(t.shape()));
    ImageBuffer img(t.dim(0), t.dim(1));
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(t.data()[i]);
    img.clamp();
    return img;
}

}  // namespace omnirestore
