#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "facetrace/tensor.hpp"

namespace facetrace {

// Interleaved RGB, float in [0, 1]. This is the exchange format between the
// data pipeline, the model boundary and the metrics; the model converts it
// to planar CHW tensors internally.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> px; // height * width * 3, row-major, RGB

    Image() = default;
    Image(int h, int w) : height(h), width(w), px(size_t(h) * size_t(w) * 3, 0.f) {}

    float& at(int y, int x, int c) { return px[(size_t(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return px[(size_t(y) * width + x) * 3 + c]; }
};

Image load_png(const std::filesystem::path& path);
void save_png(const Image& img, const std::filesystem::path& path);

// Bilinear with half-pixel centers and edge clamp.
Image resize_bilinear(const Image& img, int out_h, int out_w);

// Image <-> NCHW tensor slice conversions.
template <typename T>
void image_to_chw(const Image& img, Tensor<T>& batch, int n) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                batch.at(n, c, y, x) = T(img.at(y, x, c));
}

template <typename T>
Image chw_to_image(const Tensor<T>& batch, int n) {
    Image img(batch.dim(2), batch.dim(3));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                img.at(y, x, c) = float(batch.at(n, c, y, x));
    return img;
}

} // namespace facetrace
