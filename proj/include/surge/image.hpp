#pragma once

#include <string>
#include <vector>

#include "surge/tensor.hpp"

namespace surge {

// RGB raster, interleaved HWC, values in [0,1].
struct Image {
    int64_t h = 0, w = 0;
    std::vector<float> pixels;  // h*w*3
    std::string source_id;

    Image() = default;
    Image(int64_t h_, int64_t w_, std::string source = {})
        : h(h_), w(w_), pixels(static_cast<size_t>(h_ * w_ * 3), 0.0f), source_id(std::move(source)) {}

    float& at(int64_t y, int64_t x, int64_t c) {
        return pixels[static_cast<size_t>((y * w + x) * 3 + c)];
    }
    float at(int64_t y, int64_t x, int64_t c) const {
        return pixels[static_cast<size_t>((y * w + x) * 3 + c)];
    }
    int64_t numel() const { return h * w * 3; }

    // Enforces the type invariants: finite values inside [0,1].
    void validate() const;
};

// PNG (8/16-bit, gray/palette/rgb/alpha) or BMP (24/32-bit uncompressed).
// Grayscale is replicated to three channels; alpha is dropped.
Image load_image(const std::string& path);

// 8-bit RGB PNG.
void save_png(const Image& img, const std::string& path);

template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& imgs);
template <typename T>
Tensor<T> image_to_tensor(const Image& img);  // [1,3,H,W]
template <typename T>
Image tensor_to_image(const Tensor<T>& t, int64_t n, bool clip = true);

}  // namespace surge
