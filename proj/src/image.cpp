#include "surge/image.hpp"

#include <cmath>

namespace surge {

void Image::validate() const {
    if (h < 1 || w < 1) throw ShapeError("image: empty raster");
    if (static_cast<int64_t>(pixels.size()) != h * w * 3)
        throw ShapeError("image: pixel buffer does not match dimensions");
    for (float v : pixels) {
        if (!std::isfinite(v)) throw PreconditionError("image: non-finite pixel value");
        if (v < 0.0f || v > 1.0f) throw PreconditionError("image: pixel value outside [0,1]");
    }
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw PreconditionError("images_to_tensor: empty batch");
    const int64_t n = static_cast<int64_t>(imgs.size()), h = imgs[0].h, w = imgs[0].w;
    Tensor<T> t({n, 3, h, w});
    for (int64_t i = 0; i < n; ++i) {
        const Image& im = imgs[static_cast<size_t>(i)];
        if (im.h != h || im.w != w) throw ShapeError("images_to_tensor: mixed image sizes");
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) t.at4(i, c, y, x) = T(im.at(y, x, c));
    }
    return t;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    return images_to_tensor<T>({img});
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, int64_t n, bool clip) {
    if (t.rank() != 4 || t.size(1) != 3) throw ShapeError("tensor_to_image: expected [N,3,H,W]");
    Image im(t.size(2), t.size(3));
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < im.h; ++y)
            for (int64_t x = 0; x < im.w; ++x) {
                double v = double(t.at4(n, c, y, x));
                if (clip) v = std::min(1.0, std::max(0.0, v));
                im.at(y, x, c) = float(v);
            }
    return im;
}

template Tensor<float> images_to_tensor<float>(const std::vector<Image>&);
template Tensor<double> images_to_tensor<double>(const std::vector<Image>&);
template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);
template Image tensor_to_image<float>(const Tensor<float>&, int64_t, bool);
template Image tensor_to_image<double>(const Tensor<double>&, int64_t, bool);

}  // namespace surge
