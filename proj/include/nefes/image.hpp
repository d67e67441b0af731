#pragma once

#include <algorithm>

#include "nefes/tensor.hpp"

namespace nefes {

// RGB image, channels in [0,1], stored as [h*w, 3] row-major spatial.
struct ImageBuffer {
    int h = 0, w = 0;
    Tensor rgb;

    ImageBuffer() = default;
    ImageBuffer(int h_, int w_) : h(h_), w(w_), rgb(static_cast<std::size_t>(h_) * w_, 3) {}

    double& at(int y, int x, int c) { return rgb(static_cast<std::size_t>(y) * w + x, c); }
    double at(int y, int x, int c) const { return rgb(static_cast<std::size_t>(y) * w + x, c); }

    void clamp01() {
        for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = std::clamp(rgb[i], 0.0, 1.0);
    }
};

// Dense h x w x c feature grid stored as [h*w, c].
struct FeatureMap {
    int h = 0, w = 0, c = 0;
    Tensor data;

    FeatureMap() = default;
    FeatureMap(int h_, int w_, int c_)
        : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_, c_) {}
};

// Area-weighted downsampling (box filter); exact for integer factors.
ImageBuffer resize_area(const ImageBuffer& img, int new_h, int new_w);

double psnr(const ImageBuffer& a, const ImageBuffer& b);

}  // namespace nefes
