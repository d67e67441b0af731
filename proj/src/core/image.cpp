#include "nefes/image.hpp"

#include <cmath>
#include <stdexcept>

namespace nefes {

ImageBuffer resize_area(const ImageBuffer& img, int new_h, int new_w) {
    if (new_h <= 0 || new_w <= 0) throw std::invalid_argument("resize_area: bad size");
    ImageBuffer out(new_h, new_w);
    const double sy = static_cast<double>(img.h) / new_h;
    const double sx = static_cast<double>(img.w) / new_w;
    for (int oy = 0; oy < new_h; ++oy) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy;
        for (int ox = 0; ox < new_w; ++ox) {
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            double acc[3] = {0, 0, 0};
            double area = 0;
            for (int iy = static_cast<int>(std::floor(y0)); iy < static_cast<int>(std::ceil(y1)); ++iy) {
                const double hy = std::min<double>(y1, iy + 1) - std::max<double>(y0, iy);
                if (hy <= 0 || iy < 0 || iy >= img.h) continue;
                for (int ix = static_cast<int>(std::floor(x0)); ix < static_cast<int>(std::ceil(x1)); ++ix) {
                    const double hx = std::min<double>(x1, ix + 1) - std::max<double>(x0, ix);
                    if (hx <= 0 || ix < 0 || ix >= img.w) continue;
                    const double wgt = hy * hx;
                    for (int c = 0; c < 3; ++c) acc[c] += wgt * img.at(iy, ix, c);
                    area += wgt;
                }
            }
            for (int c = 0; c < 3; ++c) out.at(oy, ox, c) = acc[c] / area;
        }
    }
    return out;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.h != b.h || a.w != b.w) throw std::invalid_argument("psnr: size mismatch");
    double mse = 0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.rgb.size());
    if (mse <= 0) return 99.0;
    return -10.0 * std::log10(mse);
}

}  // namespace nefes
