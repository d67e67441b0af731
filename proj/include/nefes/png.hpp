#pragma once

#include <string>

#include "nefes/image.hpp"

namespace nefes {

// 8-bit RGB PNG, no interlace. Channels are quantized with round(v*255)
// after clamping to [0,1].
void write_png(const std::string& path, const ImageBuffer& img);
ImageBuffer read_png(const std::string& path);

}  // namespace nefes
