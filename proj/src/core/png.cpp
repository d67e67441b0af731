#include "nefes/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace nefes {

namespace {

void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void write_chunk(std::ofstream& f, const char type[4], const std::uint8_t* data,
                 std::uint32_t len) {
    std::vector<std::uint8_t> hdr;
    put_u32(hdr, len);
    f.write(reinterpret_cast<const char*>(hdr.data()), 4);
    f.write(type, 4);
    if (len) f.write(reinterpret_cast<const char*>(data), len);
    std::uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
    if (len) crc = crc32(crc, data, len);
    std::vector<std::uint8_t> tail;
    put_u32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::string& path, const ImageBuffer& img) {
    const int h = img.h, w = img.w;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * (1 + 3 * w));
    std::size_t p = 0;
    for (int y = 0; y < h; ++y) {
        raw[p++] = 0;  // filter: none
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                raw[p++] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    }
    uLongf zlen = compressBound(raw.size());
    std::vector<std::uint8_t> zdata(zlen);
    if (compress2(zdata.data(), &zlen, raw.data(), raw.size(), 9) != Z_OK)
        throw std::runtime_error("png: compression failed");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open for writing: " + path);
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr.data(), static_cast<std::uint32_t>(ihdr.size()));
    write_chunk(f, "IDAT", zdata.data(), static_cast<std::uint32_t>(zlen));
    write_chunk(f, "IEND", nullptr, 0);
    if (!f) throw std::runtime_error("png: write failed: " + path);
}

ImageBuffer read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("png: bad signature: " + path);

    int w = 0, h = 0;
    std::vector<std::uint8_t> zdata;
    std::size_t pos = 8;
    bool done = false;
    while (!done) {
        if (pos + 8 > bytes.size()) throw std::runtime_error("png: truncated: " + path);
        const std::uint32_t len = get_u32(&bytes[pos]);
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated: " + path);
        const std::uint8_t* data = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = static_cast<int>(get_u32(data));
            h = static_cast<int>(get_u32(data + 4));
            if (data[8] != 8 || data[9] != 2 || data[12] != 0)
                throw std::runtime_error("png: only 8-bit non-interlaced RGB supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            zdata.insert(zdata.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            done = true;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw std::runtime_error("png: missing IHDR: " + path);

    const std::size_t stride = 1 + 3 * static_cast<std::size_t>(w);
    std::vector<std::uint8_t> raw(stride * h);
    uLongf rlen = raw.size();
    if (uncompress(raw.data(), &rlen, zdata.data(), zdata.size()) != Z_OK || rlen != raw.size())
        throw std::runtime_error("png: decompression failed: " + path);

    // undo scanline filters in place
    const int bpp = 3;
    for (int y = 0; y < h; ++y) {
        std::uint8_t* row = raw.data() + y * stride;
        const std::uint8_t* prev = y > 0 ? raw.data() + (y - 1) * stride : nullptr;
        const int filter = row[0];
        for (int i = 1; i <= 3 * w; ++i) {
            const int a = i > bpp ? row[i - bpp] : 0;
            const int b = prev ? prev[i] : 0;
            const int c = (prev && i > bpp) ? prev[i - bpp] : 0;
            int v = row[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw std::runtime_error("png: bad filter type");
            }
            row[i] = static_cast<std::uint8_t>(v & 0xFF);
        }
    }

    ImageBuffer img(h, w);
    for (int y = 0; y < h; ++y) {
        const std::uint8_t* row = raw.data() + y * stride + 1;
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x * 3 + c] / 255.0;
    }
    return img;
}

}  // namespace nefes
