#pragma once

// 16-bit binary PGM (P5) export for depth images: lossless for [0,1] data
// quantized to 65535 levels, viewable everywhere, no imaging dependencies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "supermag/types.hpp"

namespace supermag {

inline void write_pgm16(const DepthImage& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(path + ": cannot open for writing");
    f << "P5\n" << img.width << " " << img.height << "\n65535\n";
    std::string buf;
    buf.reserve(img.numel() * 2);
    for (float v : img.values) {
        const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
        buf.push_back(static_cast<char>(q >> 8));  // PGM is big-endian
        buf.push_back(static_cast<char>(q & 0xFF));
    }
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(path + ": write failed");
}

inline DepthImage read_pgm16(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(path + ": cannot open for reading");
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 65535) throw std::runtime_error(path + ": not a 16-bit P5 PGM");
    f.get();  // single whitespace after header
    DepthImage img(h, w);
    for (auto& v : img.values) {
        const int hi = f.get(), lo = f.get();
        if (hi < 0 || lo < 0) throw std::runtime_error(path + ": truncated PGM");
        v = static_cast<float>((hi << 8) | lo) / 65535.0f;
    }
    return img;
}

}  // namespace supermag
