#pragma once

// Interpolation baselines: upsample the 4x4 z-axis taxel grid to image
// resolution. Corner-aligned, so the four corner taxels land exactly on the
// corner pixels and node values are preserved.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "supermag/types.hpp"

namespace supermag {

struct TaxelGrid {
    std::array<float, kTaxelRows * kTaxelCols> z{};  // normalized z readings, [-1, 1]

    float at(int r, int c) const { return z[r * kTaxelCols + c]; }
};

inline TaxelGrid zaxis_grid(const MagReading& normalized) {
    if (normalized.unit_state != UnitState::normalized)
        throw std::invalid_argument("zaxis_grid: reading must be normalized");
    TaxelGrid g;
    g.z = normalized.z_grid();
    return g;
}

inline ScalarField bilinear_upsample(const TaxelGrid& grid, int h, int w) {
    if (h < kTaxelRows || w < kTaxelCols) throw std::invalid_argument("bilinear_upsample: target smaller than grid");
    ScalarField out(h, w);
    for (int r = 0; r < h; ++r) {
        const double gy = static_cast<double>(r) * (kTaxelRows - 1) / (h - 1);
        const int y0 = std::min(static_cast<int>(gy), kTaxelRows - 2);
        const double fy = gy - y0;
        for (int c = 0; c < w; ++c) {
            const double gx = static_cast<double>(c) * (kTaxelCols - 1) / (w - 1);
            const int x0 = std::min(static_cast<int>(gx), kTaxelCols - 2);
            const double fx = gx - x0;
            const double v = (1 - fy) * ((1 - fx) * grid.at(y0, x0) + fx * grid.at(y0, x0 + 1)) +
                             fy * ((1 - fx) * grid.at(y0 + 1, x0) + fx * grid.at(y0 + 1, x0 + 1));
            out.at(r, c) = static_cast<float>(v);
        }
    }
    return out;
}

namespace detail {

// Catmull-Rom kernel (a = -0.5).
inline double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

}  // namespace detail

// Bicubic (Catmull-Rom) with edge clamping; may overshoot the grid range.
inline ScalarField bicubic_upsample(const TaxelGrid& grid, int h, int w) {
    if (h < kTaxelRows || w < kTaxelCols) throw std::invalid_argument("bicubic_upsample: target smaller than grid");
    ScalarField out(h, w);
    for (int r = 0; r < h; ++r) {
        const double gy = static_cast<double>(r) * (kTaxelRows - 1) / (h - 1);
        const int y0 = static_cast<int>(std::floor(gy));
        for (int c = 0; c < w; ++c) {
            const double gx = static_cast<double>(c) * (kTaxelCols - 1) / (w - 1);
            const int x0 = static_cast<int>(std::floor(gx));
            double v = 0.0;
            for (int dy = -1; dy <= 2; ++dy) {
                const int yy = std::clamp(y0 + dy, 0, kTaxelRows - 1);
                const double wy = detail::cubic_weight(gy - (y0 + dy));
                for (int dx = -1; dx <= 2; ++dx) {
                    const int xx = std::clamp(x0 + dx, 0, kTaxelCols - 1);
                    v += wy * detail::cubic_weight(gx - (x0 + dx)) * grid.at(yy, xx);
                }
            }
            out.at(r, c) = static_cast<float>(v);
        }
    }
    return out;
}

// Affine rescale [-1, 1] -> [0, 1] with clipping, for metric comparison
// against depth ground truth.
inline DepthImage to_unit_range(const ScalarField& field) {
    DepthImage img(field.height, field.width);
    for (std::size_t i = 0; i < img.numel(); ++i)
        img.values[i] = std::clamp((field.values[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
    return img;
}

}  // namespace supermag
