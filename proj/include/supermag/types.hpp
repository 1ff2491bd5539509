#pragma once

// Core domain types shared by the simulator, dataset layer, model and CLI.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace supermag {

inline constexpr int kTaxelRows = 4;
inline constexpr int kTaxelCols = 4;
inline constexpr int kAxes = 3;
inline constexpr int kReadingLen = kTaxelRows * kTaxelCols * kAxes;  // 48
inline constexpr float kRawClamp = 500.0f;

enum class UnitState : std::uint8_t { raw = 0, normalized = 1 };

// 4x4x3 magnetometer reading. Layout is taxel-major, row-major over taxels:
// taxel (0,0) x,y,z; taxel (0,1) x,y,z; ...
struct MagReading {
    std::array<float, kReadingLen> values{};
    UnitState unit_state = UnitState::raw;

    static int index(int row, int col, int axis) { return (row * kTaxelCols + col) * kAxes + axis; }

    float& at(int row, int col, int axis) { return values[index(row, col, axis)]; }
    float at(int row, int col, int axis) const { return values[index(row, col, axis)]; }

    // z components as a flat 4x4 grid (row-major).
    std::array<float, kTaxelRows * kTaxelCols> z_grid() const {
        std::array<float, kTaxelRows * kTaxelCols> g{};
        for (int r = 0; r < kTaxelRows; ++r)
            for (int c = 0; c < kTaxelCols; ++c) g[r * kTaxelCols + c] = at(r, c, 2);
        return g;
    }
};

// H x W grid of normalized indentation depths in [0,1]
// (1 = full skin-thickness indentation). Row 0 is the top of the scene.
struct DepthImage {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    DepthImage() = default;
    DepthImage(int h, int w, float fill = 0.0f) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    std::size_t numel() const { return values.size(); }

    bool in_unit_range() const {
        for (float v : values)
            if (!(v >= 0.0f && v <= 1.0f)) return false;
        return true;
    }
};

// Interpolated field in sensor units; may leave [0,1] (e.g. bicubic overshoot).
struct ScalarField {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    ScalarField() = default;
    ScalarField(int h, int w, float fill = 0.0f) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
};

}  // namespace supermag
