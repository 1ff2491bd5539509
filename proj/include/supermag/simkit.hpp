#pragma once

// Synthetic stand-in for the physical sensor pair: rasterizes contact scenes
// to high-resolution depth maps and computes the matching 4x4x3 magnetometer
// readings with a point-dipole forward model.
//
// Geometry (mm): the skin occupies z in [0, skin_thickness] over a square
// active area centered at the origin. Dipoles sit on a DxD grid at the top
// surface, magnetized +z; pressing carries them down by the local indentation
// depth. Magnetometers sit sensor_plane_offset below the skin base (z < 0).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "supermag/geometry.hpp"
#include "supermag/rng.hpp"
#include "supermag/types.hpp"

namespace supermag {

struct SkinConfig {
    double active_area_mm = 20.0;
    double skin_thickness_mm = 2.5;
    int taxel_grid = 4;
    double taxel_pitch_mm = 5.0;
    double sensor_plane_offset_mm = 1.0;
    int dipole_grid = 16;
    double dipole_moment = 1.0;
    int image_h = 64;
    int image_w = 64;
    double raw_scale = 1600.0;  // field delta -> raw units; deep presses reach the clamp
    double noise_std = 2.0;    // raw units
    double edge_width_mm = 0.3;

    void validate() const {
        if (taxel_grid * taxel_pitch_mm > active_area_mm + 1e-9)
            throw std::invalid_argument("SkinConfig: taxel grid does not fit inside active area");
        if (dipole_grid < 2 * taxel_grid)
            throw std::invalid_argument("SkinConfig: dipole grid must be at least 2x the taxel grid");
        if (image_h < taxel_grid || image_w < taxel_grid)
            throw std::invalid_argument("SkinConfig: image size must be at least the taxel grid");
        if (skin_thickness_mm <= 0 || sensor_plane_offset_mm <= 0)
            throw std::invalid_argument("SkinConfig: thickness and sensor offset must be positive");
    }

    // Pixel (r, c) center in skin coordinates; row 0 is the +y edge.
    Vec2 pixel_center(int r, int c) const {
        const double sx = active_area_mm / image_w;
        const double sy = active_area_mm / image_h;
        return {-active_area_mm / 2 + (c + 0.5) * sx, active_area_mm / 2 - (r + 0.5) * sy};
    }

    // Taxel (row, col) center; same orientation as the image.
    Vec2 taxel_center(int row, int col) const {
        const double half = (taxel_grid - 1) / 2.0;
        return {(col - half) * taxel_pitch_mm, (half - row) * taxel_pitch_mm};
    }
};

struct RasterResult {
    DepthImage image;
    bool shape_in_area = true;  // false: shape fully outside, image forced to zero
};

// depth(p) = (press_depth / skin_thickness) * smoothstep(-sdf(p) / w)
inline RasterResult rasterize_depth(const ContactScene& scene, const SkinConfig& cfg) {
    cfg.validate();
    if (scene.press_depth_mm < 0 || scene.press_depth_mm > cfg.skin_thickness_mm + 1e-9)
        throw std::invalid_argument("rasterize_depth: press depth outside [0, skin thickness]");

    RasterResult res;
    res.image = DepthImage(cfg.image_h, cfg.image_w);

    // Fully-outside scenes produce a flagged all-zero image.
    const double cr = scene.shape.bound_radius();
    const double half = cfg.active_area_mm / 2;
    if (std::abs(scene.pose.tx_mm) - cr > half || std::abs(scene.pose.ty_mm) - cr > half) {
        res.shape_in_area = false;
        return res;
    }

    const double amp = scene.press_depth_mm / cfg.skin_thickness_mm;
    const double w = cfg.edge_width_mm;
    for (int r = 0; r < cfg.image_h; ++r)
        for (int c = 0; c < cfg.image_w; ++c) {
            const double u = -scene.sdf_world(cfg.pixel_center(r, c)) / w;
            const double t = std::clamp(u, 0.0, 1.0);
            res.image.at(r, c) = static_cast<float>(amp * (t * t * (3.0 - 2.0 * t)));
        }
    return res;
}

namespace detail {

// Point-dipole field with unit moment +z and unit physical constant:
// B(r) = (3 rhat (m . rhat) - m) / |r|^3.
inline void dipole_field_unit_z(double rx, double ry, double rz, double out[3]) {
    const double r2 = rx * rx + ry * ry + rz * rz;
    const double r = std::sqrt(r2);
    const double inv3 = 1.0 / (r2 * r);
    const double common = 3.0 * rz / r2;  // 3 (m.rhat)/|r| * 1/|r|
    out[0] = common * rx * inv3;
    out[1] = common * ry * inv3;
    out[2] = (common * rz - 1.0) * inv3;
}

// Bilinear sample of the depth image at a skin-frame point, clamped to the
// pixel-center lattice.
inline double sample_depth(const DepthImage& img, const SkinConfig& cfg, double x, double y) {
    const double cf = (x + cfg.active_area_mm / 2) / cfg.active_area_mm * img.width - 0.5;
    const double rf = (cfg.active_area_mm / 2 - y) / cfg.active_area_mm * img.height - 0.5;
    const double cc = std::clamp(cf, 0.0, static_cast<double>(img.width - 1));
    const double rr = std::clamp(rf, 0.0, static_cast<double>(img.height - 1));
    const int c0 = static_cast<int>(cc);
    const int r0 = static_cast<int>(rr);
    const int c1 = std::min(c0 + 1, img.width - 1);
    const int r1 = std::min(r0 + 1, img.height - 1);
    const double fc = cc - c0, fr = rr - r0;
    return (1 - fr) * ((1 - fc) * img.at(r0, c0) + fc * img.at(r0, c1)) +
           fr * ((1 - fc) * img.at(r1, c0) + fc * img.at(r1, c1));
}

}  // namespace detail

// Raw 4x4x3 reading: per-axis field delta between the indented and rest skin,
// scaled, noised and clamped to +-500. Deterministic given (depth, cfg, seed).
inline MagReading simulate_mag(const DepthImage& depth, const SkinConfig& cfg, std::uint64_t noise_seed = 0) {
    cfg.validate();
    if (depth.height != cfg.image_h || depth.width != cfg.image_w)
        throw std::invalid_argument("simulate_mag: depth image size does not match config (" +
                                    std::to_string(depth.height) + "x" + std::to_string(depth.width) + ")");

    const int d = cfg.dipole_grid;
    const double cell = cfg.active_area_mm / d;
    const double top = cfg.skin_thickness_mm;

    MagReading reading;
    reading.unit_state = UnitState::raw;

    // Field delta accumulated per sensor in double, moment applied at the end
    // so the output is exactly linear in dipole_moment.
    double delta[kTaxelRows][kTaxelCols][kAxes] = {};
    for (int b = 0; b < d; ++b) {
        const double py = cfg.active_area_mm / 2 - (b + 0.5) * cell;
        for (int a = 0; a < d; ++a) {
            const double px = -cfg.active_area_mm / 2 + (a + 0.5) * cell;
            const double indent = detail::sample_depth(depth, cfg, px, py) * cfg.skin_thickness_mm;
            const double z_rest = top;
            const double z_move = top - indent;
            for (int tr = 0; tr < kTaxelRows; ++tr)
                for (int tc = 0; tc < kTaxelCols; ++tc) {
                    const Vec2 sp = cfg.taxel_center(tr, tc);
                    const double sz = -cfg.sensor_plane_offset_mm;
                    double moved[3], rest[3];
                    detail::dipole_field_unit_z(sp.x - px, sp.y - py, sz - z_move, moved);
                    detail::dipole_field_unit_z(sp.x - px, sp.y - py, sz - z_rest, rest);
                    for (int ax = 0; ax < kAxes; ++ax) delta[tr][tc][ax] += moved[ax] - rest[ax];
                }
        }
    }

    Rng rng(noise_seed);
    for (int tr = 0; tr < kTaxelRows; ++tr)
        for (int tc = 0; tc < kTaxelCols; ++tc)
            for (int ax = 0; ax < kAxes; ++ax) {
                double v = cfg.raw_scale * (cfg.dipole_moment * delta[tr][tc][ax]);
                if (cfg.noise_std > 0.0) v += rng.normal(0.0, cfg.noise_std);
                v = std::clamp(v, -static_cast<double>(kRawClamp), static_cast<double>(kRawClamp));
                reading.at(tr, tc, ax) = static_cast<float>(v);
            }
    return reading;
}

}  // namespace supermag
