#pragma once

// 2-D contact shapes as signed-distance functions, in millimeters, plus the
// posed contact scene. Shapes are defined in a local frame whose origin is
// the shape centroid region; the pose rotates (counterclockwise, degrees)
// and translates into the skin frame.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace supermag {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

inline double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec2 q{a.x + t * ab.x, a.y + t * ab.y};
    return norm(p - q);
}

enum class ShapeKind : std::uint8_t {
    capsule_rod = 0,
    polyline = 1,
    glyph_strokes = 2,
    disk = 3,
};

// One thick stroke: a polyline with a half-width (capsule union over segments).
struct Stroke {
    std::vector<Vec2> points;
    double half_width = 1.0;
};

struct ContactShape {
    ShapeKind kind = ShapeKind::disk;
    std::string name;
    std::uint32_t id = 0;
    std::vector<Stroke> strokes;  // capsule_rod / polyline / glyph_strokes
    Vec2 disk_center{};
    double disk_radius = 5.0;

    // Signed distance in the local frame; negative inside.
    double sdf(Vec2 p) const {
        if (kind == ShapeKind::disk) return norm(p - disk_center) - disk_radius;
        double d = 1e30;
        for (const Stroke& s : strokes) {
            if (s.points.size() == 1) {
                d = std::min(d, norm(p - s.points[0]) - s.half_width);
                continue;
            }
            for (std::size_t i = 0; i + 1 < s.points.size(); ++i)
                d = std::min(d, segment_distance(p, s.points[i], s.points[i + 1]) - s.half_width);
        }
        return d;
    }

    // Conservative radius of the shape around the local origin.
    double bound_radius() const {
        if (kind == ShapeKind::disk) return norm(disk_center) + disk_radius;
        double r = 0.0;
        for (const Stroke& s : strokes)
            for (const Vec2& p : s.points) r = std::max(r, norm(p) + s.half_width);
        return r;
    }

    Vec2 centroid() const {
        if (kind == ShapeKind::disk) return disk_center;
        Vec2 c{};
        std::size_t n = 0;
        for (const Stroke& s : strokes)
            for (const Vec2& p : s.points) {
                c = c + p;
                ++n;
            }
        if (n) {
            c.x /= static_cast<double>(n);
            c.y /= static_cast<double>(n);
        }
        return c;
    }
};

struct Pose {
    double tx_mm = 0.0;
    double ty_mm = 0.0;
    double theta_deg = 0.0;
};

struct ContactScene {
    ContactShape shape;
    Pose pose;
    double press_depth_mm = 1.0;  // in [0, skin thickness]
    std::uint64_t rng_seed = 0;

    // SDF of the posed shape at a skin-frame point.
    double sdf_world(Vec2 p) const {
        const double th = pose.theta_deg * (3.14159265358979323846 / 180.0);
        const double c = std::cos(th), s = std::sin(th);
        const Vec2 q{p.x - pose.tx_mm, p.y - pose.ty_mm};
        // rotate by -theta into the local frame
        return shape.sdf({c * q.x + s * q.y, -s * q.x + c * q.y});
    }
};

// ---------------------------------------------------------------------------
// Shape library. Includes an Allen-key-like L shape, an "R"-like stroke
// glyph, rods of three widths and a disk. All fit the 20x20 mm active area
// at the identity pose.
// ---------------------------------------------------------------------------

inline ContactShape make_rod(const std::string& name, std::uint32_t id, double length_mm, double half_width_mm) {
    ContactShape s;
    s.kind = ShapeKind::capsule_rod;
    s.name = name;
    s.id = id;
    s.strokes = {{{{-length_mm / 2, 0.0}, {length_mm / 2, 0.0}}, half_width_mm}};
    return s;
}

inline ContactShape make_lshape() {
    ContactShape s;
    s.kind = ShapeKind::polyline;
    s.name = "lshape";
    s.id = 1;
    s.strokes = {{{{-1.5, 7.0}, {-1.5, -7.0}, {6.5, -7.0}}, 1.25}};
    return s;
}

inline ContactShape make_glyph_r() {
    ContactShape s;
    s.kind = ShapeKind::glyph_strokes;
    s.name = "glyph_r";
    s.id = 2;
    // stem, bowl, leg
    s.strokes = {
        {{{-3.0, -7.0}, {-3.0, 7.0}}, 1.2},
        {{{-3.0, 7.0}, {1.2, 6.6}, {3.2, 4.4}, {1.2, 1.6}, {-3.0, 0.8}}, 1.2},
        {{{-3.0, 0.8}, {3.6, -7.0}}, 1.2},
    };
    return s;
}

inline ContactShape make_disk(double radius_mm = 5.0) {
    ContactShape s;
    s.kind = ShapeKind::disk;
    s.name = "disk";
    s.id = 6;
    s.disk_radius = radius_mm;
    return s;
}

inline ContactShape shape_by_name(const std::string& name) {
    if (name == "lshape") return make_lshape();
    if (name == "glyph_r") return make_glyph_r();
    if (name == "rod_thin") return make_rod("rod_thin", 3, 14.0, 0.8);
    if (name == "rod_mid") return make_rod("rod_mid", 4, 14.0, 1.4);
    if (name == "rod_wide") return make_rod("rod_wide", 5, 14.0, 2.0);
    if (name == "disk") return make_disk();
    throw std::invalid_argument("unknown shape: " + name +
                                " (known: lshape, glyph_r, rod_thin, rod_mid, rod_wide, disk)");
}

}  // namespace supermag
