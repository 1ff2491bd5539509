#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "supermag/generate.hpp"
#include "supermag/simkit.hpp"

using namespace supermag;

namespace {
SkinConfig quiet_cfg() {
    SkinConfig c;
    c.noise_std = 0.0;
    return c;
}
}  // namespace

TEST_CASE("zero press depth rasterizes to an all-zero image", "[simkit]") {
    ContactScene sc;
    sc.shape = make_disk(5.0);
    sc.press_depth_mm = 0.0;
    const RasterResult r = rasterize_depth(sc, quiet_cfg());
    REQUIRE(r.shape_in_area);
    for (float v : r.image.values) REQUIRE(v == 0.0f);
}

TEST_CASE("full-area disk at full press saturates interior pixels", "[simkit]") {
    ContactScene sc;
    sc.shape = make_disk(16.0);  // covers the whole 20x20 area
    sc.press_depth_mm = 2.5;
    const SkinConfig cfg = quiet_cfg();
    const RasterResult r = rasterize_depth(sc, cfg);
    for (int i = 8; i < cfg.image_h - 8; ++i)
        for (int j = 8; j < cfg.image_w - 8; ++j) REQUIRE(r.image.at(i, j) == 1.0f);
    REQUIRE(r.image.in_unit_range());
}

TEST_CASE("rasterization commutes with a 90 degree rotation", "[simkit]") {
    SkinConfig cfg = quiet_cfg();
    ContactScene sc;
    sc.shape = make_rod("rod", 9, 12.0, 1.5);
    sc.pose = {1.25, -0.625, 20.0};
    sc.press_depth_mm = 1.8;

    ContactScene rot = sc;
    rot.pose.theta_deg += 90.0;
    // rotate the translation too: (x, y) -> (-y, x)
    rot.pose.tx_mm = -sc.pose.ty_mm;
    rot.pose.ty_mm = sc.pose.tx_mm;

    const DepthImage a = rasterize_depth(sc, cfg).image;
    const DepthImage b = rasterize_depth(rot, cfg).image;
    const int w = cfg.image_w;
    double worst = 0;
    for (int r = 0; r < cfg.image_h; ++r)
        for (int c = 0; c < w; ++c)
            worst = std::max(worst, std::abs(static_cast<double>(b.at(w - 1 - c, r)) - a.at(r, c)));
    REQUIRE(worst <= 1e-6);
}

TEST_CASE("axis flip equivariance", "[simkit]") {
    SkinConfig cfg = quiet_cfg();
    ContactScene sc;
    sc.shape = make_rod("rod", 9, 10.0, 1.2);
    sc.pose = {2.0, 1.0, 35.0};
    sc.press_depth_mm = 2.0;
    ContactScene mir = sc;
    mir.pose.tx_mm = -sc.pose.tx_mm;
    mir.pose.theta_deg = -sc.pose.theta_deg;
    const DepthImage a = rasterize_depth(sc, cfg).image;
    const DepthImage b = rasterize_depth(mir, cfg).image;
    double worst = 0;
    for (int r = 0; r < cfg.image_h; ++r)
        for (int c = 0; c < cfg.image_w; ++c)
            worst = std::max(worst, std::abs(static_cast<double>(b.at(r, cfg.image_w - 1 - c)) - a.at(r, c)));
    REQUIRE(worst <= 1e-6);
}

TEST_CASE("fully outside scene is flagged and zero", "[simkit]") {
    ContactScene sc;
    sc.shape = make_disk(2.0);
    sc.pose.tx_mm = 40.0;
    sc.press_depth_mm = 1.0;
    const RasterResult r = rasterize_depth(sc, quiet_cfg());
    REQUIRE_FALSE(r.shape_in_area);
    for (float v : r.image.values) REQUIRE(v == 0.0f);
}

TEST_CASE("rest state reads all zero without noise", "[simkit]") {
    const SkinConfig cfg = quiet_cfg();
    const DepthImage depth(cfg.image_h, cfg.image_w, 0.0f);
    const MagReading m = simulate_mag(depth, cfg, 7);
    for (float v : m.values) REQUIRE(v == 0.0f);
}

TEST_CASE("centered symmetric indentation cancels lateral components in sum", "[simkit]") {
    const SkinConfig cfg = quiet_cfg();
    ContactScene sc;
    sc.shape = make_disk(4.0);
    sc.press_depth_mm = 2.0;
    const MagReading m = simulate_mag(rasterize_depth(sc, cfg).image, cfg, 0);
    double sum_x = 0, sum_y = 0, peak = 0;
    for (int r = 0; r < kTaxelRows; ++r)
        for (int c = 0; c < kTaxelCols; ++c) {
            sum_x += m.at(r, c, 0);
            sum_y += m.at(r, c, 1);
            for (int ax = 0; ax < kAxes; ++ax) peak = std::max(peak, std::abs(static_cast<double>(m.at(r, c, ax))));
        }
    REQUIRE(peak > 0.0);
    REQUIRE(std::abs(sum_x) <= 1e-6 * peak);
    REQUIRE(std::abs(sum_y) <= 1e-6 * peak);
}

TEST_CASE("localized indentation above a taxel maximizes that taxel's z response", "[simkit]") {
    const SkinConfig cfg = quiet_cfg();
    const Vec2 t = cfg.taxel_center(1, 2);
    ContactScene sc;
    sc.shape = make_disk(1.5);
    sc.pose.tx_mm = t.x;
    sc.pose.ty_mm = t.y;
    sc.press_depth_mm = 2.0;
    const MagReading m = simulate_mag(rasterize_depth(sc, cfg).image, cfg, 0);
    const double best = std::abs(static_cast<double>(m.at(1, 2, 2)));
    for (int r = 0; r < kTaxelRows; ++r)
        for (int c = 0; c < kTaxelCols; ++c)
            if (r != 1 || c != 2) REQUIRE(std::abs(static_cast<double>(m.at(r, c, 2))) < best);
}

TEST_CASE("reading agrees with an independent brute-force dipole sum", "[simkit]") {
    SkinConfig cfg = quiet_cfg();
    cfg.dipole_grid = 8;
    cfg.raw_scale = 100.0;
    ContactScene sc;
    sc.shape = make_rod("rod", 9, 10.0, 1.5);
    sc.pose.theta_deg = 30.0;
    sc.press_depth_mm = 2.0;
    const DepthImage depth = rasterize_depth(sc, cfg).image;
    const MagReading got = simulate_mag(depth, cfg, 0);

    // oracle: direct triple loop over dipoles/sensors/axes, written
    // independently of the implementation
    auto field = [](double px, double py, double pz, double sx, double sy, double sz, int axis) {
        const double rx = sx - px, ry = sy - py, rz = sz - pz;
        const double r2 = rx * rx + ry * ry + rz * rz;
        const double r = std::sqrt(r2);
        const double r5 = r2 * r2 * r;
        const double mdotr = rz;  // unit moment +z
        const double num[3] = {3.0 * rx * mdotr, 3.0 * ry * mdotr, 3.0 * rz * mdotr - r2};
        return num[axis] / r5;
    };
    auto sample = [&](double x, double y) {
        const double cf = (x + 10.0) / 20.0 * cfg.image_w - 0.5;
        const double rf = (10.0 - y) / 20.0 * cfg.image_h - 0.5;
        const double cc = std::clamp(cf, 0.0, cfg.image_w - 1.0);
        const double rr = std::clamp(rf, 0.0, cfg.image_h - 1.0);
        const int c0 = static_cast<int>(cc), r0 = static_cast<int>(rr);
        const int c1 = std::min(c0 + 1, cfg.image_w - 1), r1 = std::min(r0 + 1, cfg.image_h - 1);
        const double fc = cc - c0, fr = rr - r0;
        return (1 - fr) * ((1 - fc) * depth.at(r0, c0) + fc * depth.at(r0, c1)) +
               fr * ((1 - fc) * depth.at(r1, c0) + fc * depth.at(r1, c1));
    };
    for (int tr = 0; tr < 4; ++tr)
        for (int tc = 0; tc < 4; ++tc) {
            const double sx = (tc - 1.5) * 5.0, sy = (1.5 - tr) * 5.0, sz = -1.0;
            for (int ax = 0; ax < 3; ++ax) {
                double acc = 0;
                for (int b = 0; b < cfg.dipole_grid; ++b)
                    for (int a = 0; a < cfg.dipole_grid; ++a) {
                        const double px = -10.0 + (a + 0.5) * 20.0 / cfg.dipole_grid;
                        const double py = 10.0 - (b + 0.5) * 20.0 / cfg.dipole_grid;
                        const double indent = sample(px, py) * 2.5;
                        acc += field(px, py, 2.5 - indent, sx, sy, sz, ax) - field(px, py, 2.5, sx, sy, sz, ax);
                    }
                const double expect = std::clamp(cfg.raw_scale * acc, -500.0, 500.0);
                REQUIRE(static_cast<double>(got.at(tr, tc, ax)) == Catch::Approx(expect).margin(1e-4));
            }
        }
}

TEST_CASE("reading is exactly linear in the dipole moment", "[simkit]") {
    SkinConfig cfg = quiet_cfg();
    cfg.raw_scale = 30.0;  // keep far from the clamp
    ContactScene sc;
    sc.shape = make_lshape();
    sc.press_depth_mm = 1.5;
    const DepthImage depth = rasterize_depth(sc, cfg).image;
    const MagReading m1 = simulate_mag(depth, cfg, 0);
    SkinConfig cfg2 = cfg;
    cfg2.dipole_moment *= 2.0;
    const MagReading m2 = simulate_mag(depth, cfg2, 0);
    for (int i = 0; i < kReadingLen; ++i) REQUIRE(m2.values[i] == 2.0f * m1.values[i]);
}

TEST_CASE("simulate_mag is a pure function of its inputs", "[simkit]") {
    const SkinConfig cfg = quiet_cfg();
    ContactScene sc;
    sc.shape = make_glyph_r();
    sc.press_depth_mm = 2.0;
    const DepthImage depth = rasterize_depth(sc, cfg).image;
    const MagReading a = simulate_mag(depth, cfg, 3);
    const MagReading b = simulate_mag(depth, cfg, 3);
    REQUIRE(a.values == b.values);
}

TEST_CASE("max z response grows with press depth", "[simkit]") {
    const SkinConfig cfg = quiet_cfg();
    double prev = -1.0;
    for (double press = 0.25; press <= 2.5 + 1e-9; press += 0.25) {
        ContactScene sc;
        sc.shape = make_rod("rod", 9, 12.0, 1.5);
        sc.press_depth_mm = press;
        const MagReading m = simulate_mag(rasterize_depth(sc, cfg).image, cfg, 0);
        double zmax = 0;
        for (int r = 0; r < kTaxelRows; ++r)
            for (int c = 0; c < kTaxelCols; ++c) zmax = std::max(zmax, std::abs(static_cast<double>(m.at(r, c, 2))));
        REQUIRE(zmax >= prev);
        prev = zmax;
    }
}

TEST_CASE("generation is deterministic and counts records", "[simkit]") {
    SkinConfig cfg;
    cfg.image_h = cfg.image_w = 16;
    const std::vector<ContactShape> shapes{make_lshape(), make_rod("rod_mid", 4, 14.0, 1.4)};

    const Dataset a = generate_records(shapes, 100, cfg, 5);
    const Dataset b = generate_records(shapes, 100, cfg, 5);
    REQUIRE(a.records.size() == 200);
    REQUIRE(b.records.size() == 200);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        REQUIRE(a.records[i].mag_raw.values == b.records[i].mag_raw.values);
        REQUIRE(a.records[i].depth.values == b.records[i].depth.values);
        REQUIRE(a.records[i].meta.seed == b.records[i].meta.seed);
    }

    const Dataset empty = generate_records(shapes, 0, cfg, 5);
    REQUIRE(empty.records.empty());

    // different seed changes content
    const Dataset c = generate_records(shapes, 1, cfg, 6);
    REQUIRE(c.records[0].mag_raw.values != a.records[0].mag_raw.values);
}

TEST_CASE("config invariants are enforced", "[simkit]") {
    SkinConfig bad;
    bad.dipole_grid = 4;  // < 2x taxel grid
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    SkinConfig bad2;
    bad2.taxel_pitch_mm = 6.0;  // 4 taxels would not fit
    REQUIRE_THROWS_AS(bad2.validate(), std::invalid_argument);
}
