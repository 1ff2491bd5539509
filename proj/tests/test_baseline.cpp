#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "supermag/baseline.hpp"
#include "supermag/rng.hpp"

using namespace supermag;

namespace {
TaxelGrid random_grid(std::uint64_t seed) {
    Rng rng(seed);
    TaxelGrid g;
    for (auto& v : g.z) v = static_cast<float>(rng.uniform(-1, 1));
    return g;
}
}  // namespace

TEST_CASE("constant grids upsample to constant fields", "[baseline]") {
    TaxelGrid g;
    for (auto& v : g.z) v = 0.42f;
    for (const ScalarField& f : {bilinear_upsample(g, 33, 17), bicubic_upsample(g, 33, 17)})
        for (float v : f.values) REQUIRE(v == Catch::Approx(0.42f).margin(1e-6));
}

TEST_CASE("corner taxels land exactly on corner pixels", "[baseline]") {
    TaxelGrid g{};
    g.z[0] = 1.0f;  // taxel (0,0)
    const ScalarField f = bilinear_upsample(g, 64, 64);
    REQUIRE(f.at(0, 0) == 1.0f);
    REQUIRE(f.at(0, 63) == 0.0f);
    REQUIRE(f.at(63, 0) == 0.0f);
}

TEST_CASE("bilinear midpoint of a single-corner cell is one quarter", "[baseline]") {
    TaxelGrid g{};
    g.z[1 * kTaxelCols + 1] = 1.0f;  // cell (0,0)-(1,1) has corners 0,0,0,1
    // H = W = 7 puts pixel (1,1) exactly at grid coordinates (0.5, 0.5)
    const ScalarField f = bilinear_upsample(g, 7, 7);
    REQUIRE(f.at(1, 1) == Catch::Approx(0.25).margin(1e-7));
}

TEST_CASE("bicubic reproduces all node values", "[baseline]") {
    const TaxelGrid g = random_grid(5);
    // (16-1) is divisible by 3: nodes sit at pixels 0, 5, 10, 15
    const ScalarField f = bicubic_upsample(g, 16, 16);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) REQUIRE(f.at(5 * r, 5 * c) == Catch::Approx(g.at(r, c)).margin(1e-6));
}

TEST_CASE("bicubic overshoots a step edge, bilinear stays bounded", "[baseline]") {
    TaxelGrid g{};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) g.z[r * kTaxelCols + c] = c >= 2 ? 1.0f : 0.0f;

    const ScalarField cubic = bicubic_upsample(g, 32, 32);
    float cubic_max = -2, cubic_min = 2;
    for (float v : cubic.values) {
        cubic_max = std::max(cubic_max, v);
        cubic_min = std::min(cubic_min, v);
    }
    REQUIRE(cubic_max > 1.0f);  // overshoot above the max grid value

    const ScalarField lin = bilinear_upsample(g, 32, 32);
    for (float v : lin.values) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
}

TEST_CASE("upsamplers are linear operators", "[baseline]") {
    const TaxelGrid g1 = random_grid(7);
    const TaxelGrid g2 = random_grid(8);
    const double alpha = 0.6, beta = -1.3;
    TaxelGrid mix;
    for (int i = 0; i < 16; ++i) mix.z[i] = static_cast<float>(alpha * g1.z[i] + beta * g2.z[i]);

    auto check = [&](auto up) {
        const ScalarField fa = up(g1), fb = up(g2), fm = up(mix);
        for (std::size_t i = 0; i < fm.values.size(); ++i)
            REQUIRE(fm.values[i] == Catch::Approx(alpha * fa.values[i] + beta * fb.values[i]).margin(1e-6));
    };
    check([](const TaxelGrid& g) { return bilinear_upsample(g, 21, 13); });
    check([](const TaxelGrid& g) { return bicubic_upsample(g, 21, 13); });
}

TEST_CASE("unit-range rescale maps [-1,1] affinely and clips overshoot", "[baseline]") {
    ScalarField f(1, 5);
    f.values = {-1.0f, 0.0f, 1.0f, 1.4f, -1.2f};
    const DepthImage img = to_unit_range(f);
    REQUIRE(img.values[0] == 0.0f);
    REQUIRE(img.values[1] == 0.5f);
    REQUIRE(img.values[2] == 1.0f);
    REQUIRE(img.values[3] == 1.0f);
    REQUIRE(img.values[4] == 0.0f);
}

TEST_CASE("zaxis_grid extracts the z components of a normalized reading", "[baseline]") {
    MagReading m;
    m.unit_state = UnitState::normalized;
    for (int r = 0; r < kTaxelRows; ++r)
        for (int c = 0; c < kTaxelCols; ++c) m.at(r, c, 2) = 0.01f * (r * 4 + c);
    const TaxelGrid g = zaxis_grid(m);
    for (int i = 0; i < 16; ++i) REQUIRE(g.z[i] == 0.01f * i);

    MagReading raw;
    REQUIRE_THROWS_AS(zaxis_grid(raw), std::invalid_argument);
}
