#include <catch2/catch_amalgamated.hpp>

#include "supermag/rng.hpp"

using namespace supermag;

TEST_CASE("same seed reproduces the stream", "[rng]") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("substreams differ from each other and the base stream", "[rng]") {
    Rng base(7);
    Rng s0 = Rng::substream(7, 0);
    Rng s1 = Rng::substream(7, 1);
    REQUIRE(base.next_u64() != s0.next_u64());
    REQUIRE(s0.next_u64() != s1.next_u64());
}

TEST_CASE("uniform stays in range and covers it", "[rng]") {
    Rng rng(42);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double v = rng.uniform();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    REQUIRE(lo < 0.01);
    REQUIRE(hi > 0.99);
}

TEST_CASE("normal has roughly standard moments", "[rng]") {
    Rng rng(1);
    const int n = 40000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sum2 += v * v;
    }
    REQUIRE(std::abs(sum / n) < 0.02);
    REQUIRE(std::abs(sum2 / n - 1.0) < 0.03);
}
