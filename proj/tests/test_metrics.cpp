#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "supermag/metrics.hpp"
#include "supermag/rng.hpp"

using namespace supermag;

namespace {
DepthImage random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    DepthImage img(h, w);
    for (auto& v : img.values) v = static_cast<float>(rng.uniform());
    return img;
}
}  // namespace

TEST_CASE("psnr closed-form points", "[metrics]") {
    const DepthImage a = random_image(16, 16, 1);
    REQUIRE(std::isinf(psnr(a, a)));

    // uniform offset of 0.1 -> MSE 0.01 -> 20 dB
    DepthImage b(16, 16, 0.2f);
    DepthImage c(16, 16, 0.3f);
    REQUIRE(psnr(b, c) == Catch::Approx(20.0).margin(1e-9));

    // offset 1.0 -> MSE 1 -> 0 dB
    DepthImage d(16, 16, 0.0f);
    DepthImage e(16, 16, 1.0f);
    REQUIRE(psnr(d, e) == Catch::Approx(0.0).margin(1e-9));

    REQUIRE(psnr(b, c) == psnr(c, b));
    DepthImage wrong(8, 8);
    REQUIRE_THROWS_AS(psnr(b, wrong), std::invalid_argument);
}

TEST_CASE("ssim identity, constants, and anticorrelation", "[metrics]") {
    const DepthImage a = random_image(32, 32, 2);
    REQUIRE(ssim(a, a) == Catch::Approx(1.0).margin(1e-9));

    // constant 0 vs constant 1: only the luminance term survives,
    // C1 / (1 + C1) with C1 = (0.01 * 1)^2
    const double c1 = 1e-4;
    DepthImage zero(16, 16, 0.0f);
    DepthImage one(16, 16, 1.0f);
    REQUIRE(ssim(zero, one) == Catch::Approx(c1 / (1.0 + c1)).margin(1e-9));

    // anti-correlated checkerboard around a common mean -> negative
    DepthImage pa(16, 16), pb(16, 16);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            const float v = (r + c) % 2 ? 0.75f : 0.25f;
            pa.at(r, c) = v;
            pb.at(r, c) = 1.0f - v;
        }
    REQUIRE(ssim(pa, pb) < 0.0);
    REQUIRE(ssim(pa, pb) >= -1.0);

    REQUIRE(ssim(pa, pb) == ssim(pb, pa));
    DepthImage small(8, 8);
    REQUIRE_THROWS_AS(ssim(small, small), std::invalid_argument);
}

TEST_CASE("ssim approaches 1 under small uniform offsets", "[metrics]") {
    const DepthImage a = random_image(32, 32, 3);
    for (const float c : {1e-4f, 1e-3f}) {
        DepthImage b = a;
        for (auto& v : b.values) v += c;
        REQUIRE(ssim(a, b) >= 0.99);
    }
}

TEST_CASE("fid of identical sets is zero", "[metrics]") {
    std::vector<DepthImage> set;
    for (int i = 0; i < 8; ++i) set.push_back(random_image(32, 32, 10 + i));
    REQUIRE(fid(set, set) <= 1e-5);
}

TEST_CASE("fid is positive for shifted sets and needs two images", "[metrics]") {
    std::vector<DepthImage> a, b;
    for (int i = 0; i < 8; ++i) {
        a.push_back(random_image(32, 32, 20 + i));
        DepthImage shifted = a.back();
        for (auto& v : shifted.values) v = std::min(1.0f, v + 0.1f);
        b.push_back(shifted);
    }
    REQUIRE(fid(a, b) > 0.0);
    std::vector<DepthImage> tiny = {a[0]};
    REQUIRE_THROWS_AS(fid(tiny, a), std::invalid_argument);
}

TEST_CASE("feature extractor is deterministic across instances", "[metrics]") {
    const DepthImage img = random_image(64, 64, 5);
    FidFeatureExtractor e1, e2;
    const auto f1 = e1.features(img);
    const auto f2 = e2.features(img);
    REQUIRE(f1.size() == FidFeatureExtractor::kFeatureDim);
    REQUIRE(f1 == f2);
}

TEST_CASE("sample Frechet distance matches the closed form on known Gaussians", "[metrics]") {
    // diagonal covariances: d^2 = |mu1-mu2|^2 + sum (sqrt(c1) - sqrt(c2))^2
    const int dim = 8;
    const int n = 10000;
    Rng rng(77);
    std::vector<double> mu1(dim), mu2(dim), var1(dim), var2(dim);
    for (int i = 0; i < dim; ++i) {
        mu1[i] = rng.uniform(-1, 1);
        mu2[i] = rng.uniform(-1, 1);
        var1[i] = rng.uniform(0.2, 2.0);
        var2[i] = rng.uniform(0.2, 2.0);
    }
    double expect = 0;
    for (int i = 0; i < dim; ++i) {
        expect += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
        expect += (std::sqrt(var1[i]) - std::sqrt(var2[i])) * (std::sqrt(var1[i]) - std::sqrt(var2[i]));
    }

    std::vector<std::vector<double>> fa, fb;
    for (int k = 0; k < n; ++k) {
        std::vector<double> s1(dim), s2(dim);
        for (int i = 0; i < dim; ++i) {
            s1[i] = mu1[i] + std::sqrt(var1[i]) * rng.normal();
            s2[i] = mu2[i] + std::sqrt(var2[i]) * rng.normal();
        }
        fa.push_back(std::move(s1));
        fb.push_back(std::move(s2));
    }
    std::vector<double> m1, c1, m2, c2;
    fit_gaussian(fa, m1, c1);
    fit_gaussian(fb, m2, c2);
    const double got = frechet_distance(m1, c1, m2, c2);
    REQUIRE(got == Catch::Approx(expect).epsilon(0.05));
}

TEST_CASE("frechet distance handles singular covariances via the ridge", "[metrics]") {
    // constant features -> zero covariance
    std::vector<std::vector<double>> fa(5, std::vector<double>(4, 1.0));
    std::vector<std::vector<double>> fb(5, std::vector<double>(4, 2.0));
    std::vector<double> m1, c1, m2, c2;
    fit_gaussian(fa, m1, c1);
    fit_gaussian(fb, m2, c2);
    const double d = frechet_distance(m1, c1, m2, c2);
    REQUIRE(std::isfinite(d));
    REQUIRE(d == Catch::Approx(4.0).margin(1e-3));  // |mu1-mu2|^2 = 4 * 1
}

TEST_CASE("metric report aggregates means and deviations", "[metrics]") {
    std::vector<DepthImage> truth, recon;
    for (int i = 0; i < 4; ++i) {
        truth.push_back(random_image(32, 32, 40 + i));
        DepthImage r = truth.back();
        for (auto& v : r.values) v = std::clamp(v + 0.05f, 0.0f, 1.0f);
        recon.push_back(r);
    }
    const MetricReport rep = evaluate_images(recon, truth);
    REQUIRE(rep.psnr_db.size() == 4);
    REQUIRE(rep.ssim_val.size() == 4);
    REQUIRE(rep.psnr_mean > 20.0);
    REQUIRE(rep.ssim_mean > 0.9);
    REQUIRE(rep.fid_val >= 0.0);
}
