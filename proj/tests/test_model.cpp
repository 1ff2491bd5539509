#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "supermag/generate.hpp"
#include "supermag/model.hpp"

using namespace supermag;

namespace {

CvaeConfig small_cfg() {
    CvaeConfig c = CvaeConfig::tiny();
    c.image_h = c.image_w = 16;
    c.latent_dim = 6;
    c.seed = 11;
    return c;
}

Tensor<float> random_images(int n, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<float> t(Shape{n, 1, h, w});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    return t;
}

Tensor<float> random_readings(int n, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<float> t(Shape{n, kReadingLen});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1, 1));
    return t;
}

Dataset tiny_dataset(int n, int image, std::uint64_t seed) {
    SkinConfig cfg;
    cfg.image_h = cfg.image_w = image;
    return generate_records({make_lshape(), make_glyph_r()}, n / 2, cfg, seed);
}

}  // namespace

TEST_CASE("condition embedding has the configured dimension and is deterministic", "[model]") {
    const CvaeConfig cfg = small_cfg();
    Cvae<float> model(cfg);
    const Tensor<float> x = random_readings(3, 1);
    const Tensor<float> e1 = model.embed_condition(x, 0);
    const Tensor<float> e2 = model.embed_condition(x, 0);
    REQUIRE(e1.shape == Shape{3, cfg.cond_embed_dim});
    REQUIRE(e1.data == e2.data);
    // encoder and decoder embedders are independent parameter sets
    const Tensor<float> ed = model.embed_condition(x, 1);
    REQUIRE(e1.data != ed.data);
}

TEST_CASE("zero reading with zeroed embedder tail gives a zero embedding", "[model]") {
    Cvae<float> model(small_cfg());
    for (auto& e : model.params().entries)
        if (e.name == "emb_enc.fc2.w" || e.name == "emb_enc.fc2.b") e.tensor.fill(0.0f);
    Tensor<float> x(Shape{1, kReadingLen});
    const Tensor<float> e = model.embed_condition(x, 0);
    for (float v : e.data) REQUIRE(v == 0.0f);
}

TEST_CASE("posterior obeys shape and clamp contracts", "[model]") {
    const CvaeConfig cfg = small_cfg();
    Cvae<float> model(cfg);
    const Tensor<float> img = random_images(2, cfg.image_h, cfg.image_w, 2);
    const Tensor<float> x = random_readings(2, 3);
    const GaussianPosterior<float> post = model.posterior(img, x);
    REQUIRE(post.mu.shape == Shape{2, cfg.latent_dim});
    REQUIRE(post.log_var.shape == Shape{2, cfg.latent_dim});
    for (float v : post.log_var.data) {
        REQUIRE(v >= cfg.logvar_min);
        REQUIRE(v <= cfg.logvar_max);
    }
}

TEST_CASE("unit conditioning scales leave the posterior unchanged", "[model]") {
    const CvaeConfig cfg = small_cfg();
    Cvae<float> model(cfg);
    // force the multiplicative path to the identity: scale = 0*e + 1
    for (auto& e : model.params().entries) {
        if (e.name == "enc.cond1.w" || e.name == "enc.cond2.w") e.tensor.fill(0.0f);
        if (e.name == "enc.cond1.b" || e.name == "enc.cond2.b") e.tensor.fill(1.0f);
    }
    const Tensor<float> img = random_images(1, cfg.image_h, cfg.image_w, 4);
    const GaussianPosterior<float> a = model.posterior(img, random_readings(1, 5));
    const GaussianPosterior<float> b = model.posterior(img, random_readings(1, 6));
    REQUIRE(a.mu.data == b.mu.data);
    REQUIRE(a.log_var.data == b.log_var.data);
}

TEST_CASE("reparameterize matches the hand-evaluated examples", "[model]") {
    GaussianPosterior<double> post;
    post.mu = Tensor<double>(Shape{1, 2});
    post.log_var = Tensor<double>(Shape{1, 2});
    Tensor<double> eps(Shape{1, 2});

    // eps = 0 -> z = mu
    post.mu[0] = 0.7;
    post.mu[1] = -0.3;
    Tensor<double> z = reparameterize_plain(post, eps);
    REQUIRE(z[0] == 0.7);
    REQUIRE(z[1] == -0.3);

    // mu = 0, log_var = 0, eps = e -> z = e
    post.mu.fill(0.0);
    eps[0] = 1.25;
    eps[1] = -2.5;
    z = reparameterize_plain(post, eps);
    REQUIRE(z[0] == 1.25);
    REQUIRE(z[1] == -2.5);

    // mu = (1,1), log_var = (ln 4, ln 4), eps = (1,-1) -> z = (3,-1)
    post.mu.fill(1.0);
    post.log_var.fill(std::log(4.0));
    eps[0] = 1.0;
    eps[1] = -1.0;
    z = reparameterize_plain(post, eps);
    REQUIRE(z[0] == Catch::Approx(3.0).epsilon(1e-12));
    REQUIRE(z[1] == Catch::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("decoder output contracts: shapes, sigmoid range, determinism", "[model]") {
    const CvaeConfig cfg = small_cfg();
    Cvae<float> model(cfg);
    Tensor<float> z(Shape{2, cfg.latent_dim});
    Rng rng(8);
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    const Tensor<float> x = random_readings(2, 9);
    auto [mean1, lv1] = model.decode(z, x);
    auto [mean2, lv2] = model.decode(z, x);
    REQUIRE(mean1.shape == Shape{2, 1, cfg.image_h, cfg.image_w});
    REQUIRE(lv1.shape == mean1.shape);
    for (float v : mean1.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
    for (float v : lv1.data) {
        REQUIRE(v >= cfg.logvar_min);
        REQUIRE(v <= cfg.logvar_max);
    }
    REQUIRE(mean1.data == mean2.data);
    REQUIRE(lv1.data == lv2.data);
}

TEST_CASE("elbo_loss reproduces the closed-form examples", "[model]") {
    // KL examples
    GaussianPosterior<double> post;
    post.mu = Tensor<double>(Shape{1, 1});
    post.log_var = Tensor<double>(Shape{1, 1});
    Tensor<double> img(Shape{1, 1, 2, 2});
    Tensor<double> mean = img;
    Tensor<double> lv(Shape{1, 1, 2, 2});

    LossBreakdown lb = elbo_loss(img, mean, lv, post, 1.0);
    REQUIRE(lb.kl == 0.0);

    post.mu[0] = 1.0;
    lb = elbo_loss(img, mean, lv, post, 1.0);
    REQUIRE(lb.kl == Catch::Approx(0.5).margin(1e-12));

    // perfect reconstruction with unit output variance: nll = 0.5*H*W*log(2*pi)
    const double expect = 0.5 * 4 * std::log(2.0 * 3.14159265358979323846);
    REQUIRE(lb.nll == Catch::Approx(expect).margin(1e-9));
    REQUIRE(lb.total == Catch::Approx(lb.nll + 1.0 * lb.kl).margin(1e-12));
}

TEST_CASE("elbo with beta 0 and zero logvar orders parameter sets like MSE", "[model]") {
    const CvaeConfig cfg = small_cfg();
    const Tensor<float> img = random_images(1, cfg.image_h, cfg.image_w, 12);
    const Tensor<float> x = random_readings(1, 13);
    Tensor<float> z(Shape{1, cfg.latent_dim});

    auto mse_and_loss = [&](std::uint64_t seed) {
        CvaeConfig c = cfg;
        c.seed = seed;
        Cvae<float> m(c);
        auto [mean, lv_learned] = m.decode(z, x);
        Tensor<float> lv0(mean.shape);
        GaussianPosterior<float> post;
        post.mu = Tensor<float>(Shape{1, cfg.latent_dim});
        post.log_var = Tensor<float>(Shape{1, cfg.latent_dim});
        const LossBreakdown lb = elbo_loss(img, mean, lv0, post, 0.0);
        double mse = 0;
        for (std::size_t i = 0; i < img.numel(); ++i) {
            const double d = img[i] - mean[i];
            mse += d * d;
        }
        return std::pair<double, double>(mse, lb.total);
    };
    const auto [mse_a, loss_a] = mse_and_loss(100);
    const auto [mse_b, loss_b] = mse_and_loss(200);
    REQUIRE(mse_a != mse_b);
    REQUIRE((mse_a < mse_b) == (loss_a < loss_b));
}

TEST_CASE("training with zero learning rate leaves parameters bit-identical", "[model]") {
    CvaeConfig cfg = small_cfg();
    cfg.lr = 0.0f;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    Dataset ds = tiny_dataset(8, cfg.image_h, 3);
    std::vector<const DatasetRecord*> recs;
    for (auto& r : ds.records) recs.push_back(&r);

    Cvae<float> model(cfg);
    const Cvae<float> before = model;
    const auto history = model.train(recs);
    REQUIRE(history.size() == 1);
    for (int p = 0; p < model.params().count(); ++p)
        REQUIRE(model.params()[p].data == before.params()[p].data);
}

TEST_CASE("training decreases the loss and keeps KL non-negative", "[model]") {
    CvaeConfig cfg = small_cfg();
    cfg.epochs = 8;
    cfg.batch_size = 8;
    cfg.lr = 1e-3f;  // tiny model, speed up the unit test
    Dataset ds = tiny_dataset(32, cfg.image_h, 4);
    std::vector<const DatasetRecord*> recs;
    for (auto& r : ds.records) recs.push_back(&r);

    Cvae<float> model(cfg);
    bool kl_ok = true;
    Cvae<float>::TrainOptions opts;
    opts.on_epoch = [&](int, const LossBreakdown& lb) { kl_ok = kl_ok && lb.kl >= 0.0; };
    const auto history = model.train(recs, opts);
    REQUIRE(history.size() == static_cast<std::size_t>(cfg.epochs));
    REQUIRE(kl_ok);
    REQUIRE(history.back().total < history.front().total);
    REQUIRE(model.params().all_finite());
}

TEST_CASE("training twice from the same seed is bit-identical", "[model]") {
    CvaeConfig cfg = small_cfg();
    cfg.epochs = 2;
    cfg.batch_size = 4;
    Dataset ds = tiny_dataset(8, cfg.image_h, 5);
    std::vector<const DatasetRecord*> recs;
    for (auto& r : ds.records) recs.push_back(&r);

    Cvae<float> a(cfg), b(cfg);
    a.train(recs);
    b.train(recs);
    for (int p = 0; p < a.params().count(); ++p) REQUIRE(a.params()[p].data == b.params()[p].data);
}

TEST_CASE("reconstruction modes: determinism and seeded stochasticity", "[model]") {
    Cvae<float> model(small_cfg());
    MagReading x;
    x.unit_state = UnitState::normalized;
    Rng rng(6);
    for (auto& v : x.values) v = static_cast<float>(rng.uniform(-1, 1));

    const DepthImage d1 = model.reconstruct(x, Cvae<float>::ReconMode::deterministic);
    const DepthImage d2 = model.reconstruct(x, Cvae<float>::ReconMode::deterministic);
    REQUIRE(d1.values == d2.values);

    const DepthImage s1 = model.reconstruct(x, Cvae<float>::ReconMode::stochastic, 42);
    const DepthImage s2 = model.reconstruct(x, Cvae<float>::ReconMode::stochastic, 42);
    REQUIRE(s1.values == s2.values);

    const DepthImage s3 = model.reconstruct(x, Cvae<float>::ReconMode::stochastic, 43);
    float max_delta = 0;
    for (std::size_t i = 0; i < s1.numel(); ++i) max_delta = std::max(max_delta, std::abs(s1.values[i] - s3.values[i]));
    REQUIRE(max_delta > 0.0f);
}

TEST_CASE("z-axis ablation masks the lateral components", "[model]") {
    CvaeConfig cfg = small_cfg();
    cfg.zaxis_only = true;
    Cvae<float> model(cfg);
    MagReading a;
    a.unit_state = UnitState::normalized;
    Rng rng(7);
    for (auto& v : a.values) v = static_cast<float>(rng.uniform(-1, 1));
    MagReading b = a;
    for (int t = 0; t < kTaxelRows * kTaxelCols; ++t) {
        b.values[t * kAxes + 0] = -a.values[t * kAxes + 0];
        b.values[t * kAxes + 1] = 0.123f;
    }
    const DepthImage ra = model.reconstruct(a, Cvae<float>::ReconMode::deterministic);
    const DepthImage rb = model.reconstruct(b, Cvae<float>::ReconMode::deterministic);
    REQUIRE(ra.values == rb.values);

    MagReading c = a;
    c.values[2] = a.values[2] + 0.25f;  // a z component
    const DepthImage rc = model.reconstruct(c, Cvae<float>::ReconMode::deterministic);
    REQUIRE(ra.values != rc.values);
}

TEST_CASE("checkpoint save/load round-trips bit-exactly", "[model]") {
    namespace fs = std::filesystem;
    const std::string p1 = (fs::temp_directory_path() / "supermag_ckpt_a.smck").string();
    const std::string p2 = (fs::temp_directory_path() / "supermag_ckpt_b.smck").string();
    CvaeConfig cfg = small_cfg();
    cfg.zaxis_only = true;
    cfg.beta = 3.5f;
    Cvae<float> model(cfg);
    model.save(p1);
    Cvae<float> loaded = Cvae<float>::load(p1);
    REQUIRE(loaded.config().zaxis_only == cfg.zaxis_only);
    REQUIRE(loaded.config().beta == cfg.beta);
    REQUIRE(loaded.config().latent_dim == cfg.latent_dim);
    for (int p = 0; p < model.params().count(); ++p) REQUIRE(loaded.params()[p].data == model.params()[p].data);
    loaded.save(p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
    std::remove(p1.c_str());
    std::remove(p2.c_str());

    REQUIRE_THROWS_AS(Cvae<float>::load("/nonexistent/checkpoint.smck"), std::runtime_error);
}

TEST_CASE("gradient check passes on the tiny config and catches corruption", "[model]") {
    const CvaeConfig cfg = CvaeConfig::tiny();
    const GradCheckReport report = grad_check(cfg, 1e-4, 1e-4);
    REQUIRE(report.pass);
    REQUIRE(report.scalars_checked > 1000);

    // empty filter subset -> empty passing report
    const GradCheckReport empty = grad_check(cfg, 1e-4, 1e-4, "no_such_tensor");
    REQUIRE(empty.pass);
    REQUIRE(empty.items.empty());

    // negative control: doubling one gradient tensor must fail the comparison
    Cvae<double> model(cfg);
    Rng rng(31);
    Tensor<double> img(Shape{1, 1, cfg.image_h, cfg.image_w});
    for (auto& v : img.data) v = rng.uniform();
    Tensor<double> x(Shape{1, kReadingLen});
    for (auto& v : x.data) v = rng.uniform(-1, 1);
    Tensor<double> eps(Shape{1, cfg.latent_dim});
    for (auto& v : eps.data) v = rng.normal();
    auto grads = detail::cvae_loss_grads(model, img, x, eps);
    for (auto& v : grads[0].data) v *= 2.0;
    const GradCheckReport bad = compare_gradients(model, img, x, eps, grads, 1e-4, 1e-4,
                                                  model.params().entries[0].name);
    REQUIRE_FALSE(bad.pass);
}
