#pragma once

// Conditional VAE for tactile super-resolution: condition embedding, encoder,
// reparameterization, Gaussian decoder, ELBO loss, training loop, inference
// and the finite-difference gradient checker.
//
// Architecture. Encoder: 6 conv blocks (3x3, GroupNorm, GELU) with a
// projected residual around block 1, MaxPool after blocks 1 and 2, AvgPool
// before two FC layers that produce the posterior (mu, log sigma^2). Decoder:
// FC seed plane, then 4 ConvT blocks (2x2 stride 2, GroupNorm, ReLU) each
// followed by 2 conv blocks (GroupNorm, GELU), a 2-channel head (sigmoid mean,
// clamped per-pixel log-variance) center-cropped to the target size. The
// normalized 4x4x3 reading is embedded by two separate GELU MLPs and injected
// multiplicatively (per-channel scales) after encoder blocks 2 and 5 and
// decoder ConvT blocks 1 and 3.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "supermag/autograd.hpp"
#include "supermag/dataset.hpp"
#include "supermag/nn.hpp"
#include "supermag/rng.hpp"
#include "supermag/tensor.hpp"
#include "supermag/types.hpp"

namespace supermag {

struct CvaeConfig {
    int image_h = 64;
    int image_w = 64;
    int latent_dim = 64;
    int cond_embed_dim = 64;
    int cond_hidden = 128;
    std::array<int, 6> enc_widths{16, 32, 64, 64, 64, 128};
    int enc_fc_hidden = 256;
    int dec_start_channels = 128;
    std::array<int, 4> dec_widths{64, 32, 16, 16};
    float beta = 1.0f;
    float logvar_min = -6.0f;
    float logvar_max = 2.0f;
    float lr = 1e-4f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float weight_decay = 1e-2f;
    int epochs = 50;
    int batch_size = 16;
    std::uint64_t seed = 0;
    bool zaxis_only = false;

    void validate() const {
        if (latent_dim < 1) throw std::invalid_argument("CvaeConfig: latent_dim must be >= 1");
        if (!(logvar_min < logvar_max)) throw std::invalid_argument("CvaeConfig: logvar clamp range is empty");
        if (image_h < 8 || image_w < 8 || image_h % 8 || image_w % 8)
            throw std::invalid_argument("CvaeConfig: image size must be a multiple of 8 and >= 8");
        if (batch_size < 1) throw std::invalid_argument("CvaeConfig: batch_size must be >= 1");
    }

    int seed_h() const { return (image_h + 15) / 16; }
    int seed_w() const { return (image_w + 15) / 16; }

    // Gradient-check scale: every structural element, a few thousand scalars.
    static CvaeConfig tiny() {
        CvaeConfig c;
        c.image_h = c.image_w = 8;
        c.latent_dim = 4;
        c.cond_embed_dim = 4;
        c.cond_hidden = 6;
        c.enc_widths = {2, 2, 3, 3, 3, 4};
        c.enc_fc_hidden = 8;
        c.dec_start_channels = 4;
        c.dec_widths = {4, 3, 3, 2};
        c.batch_size = 1;
        return c;
    }

    // Mirrors the full-scale configuration (200x200, latent 512).
    static CvaeConfig full() {
        CvaeConfig c;
        c.image_h = c.image_w = 200;
        c.latent_dim = 512;
        c.cond_embed_dim = 128;
        c.cond_hidden = 256;
        c.enc_widths = {32, 64, 128, 128, 256, 256};
        c.enc_fc_hidden = 256;
        c.dec_start_channels = 128;
        c.dec_widths = {128, 64, 32, 16};
        c.epochs = 350;
        return c;
    }
};

template <typename T>
struct GaussianPosterior {
    Tensor<T> mu;       // (N, latent)
    Tensor<T> log_var;  // (N, latent), clamped into the configured range
};

struct LossBreakdown {
    double nll = 0;
    double kl = 0;
    double total = 0;
};

struct TrainingDivergedError : std::runtime_error {
    int epoch, batch;
    TrainingDivergedError(const std::string& what, int e, int b) : std::runtime_error(what), epoch(e), batch(b) {}
};

// Plain (graph-free) pieces used by tests and inference ------------------------

template <typename T>
Tensor<T> reparameterize_plain(const GaussianPosterior<T>& post, const Tensor<T>& eps) {
    if (eps.shape != post.mu.shape) throw std::invalid_argument("reparameterize: eps shape mismatch");
    Tensor<T> z(post.mu.shape);
    for (std::size_t i = 0; i < z.numel(); ++i)
        z[i] = post.mu[i] + std::exp(post.log_var[i] * T(0.5)) * eps[i];
    return z;
}

// Batch-mean ELBO terms. nll is summed over pixels, kl over latent dims,
// both averaged over the leading batch dimension. total = nll + beta * kl.
template <typename T>
LossBreakdown elbo_loss(const Tensor<T>& target, const Tensor<T>& mean, const Tensor<T>& logvar_img,
                        const GaussianPosterior<T>& post, double beta) {
    if (target.shape != mean.shape || mean.shape != logvar_img.shape)
        throw std::invalid_argument("elbo_loss: image shape mismatch");
    const int n = target.shape[0];
    const double log2pi = 1.8378770664093454835606594728112;
    double nll = 0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        const double d = static_cast<double>(target[i]) - static_cast<double>(mean[i]);
        const double lv = static_cast<double>(logvar_img[i]);
        nll += 0.5 * (d * d * std::exp(-lv) + lv + log2pi);
    }
    double kl = 0;
    for (std::size_t i = 0; i < post.mu.numel(); ++i) {
        const double mu = static_cast<double>(post.mu[i]);
        const double lv = static_cast<double>(post.log_var[i]);
        kl += 0.5 * (mu * mu + std::expm1(lv) - lv);
    }
    LossBreakdown lb;
    lb.nll = nll / n;
    lb.kl = kl / n;
    lb.total = lb.nll + beta * lb.kl;
    if (!std::isfinite(lb.nll)) throw std::runtime_error("elbo_loss: non-finite reconstruction term");
    if (!std::isfinite(lb.kl)) throw std::runtime_error("elbo_loss: non-finite KL term");
    return lb;
}

// Normalized reading as a length-48 row; the z-axis ablation zero-masks the
// x and y components before embedding.
inline void reading_to_row(const MagReading& normalized, bool zaxis_only, float* out48) {
    if (normalized.unit_state != UnitState::normalized)
        throw std::invalid_argument("model input reading must be normalized");
    for (int i = 0; i < kReadingLen; ++i) out48[i] = normalized.values[i];
    if (zaxis_only)
        for (int t = 0; t < kTaxelRows * kTaxelCols; ++t) {
            out48[t * kAxes + 0] = 0.0f;
            out48[t * kAxes + 1] = 0.0f;
        }
}

template <typename T>
class Cvae {
public:
    explicit Cvae(const CvaeConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng = Rng::substream(cfg_.seed, 1);
        build_params(rng);
    }

    const CvaeConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // ---- inference API -----------------------------------------------------

    // (N, cond_embed_dim) embedding; role 0 = encoder embedder, 1 = decoder.
    Tensor<T> embed_condition(const Tensor<T>& readings, int role) const {
        Tape<T> tape;
        tape.grad_enabled = false;
        std::vector<int> L = leaves(tape);
        const int x = tape.leaf(readings);
        return tape.val(embed_graph(tape, L, role == 0 ? emb_enc_ : emb_dec_, x));
    }

    GaussianPosterior<T> posterior(const Tensor<T>& images, const Tensor<T>& readings) const {
        Tape<T> tape;
        tape.grad_enabled = false;
        std::vector<int> L = leaves(tape);
        const int img = tape.leaf(images);
        const int cond = embed_graph(tape, L, emb_enc_, tape.leaf(readings));
        auto [mu, lv] = encode_graph(tape, L, img, cond);
        return {tape.val(mu), tape.val(lv)};
    }

    // Decoder mean and per-pixel log-variance, both (N, 1, H, W).
    std::pair<Tensor<T>, Tensor<T>> decode(const Tensor<T>& z, const Tensor<T>& readings) const {
        Tape<T> tape;
        tape.grad_enabled = false;
        std::vector<int> L = leaves(tape);
        const int cond = embed_graph(tape, L, emb_dec_, tape.leaf(readings));
        auto [mean, lv] = decode_graph(tape, L, tape.leaf(z), cond);
        return {tape.val(mean), tape.val(lv)};
    }

    enum class ReconMode { deterministic, stochastic };

    // Single-reading reconstruction. Deterministic mode decodes the prior
    // mean (z = 0); stochastic mode draws z ~ N(0, I) from the given seed.
    DepthImage reconstruct(const MagReading& normalized, ReconMode mode, std::uint64_t eps_seed = 0) const {
        Tensor<T> x(Shape{1, kReadingLen});
        std::array<float, kReadingLen> row{};
        reading_to_row(normalized, cfg_.zaxis_only, row.data());
        for (int i = 0; i < kReadingLen; ++i) x[i] = static_cast<T>(row[i]);
        Tensor<T> z(Shape{1, cfg_.latent_dim});
        if (mode == ReconMode::stochastic) {
            Rng rng(eps_seed);
            for (auto& v : z.data) v = static_cast<T>(rng.normal());
        }
        auto [mean, lv] = decode(z, x);
        DepthImage img(cfg_.image_h, cfg_.image_w);
        for (std::size_t i = 0; i < img.numel(); ++i) img.values[i] = static_cast<float>(mean[i]);
        return img;
    }

    // ---- training ----------------------------------------------------------

    struct TrainOptions {
        std::function<void(int epoch, const LossBreakdown&)> on_epoch;
    };

    std::vector<LossBreakdown> train(const std::vector<const DatasetRecord*>& records, const TrainOptions& opts = {}) {
        if (records.empty()) throw std::invalid_argument("train: dataset is empty");
        const int n = static_cast<int>(records.size());
        const int hw = cfg_.image_h * cfg_.image_w;

        // Pre-normalized inputs.
        std::vector<float> xs(static_cast<std::size_t>(n) * kReadingLen);
        for (int i = 0; i < n; ++i)
            reading_to_row(clamp_normalize(records[i]->mag_raw), cfg_.zaxis_only, xs.data() + static_cast<std::size_t>(i) * kReadingLen);

        AdamW<T> opt(static_cast<T>(cfg_.lr), static_cast<T>(cfg_.adam_beta1), static_cast<T>(cfg_.adam_beta2),
                     static_cast<T>(cfg_.weight_decay));
        Rng shuffle_rng = Rng::substream(cfg_.seed, 2);
        Rng eps_rng = Rng::substream(cfg_.seed, 3);

        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;

        std::vector<LossBreakdown> history;
        history.reserve(cfg_.epochs);
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            for (int i = n - 1; i > 0; --i) {
                const int j = static_cast<int>(shuffle_rng.below(static_cast<std::uint64_t>(i) + 1));
                std::swap(order[i], order[j]);
            }
            double e_nll = 0, e_kl = 0, e_total = 0;
            int e_count = 0;
            for (int start = 0, batch_idx = 0; start < n; start += cfg_.batch_size, ++batch_idx) {
                const int bs = std::min(cfg_.batch_size, n - start);
                Tensor<T> img(Shape{bs, 1, cfg_.image_h, cfg_.image_w});
                Tensor<T> x(Shape{bs, kReadingLen});
                for (int b = 0; b < bs; ++b) {
                    const DatasetRecord* r = records[order[start + b]];
                    if (r->depth.height != cfg_.image_h || r->depth.width != cfg_.image_w)
                        throw std::invalid_argument("train: record image size does not match config");
                    for (int i = 0; i < hw; ++i) img[static_cast<std::size_t>(b) * hw + i] = static_cast<T>(r->depth.values[i]);
                    for (int i = 0; i < kReadingLen; ++i)
                        x[static_cast<std::size_t>(b) * kReadingLen + i] =
                            static_cast<T>(xs[static_cast<std::size_t>(order[start + b]) * kReadingLen + i]);
                }
                Tensor<T> eps(Shape{bs, cfg_.latent_dim});
                for (auto& v : eps.data) v = static_cast<T>(eps_rng.normal());

                Tape<T> tape;
                std::vector<int> L = leaves(tape, /*needs_grad=*/true);
                int nll_id, kl_id;
                const int total = build_elbo(tape, L, img, x, eps, nll_id, kl_id);

                const double nll_v = static_cast<double>(tape.val(nll_id)[0]);
                const double kl_v = static_cast<double>(tape.val(kl_id)[0]);
                const double total_v = static_cast<double>(tape.val(total)[0]);
                if (!std::isfinite(nll_v))
                    throw TrainingDivergedError("training diverged: non-finite reconstruction term", epoch, batch_idx);
                if (!std::isfinite(kl_v))
                    throw TrainingDivergedError("training diverged: non-finite KL term", epoch, batch_idx);
                if (kl_v < 0)
                    throw TrainingDivergedError("invariant violation: negative KL", epoch, batch_idx);

                tape.backward(total);
                std::vector<Tensor<T>> grads;
                grads.reserve(L.size());
                for (int id : L) grads.push_back(tape.grad(id));
                opt.step(params_, grads);

                e_nll += nll_v * bs;
                e_kl += kl_v * bs;
                e_total += total_v * bs;
                e_count += bs;
            }
            LossBreakdown lb{e_nll / e_count, e_kl / e_count, e_total / e_count};
            history.push_back(lb);
            if (opts.on_epoch) opts.on_epoch(epoch, lb);
        }
        return history;
    }

    // ---- graph building (shared by train, inference and the grad checker) ---

    std::vector<int> leaves(Tape<T>& tape, bool needs_grad = false) const {
        std::vector<int> ids;
        ids.reserve(params_.count());
        for (const auto& e : params_.entries) ids.push_back(tape.leaf(e.tensor, needs_grad));
        return ids;
    }

    // Full ELBO graph; returns the total-loss node (batch mean).
    int build_elbo(Tape<T>& tape, const std::vector<int>& L, const Tensor<T>& images, const Tensor<T>& readings,
                   const Tensor<T>& eps, int& nll_out, int& kl_out) const {
        const int bs = images.shape[0];
        const int img = tape.leaf(images);
        const int x = tape.leaf(readings);
        const int cond_e = embed_graph(tape, L, emb_enc_, x);
        const int cond_d = embed_graph(tape, L, emb_dec_, x);
        auto [mu, lv] = encode_graph(tape, L, img, cond_e);
        const int z = tape.reparameterize(mu, lv, eps);
        auto [mean, lv_img] = decode_graph(tape, L, z, cond_d);
        const int nll_sum = tape.gaussian_nll(images, mean, lv_img);
        const int kl_sum = tape.kl_std_normal(mu, lv);
        nll_out = tape.scale(nll_sum, T(1) / static_cast<T>(bs));
        kl_out = tape.scale(kl_sum, T(1) / static_cast<T>(bs));
        return tape.lincomb(nll_out, T(1), kl_out, static_cast<T>(cfg_.beta));
    }

    // ---- checkpoint ----------------------------------------------------------
    //
    // "SMCK", u16 version, config block, u32 tensor count, then each tensor as
    // u8 rank + u32 dims + f32 data, in registration order (see param names).

    void save(const std::string& path) const {
        std::string buf;
        buf.append("SMCK", 4);
        put<std::uint16_t>(buf, 1);
        write_config(buf, cfg_);
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(params_.count()));
        for (const auto& e : params_.entries) {
            put<std::uint8_t>(buf, static_cast<std::uint8_t>(e.tensor.shape.rank));
            for (int d = 0; d < e.tensor.shape.rank; ++d) put<std::uint32_t>(buf, static_cast<std::uint32_t>(e.tensor.shape[d]));
            for (const T v : e.tensor.data) put<float>(buf, static_cast<float>(v));
        }
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error(path + ": cannot open for writing");
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!f) throw std::runtime_error(path + ": write failed");
    }

    static Cvae<T> load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error(path + ": cannot open for reading");
        std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        const char* p = buf.data();
        const char* end = p + buf.size();
        if (buf.size() < 4 || std::memcmp(p, "SMCK", 4) != 0)
            throw BadMagicError(path + ": bad magic (not a checkpoint)");
        p += 4;
        const auto version = take<std::uint16_t>(p, end, path);
        if (version != 1) throw BadVersionError(path + ": unsupported checkpoint version " + std::to_string(version));
        CvaeConfig cfg = read_config(p, end, path);
        Cvae<T> model(cfg);
        const auto count = take<std::uint32_t>(p, end, path);
        if (count != static_cast<std::uint32_t>(model.params_.count()))
            throw std::runtime_error(path + ": checkpoint tensor count mismatch");
        for (auto& e : model.params_.entries) {
            const auto rank = take<std::uint8_t>(p, end, path);
            if (rank != e.tensor.shape.rank) throw std::runtime_error(path + ": tensor rank mismatch for " + e.name);
            for (int d = 0; d < rank; ++d) {
                const auto dim = take<std::uint32_t>(p, end, path);
                if (dim != static_cast<std::uint32_t>(e.tensor.shape[d]))
                    throw std::runtime_error(path + ": tensor shape mismatch for " + e.name);
            }
            for (auto& v : e.tensor.data) v = static_cast<T>(take<float>(p, end, path));
        }
        return model;
    }

private:
    struct ConvLayer {
        int w = -1, b = -1, g = -1, beta = -1;
        int groups = 1;
    };
    struct LinLayer {
        int w = -1, b = -1;
    };
    struct Embedder {
        LinLayer fc1, fc2;
    };

    CvaeConfig cfg_;
    ParamStore<T> params_;

    std::array<ConvLayer, 6> enc_b_;
    LinLayer enc_skip_;  // 1x1 conv stored as (C1, 1, 1, 1) weight
    LinLayer enc_cond1_, enc_cond2_;
    LinLayer enc_fc1_, enc_fc2_;
    Embedder emb_enc_, emb_dec_;
    LinLayer dec_fc_;
    std::array<ConvLayer, 4> dec_t_;
    LinLayer dec_cond1_, dec_cond2_;
    std::array<ConvLayer, 8> dec_c_;
    LinLayer head_;

    // ---- construction --------------------------------------------------------

    int add_conv(const std::string& name, int cout, int cin, int kh, int kw, Rng& rng, double gain = 2.0) {
        const double stddev = std::sqrt(gain / (cin * kh * kw));
        return params_.add(name + ".w", init_normal<T>(Shape{cout, cin, kh, kw}, stddev, rng));
    }

    ConvLayer add_conv_block(const std::string& name, int cout, int cin, Rng& rng) {
        ConvLayer ly;
        ly.w = add_conv(name + ".conv", cout, cin, 3, 3, rng);
        ly.b = params_.add(name + ".conv.b", init_const<T>(Shape{cout}, T(0)));
        ly.g = params_.add(name + ".gn.g", init_const<T>(Shape{cout}, T(1)));
        ly.beta = params_.add(name + ".gn.b", init_const<T>(Shape{cout}, T(0)));
        ly.groups = norm_groups(cout);
        return ly;
    }

    LinLayer add_linear(const std::string& name, int out, int in, Rng& rng, double stddev) {
        LinLayer ly;
        ly.w = params_.add(name + ".w", init_normal<T>(Shape{out, in}, stddev, rng));
        ly.b = params_.add(name + ".b", init_const<T>(Shape{out}, T(0)));
        return ly;
    }

    // Conditioning scale head: scales spread around 1 at init so gradient
    // reaches the embedders from the first step.
    LinLayer add_cond_scale(const std::string& name, int channels, Rng& rng) {
        LinLayer ly;
        ly.w = params_.add(name + ".w",
                           init_normal<T>(Shape{channels, cfg_.cond_embed_dim}, 0.2 / std::sqrt(cfg_.cond_embed_dim), rng));
        ly.b = params_.add(name + ".b", init_const<T>(Shape{channels}, T(1)));
        return ly;
    }

    void build_params(Rng& rng) {
        const auto& ew = cfg_.enc_widths;
        int cin = 1;
        for (int i = 0; i < 6; ++i) {
            enc_b_[i] = add_conv_block("enc.b" + std::to_string(i + 1), ew[i], cin, rng);
            cin = ew[i];
        }
        enc_skip_.w = add_conv("enc.skip", ew[0], 1, 1, 1, rng, 1.0);
        enc_skip_.b = params_.add("enc.skip.b", init_const<T>(Shape{ew[0]}, T(0)));
        enc_cond1_ = add_cond_scale("enc.cond1", ew[1], rng);
        enc_cond2_ = add_cond_scale("enc.cond2", ew[4], rng);

        const int flat = ew[5] * (cfg_.image_h / 8) * (cfg_.image_w / 8);
        enc_fc1_ = add_linear("enc.fc1", cfg_.enc_fc_hidden, flat, rng, std::sqrt(2.0 / flat));
        enc_fc2_ = add_linear("enc.fc2", 2 * cfg_.latent_dim, cfg_.enc_fc_hidden, rng,
                              0.1 * std::sqrt(1.0 / cfg_.enc_fc_hidden));

        emb_enc_.fc1 = add_linear("emb_enc.fc1", cfg_.cond_hidden, kReadingLen, rng, std::sqrt(2.0 / kReadingLen));
        emb_enc_.fc2 = add_linear("emb_enc.fc2", cfg_.cond_embed_dim, cfg_.cond_hidden, rng, std::sqrt(2.0 / cfg_.cond_hidden));
        emb_dec_.fc1 = add_linear("emb_dec.fc1", cfg_.cond_hidden, kReadingLen, rng, std::sqrt(2.0 / kReadingLen));
        emb_dec_.fc2 = add_linear("emb_dec.fc2", cfg_.cond_embed_dim, cfg_.cond_hidden, rng, std::sqrt(2.0 / cfg_.cond_hidden));

        // The decoder density takes both arguments: the seed FC consumes the
        // latent and the condition embedding jointly.
        const int seed_numel = cfg_.dec_start_channels * cfg_.seed_h() * cfg_.seed_w();
        const int seed_in = cfg_.latent_dim + cfg_.cond_embed_dim;
        dec_fc_ = add_linear("dec.fc", seed_numel, seed_in, rng, std::sqrt(2.0 / seed_in));
        // The seed-plane bias doubles as a learned position embedding; it must
        // start non-zero so decoding the prior mean (z = 0) has a spatial
        // basis for the conditioning scales to modulate.
        params_[dec_fc_.b] = init_normal<T>(Shape{seed_numel}, 1.0, rng);

        const auto& dw = cfg_.dec_widths;
        cin = cfg_.dec_start_channels;
        for (int j = 0; j < 4; ++j) {
            const std::string name = "dec.t" + std::to_string(j + 1);
            ConvLayer ly;
            const double stddev = std::sqrt(2.0 / cin);
            ly.w = params_.add(name + ".w", init_normal<T>(Shape{cin, dw[j], 2, 2}, stddev, rng));
            ly.b = params_.add(name + ".b", init_const<T>(Shape{dw[j]}, T(0)));
            ly.g = params_.add(name + ".gn.g", init_const<T>(Shape{dw[j]}, T(1)));
            ly.beta = params_.add(name + ".gn.b", init_const<T>(Shape{dw[j]}, T(0)));
            ly.groups = norm_groups(dw[j]);
            dec_t_[j] = ly;
            if (j == 0) dec_cond1_ = add_cond_scale("dec.cond1", dw[0], rng);
            if (j == 2) dec_cond2_ = add_cond_scale("dec.cond2", dw[2], rng);
            dec_c_[2 * j] = add_conv_block("dec.c" + std::to_string(j + 1) + "a", dw[j], dw[j], rng);
            dec_c_[2 * j + 1] = add_conv_block("dec.c" + std::to_string(j + 1) + "b", dw[j], dw[j], rng);
            cin = dw[j];
        }
        head_.w = add_conv("dec.head", 2, dw[3], 3, 3, rng, 0.01);
        // mean channel biased toward the dark background at init
        Tensor<T> hb(Shape{2});
        hb[0] = T(-2);
        head_.b = params_.add("dec.head.b", std::move(hb));
    }

    // ---- graph pieces ---------------------------------------------------------

    int conv_block_graph(Tape<T>& tape, const std::vector<int>& L, const ConvLayer& ly, int x, bool use_gelu) const {
        int h = tape.conv2d(x, L[ly.w], L[ly.b], 1, 1);
        h = tape.group_norm(h, L[ly.g], L[ly.beta], ly.groups);
        return use_gelu ? tape.gelu(h) : tape.relu(h);
    }

    int embed_graph(Tape<T>& tape, const std::vector<int>& L, const Embedder& e, int x) const {
        int h = tape.linear(x, L[e.fc1.w], L[e.fc1.b]);
        h = tape.gelu(h);
        return tape.linear(h, L[e.fc2.w], L[e.fc2.b]);
    }

    int apply_cond(Tape<T>& tape, const std::vector<int>& L, const LinLayer& proj, int h, int cond) const {
        const int s = tape.linear(cond, L[proj.w], L[proj.b]);
        return tape.scale_channels(h, s);
    }

    std::pair<int, int> encode_graph(Tape<T>& tape, const std::vector<int>& L, int img, int cond) const {
        int h = conv_block_graph(tape, L, enc_b_[0], img, true);
        const int skip = tape.conv2d(img, L[enc_skip_.w], L[enc_skip_.b], 1, 0);
        h = tape.add(h, skip);
        h = tape.maxpool2(h);
        h = conv_block_graph(tape, L, enc_b_[1], h, true);
        h = tape.maxpool2(h);
        h = apply_cond(tape, L, enc_cond1_, h, cond);
        h = conv_block_graph(tape, L, enc_b_[2], h, true);
        h = conv_block_graph(tape, L, enc_b_[3], h, true);
        h = conv_block_graph(tape, L, enc_b_[4], h, true);
        h = apply_cond(tape, L, enc_cond2_, h, cond);
        h = conv_block_graph(tape, L, enc_b_[5], h, true);
        h = tape.avgpool2(h);
        const auto& hs = tape.val(h).shape;
        h = tape.reshape(h, Shape{hs[0], hs[1] * hs[2] * hs[3]});
        h = tape.linear(h, L[enc_fc1_.w], L[enc_fc1_.b]);
        h = tape.gelu(h);
        h = tape.linear(h, L[enc_fc2_.w], L[enc_fc2_.b]);
        const int mu = tape.slice_cols(h, 0, cfg_.latent_dim);
        int lv = tape.slice_cols(h, cfg_.latent_dim, 2 * cfg_.latent_dim);
        lv = tape.clamp(lv, static_cast<T>(cfg_.logvar_min), static_cast<T>(cfg_.logvar_max));
        return {mu, lv};
    }

    std::pair<int, int> decode_graph(Tape<T>& tape, const std::vector<int>& L, int z, int cond) const {
        const int bs = tape.val(z).shape[0];
        int h = tape.linear(tape.concat_cols(z, cond), L[dec_fc_.w], L[dec_fc_.b]);
        h = tape.gelu(h);
        h = tape.reshape(h, Shape{bs, cfg_.dec_start_channels, cfg_.seed_h(), cfg_.seed_w()});
        for (int j = 0; j < 4; ++j) {
            const ConvLayer& t = dec_t_[j];
            h = tape.conv_transpose2x2(h, L[t.w], L[t.b]);
            h = tape.group_norm(h, L[t.g], L[t.beta], t.groups);
            h = tape.relu(h);
            if (j == 0) h = apply_cond(tape, L, dec_cond1_, h, cond);
            if (j == 2) h = apply_cond(tape, L, dec_cond2_, h, cond);
            h = conv_block_graph(tape, L, dec_c_[2 * j], h, true);
            h = conv_block_graph(tape, L, dec_c_[2 * j + 1], h, true);
        }
        h = tape.conv2d(h, L[head_.w], L[head_.b], 1, 1);
        h = tape.crop2d(h, cfg_.image_h, cfg_.image_w);
        const int mean = tape.sigmoid(tape.slice_channels(h, 0, 1));
        int lv = tape.slice_channels(h, 1, 2);
        lv = tape.clamp(lv, static_cast<T>(cfg_.logvar_min), static_cast<T>(cfg_.logvar_max));
        return {mean, lv};
    }

    // ---- serialization helpers -----------------------------------------------

    template <typename U>
    static void put(std::string& buf, U v) {
        char tmp[sizeof(U)];
        std::memcpy(tmp, &v, sizeof(U));
        buf.append(tmp, sizeof(U));
    }

    template <typename U>
    static U take(const char*& p, const char* end, const std::string& path) {
        if (p + sizeof(U) > end) throw TruncatedFileError(path + ": truncated checkpoint");
        U v;
        std::memcpy(&v, p, sizeof(U));
        p += sizeof(U);
        return v;
    }

    static void write_config(std::string& buf, const CvaeConfig& c) {
        put<std::uint16_t>(buf, static_cast<std::uint16_t>(c.image_h));
        put<std::uint16_t>(buf, static_cast<std::uint16_t>(c.image_w));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(c.latent_dim));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(c.cond_embed_dim));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(c.cond_hidden));
        for (int w : c.enc_widths) put<std::uint32_t>(buf, static_cast<std::uint32_t>(w));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(c.enc_fc_hidden));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(c.dec_start_channels));
        for (int w : c.dec_widths) put<std::uint32_t>(buf, static_cast<std::uint32_t>(w));
        put<float>(buf, c.beta);
        put<float>(buf, c.logvar_min);
        put<float>(buf, c.logvar_max);
        put<float>(buf, c.lr);
        put<float>(buf, c.adam_beta1);
        put<float>(buf, c.adam_beta2);
        put<float>(buf, c.weight_decay);
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(c.epochs));
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(c.batch_size));
        put<std::uint64_t>(buf, c.seed);
        put<std::uint8_t>(buf, c.zaxis_only ? 1 : 0);
    }

    static CvaeConfig read_config(const char*& p, const char* end, const std::string& path) {
        CvaeConfig c;
        c.image_h = take<std::uint16_t>(p, end, path);
        c.image_w = take<std::uint16_t>(p, end, path);
        c.latent_dim = static_cast<int>(take<std::uint32_t>(p, end, path));
        c.cond_embed_dim = static_cast<int>(take<std::uint32_t>(p, end, path));
        c.cond_hidden = static_cast<int>(take<std::uint32_t>(p, end, path));
        for (int& w : c.enc_widths) w = static_cast<int>(take<std::uint32_t>(p, end, path));
        c.enc_fc_hidden = static_cast<int>(take<std::uint32_t>(p, end, path));
        c.dec_start_channels = static_cast<int>(take<std::uint32_t>(p, end, path));
        for (int& w : c.dec_widths) w = static_cast<int>(take<std::uint32_t>(p, end, path));
        c.beta = take<float>(p, end, path);
        c.logvar_min = take<float>(p, end, path);
        c.logvar_max = take<float>(p, end, path);
        c.lr = take<float>(p, end, path);
        c.adam_beta1 = take<float>(p, end, path);
        c.adam_beta2 = take<float>(p, end, path);
        c.weight_decay = take<float>(p, end, path);
        c.epochs = static_cast<int>(take<std::uint32_t>(p, end, path));
        c.batch_size = static_cast<int>(take<std::uint32_t>(p, end, path));
        c.seed = take<std::uint64_t>(p, end, path);
        c.zaxis_only = take<std::uint8_t>(p, end, path) != 0;
        return c;
    }
};

// ---------------------------------------------------------------------------
// Gradient checking (central differences against the analytic backward pass).
// ---------------------------------------------------------------------------

struct GradCheckItem {
    std::string name;
    double max_rel_err = 0;
    double analytic_at_worst = 0;
    double numeric_at_worst = 0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckItem> items;
    double tolerance = 1e-4;
    std::size_t scalars_checked = 0;
    bool pass = true;
};

namespace detail {

inline double cvae_loss_value(Cvae<double>& model, const Tensor<double>& img, const Tensor<double>& x,
                              const Tensor<double>& eps) {
    Tape<double> tape;
    tape.grad_enabled = false;
    std::vector<int> L = model.leaves(tape);
    int nll, kl;
    const int total = model.build_elbo(tape, L, img, x, eps, nll, kl);
    return tape.val(total)[0];
}

inline std::vector<Tensor<double>> cvae_loss_grads(Cvae<double>& model, const Tensor<double>& img,
                                                   const Tensor<double>& x, const Tensor<double>& eps) {
    Tape<double> tape;
    std::vector<int> L = model.leaves(tape, true);
    int nll, kl;
    const int total = model.build_elbo(tape, L, img, x, eps, nll, kl);
    tape.backward(total);
    std::vector<Tensor<double>> grads;
    grads.reserve(L.size());
    for (int id : L) grads.push_back(tape.grad(id));
    return grads;
}

}  // namespace detail

// Compares the supplied analytic gradients against central differences of the
// ELBO. `name_filter` selects parameter tensors by substring; empty string
// checks everything, a non-matching filter yields an empty passing report.
inline GradCheckReport compare_gradients(Cvae<double>& model, const Tensor<double>& img, const Tensor<double>& x,
                                         const Tensor<double>& eps, const std::vector<Tensor<double>>& analytic,
                                         double tolerance = 1e-4, double h = 1e-4,
                                         const std::string& name_filter = "") {
    GradCheckReport report;
    report.tolerance = tolerance;
    auto& store = model.params();
    for (int p = 0; p < store.count(); ++p) {
        const std::string& name = store.entries[p].name;
        if (!name_filter.empty() && name.find(name_filter) == std::string::npos) continue;
        GradCheckItem item;
        item.name = name;
        Tensor<double>& w = store[p];
        for (std::size_t i = 0; i < w.numel(); ++i) {
            const double keep = w[i];
            w[i] = keep + h;
            const double up = detail::cvae_loss_value(model, img, x, eps);
            w[i] = keep - h;
            const double down = detail::cvae_loss_value(model, img, x, eps);
            w[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double rel = std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric));
            if (rel > item.max_rel_err) {
                item.max_rel_err = rel;
                item.analytic_at_worst = analytic[p][i];
                item.numeric_at_worst = numeric;
            }
            ++report.scalars_checked;
        }
        item.pass = item.max_rel_err <= tolerance;
        report.pass = report.pass && item.pass;
        report.items.push_back(std::move(item));
    }
    return report;
}

// End-to-end check on a given (usually tiny) configuration with a fixed
// sample and fixed eps.
inline GradCheckReport grad_check(const CvaeConfig& cfg, double tolerance = 1e-4, double h = 1e-4,
                                  const std::string& name_filter = "") {
    Cvae<double> model(cfg);
    Rng rng = Rng::substream(cfg.seed, 77);
    // Nudge every parameter off its init so paths that start at exact zero
    // (e.g. the conditioning scale projections) carry real gradient.
    for (auto& e : model.params().entries)
        for (auto& v : e.tensor.data) v += 0.05 * rng.normal();
    Tensor<double> img(Shape{1, 1, cfg.image_h, cfg.image_w});
    for (auto& v : img.data) v = rng.uniform();
    Tensor<double> x(Shape{1, kReadingLen});
    for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
    Tensor<double> eps(Shape{1, cfg.latent_dim});
    for (auto& v : eps.data) v = rng.normal();
    const auto analytic = detail::cvae_loss_grads(model, img, x, eps);
    return compare_gradients(model, img, x, eps, analytic, tolerance, h, name_filter);
}

}  // namespace supermag
