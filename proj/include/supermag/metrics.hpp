#pragma once

// Image quality metrics: PSNR, SSIM, and a Fréchet feature distance over a
// fixed, seeded convolutional feature extractor (a deterministic stand-in for
// the usual Inception embedding; absolute values live on their own scale).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "supermag/rng.hpp"
#include "supermag/types.hpp"

namespace supermag {

// 10 * log10(range^2 / MSE); identical images return +infinity.
inline double psnr(const DepthImage& a, const DepthImage& b, double data_range = 1.0) {
    if (a.height != b.height || a.width != b.width) throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.values[i]) - b.values[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

// Mean of the local SSIM map, Gaussian window (default 11x11, sigma 1.5),
// valid-mode (no padding). Result in [-1, 1].
inline double ssim(const DepthImage& a, const DepthImage& b, int window = 11, double sigma = 1.5,
                   double k1 = 0.01, double k2 = 0.03, double data_range = 1.0) {
    if (a.height != b.height || a.width != b.width) throw std::invalid_argument("ssim: shape mismatch");
    if (a.height < window || a.width < window)
        throw std::invalid_argument("ssim: image smaller than the window (" + std::to_string(window) + ")");

    std::vector<double> kernel(static_cast<std::size_t>(window) * window);
    const int half = window / 2;
    double ksum = 0.0;
    for (int y = 0; y < window; ++y)
        for (int x = 0; x < window; ++x) {
            const double dy = y - half, dx = x - half;
            const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            kernel[static_cast<std::size_t>(y) * window + x] = v;
            ksum += v;
        }
    for (double& v : kernel) v /= ksum;

    const double c1 = (k1 * data_range) * (k1 * data_range);
    const double c2 = (k2 * data_range) * (k2 * data_range);

    double acc = 0.0;
    std::size_t count = 0;
    for (int r = 0; r + window <= a.height; ++r)
        for (int c = 0; c + window <= a.width; ++c) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int y = 0; y < window; ++y)
                for (int x = 0; x < window; ++x) {
                    const double w = kernel[static_cast<std::size_t>(y) * window + x];
                    const double va = a.at(r + y, c + x);
                    const double vb = b.at(r + y, c + x);
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            const double var_a = saa - ma * ma;
            const double var_b = sbb - mb * mb;
            const double cov = sab - ma * mb;
            const double s = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                             ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            acc += s;
            ++count;
        }
    return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Fréchet feature distance.
// ---------------------------------------------------------------------------

// Fixed 4-layer strided conv net (3x3, stride 2, pad 1; channels 1-8-16-32-64;
// tanh activations; no biases) followed by global average pooling to 64 dims.
// Weights are N(0, 1/sqrt(fan_in)) drawn from xoshiro256** seeded with
// 0x5EED'F1D0, layer by layer in flat (out, in, ky, kx) order, via Box-Muller.
// Input images are mapped from [0,1] to [-1,1] first.
class FidFeatureExtractor {
public:
    static constexpr std::uint64_t kSeed = 0x5EEDF1D0ull;
    static constexpr int kFeatureDim = 64;

    FidFeatureExtractor() {
        Rng rng(kSeed);
        const int chans[5] = {1, 8, 16, 32, 64};
        for (int l = 0; l < 4; ++l) {
            const int cin = chans[l], cout = chans[l + 1];
            const double stddev = 1.0 / std::sqrt(static_cast<double>(cin) * 9);
            weights_[l].resize(static_cast<std::size_t>(cout) * cin * 9);
            for (auto& w : weights_[l]) w = rng.normal() * stddev;
        }
    }

    std::vector<double> features(const DepthImage& img) const {
        if (img.height < 16 || img.width < 16)
            throw std::invalid_argument("fid features: image must be at least 16x16");
        const int chans[5] = {1, 8, 16, 32, 64};
        std::vector<double> cur(img.numel());
        for (std::size_t i = 0; i < img.numel(); ++i) cur[i] = 2.0 * img.values[i] - 1.0;
        int h = img.height, w = img.width, cin = 1;
        for (int l = 0; l < 4; ++l) {
            const int cout = chans[l + 1];
            const int oh = (h + 2 - 3) / 2 + 1;
            const int ow = (w + 2 - 3) / 2 + 1;
            std::vector<double> next(static_cast<std::size_t>(cout) * oh * ow, 0.0);
            const std::vector<double>& wt = weights_[l];
            for (int oc = 0; oc < cout; ++oc)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        double acc = 0.0;
                        for (int ic = 0; ic < cin; ++ic)
                            for (int ky = 0; ky < 3; ++ky) {
                                const int iy = oy * 2 + ky - 1;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int ix = ox * 2 + kx - 1;
                                    if (ix < 0 || ix >= w) continue;
                                    acc += wt[((static_cast<std::size_t>(oc) * cin + ic) * 3 + ky) * 3 + kx] *
                                           cur[(static_cast<std::size_t>(ic) * h + iy) * w + ix];
                                }
                            }
                        next[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = std::tanh(acc);
                    }
            cur = std::move(next);
            h = oh;
            w = ow;
            cin = cout;
        }
        std::vector<double> feat(kFeatureDim, 0.0);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (int c = 0; c < kFeatureDim; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += cur[static_cast<std::size_t>(c) * plane + i];
            feat[c] = acc / static_cast<double>(plane);
        }
        return feat;
    }

private:
    std::vector<double> weights_[4];
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues; if vecs != nullptr it receives the eigenvectors in
// columns. Deterministic sweep order.
inline std::vector<double> jacobi_eigen(std::vector<double> m, int n, std::vector<double>* vecs = nullptr) {
    std::vector<double> v;
    if (vecs) {
        v.assign(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
    }
    auto at = [&](std::vector<double>& a, int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(m, i, j) * at(m, i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(m, p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (at(m, q, q) - at(m, p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(m, k, p), akq = at(m, k, q);
                    at(m, k, p) = c * akp - s * akq;
                    at(m, k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(m, p, k), aqk = at(m, q, k);
                    at(m, p, k) = c * apk - s * aqk;
                    at(m, q, k) = s * apk + c * aqk;
                }
                if (vecs)
                    for (int k = 0; k < n; ++k) {
                        const double vkp = at(v, k, p), vkq = at(v, k, q);
                        at(v, k, p) = c * vkp - s * vkq;
                        at(v, k, q) = s * vkp + c * vkq;
                    }
            }
    }
    std::vector<double> eig(n);
    for (int i = 0; i < n; ++i) eig[i] = m[static_cast<std::size_t>(i) * n + i];
    if (vecs) *vecs = std::move(v);
    return eig;
}

// Symmetric PSD square root via eigendecomposition, negative eigenvalues
// clamped to zero.
inline std::vector<double> sqrt_psd(const std::vector<double>& m, int n) {
    std::vector<double> vecs;
    std::vector<double> eig = jacobi_eigen(m, n, &vecs);
    for (double& e : eig) e = std::sqrt(std::max(e, 0.0));
    std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k)
                acc += vecs[static_cast<std::size_t>(i) * n + k] * eig[k] * vecs[static_cast<std::size_t>(j) * n + k];
            out[static_cast<std::size_t>(i) * n + j] = acc;
        }
    return out;
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int n) {
    std::vector<double> c(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const double aik = a[static_cast<std::size_t>(i) * n + k];
            for (int j = 0; j < n; ++j) c[static_cast<std::size_t>(i) * n + j] += aik * b[static_cast<std::size_t>(k) * n + j];
        }
    return c;
}

}  // namespace detail

// Squared Fréchet distance between Gaussians:
//   |mu1 - mu2|^2 + Tr(C1 + C2 - 2 (C1^{1/2} C2 C1^{1/2})^{1/2})
inline double frechet_distance(const std::vector<double>& mu1, const std::vector<double>& c1,
                               const std::vector<double>& mu2, const std::vector<double>& c2) {
    const int n = static_cast<int>(mu1.size());
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = mu1[i] - mu2[i];
        d2 += d * d;
    }
    double tr = 0.0;
    for (int i = 0; i < n; ++i)
        tr += c1[static_cast<std::size_t>(i) * n + i] + c2[static_cast<std::size_t>(i) * n + i];

    const std::vector<double> s1 = detail::sqrt_psd(c1, n);
    std::vector<double> inner = detail::matmul(detail::matmul(s1, c2, n), s1, n);
    // symmetrize against roundoff before the final eigensolve
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double v = 0.5 * (inner[static_cast<std::size_t>(i) * n + j] + inner[static_cast<std::size_t>(j) * n + i]);
            inner[static_cast<std::size_t>(i) * n + j] = v;
            inner[static_cast<std::size_t>(j) * n + i] = v;
        }
    double tr_sqrt = 0.0;
    for (double e : detail::jacobi_eigen(std::move(inner), n)) tr_sqrt += std::sqrt(std::max(e, 0.0));

    double result = d2 + tr - 2.0 * tr_sqrt;
    if (result < 0.0) result = 0.0;  // numerical tolerance clamp
    return result;
}

// Sample mean and (unbiased) covariance with a small ridge for stability.
inline void fit_gaussian(const std::vector<std::vector<double>>& feats, std::vector<double>& mu,
                         std::vector<double>& cov, double ridge = 1e-6) {
    const int n = static_cast<int>(feats.size());
    const int d = static_cast<int>(feats[0].size());
    mu.assign(d, 0.0);
    for (const auto& f : feats)
        for (int i = 0; i < d; ++i) mu[i] += f[i];
    for (int i = 0; i < d; ++i) mu[i] /= n;
    cov.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (const auto& f : feats)
        for (int i = 0; i < d; ++i) {
            const double di = f[i] - mu[i];
            for (int j = 0; j < d; ++j) cov[static_cast<std::size_t>(i) * d + j] += di * (f[j] - mu[j]);
        }
    const double denom = n > 1 ? n - 1 : 1;
    for (auto& v : cov) v /= denom;
    for (int i = 0; i < d; ++i) cov[static_cast<std::size_t>(i) * d + i] += ridge;
}

inline double fid(const std::vector<DepthImage>& set_a, const std::vector<DepthImage>& set_b) {
    if (set_a.size() < 2 || set_b.size() < 2) throw std::invalid_argument("fid: need at least 2 images per set");
    static const FidFeatureExtractor extractor;
    std::vector<std::vector<double>> fa, fb;
    fa.reserve(set_a.size());
    fb.reserve(set_b.size());
    for (const auto& img : set_a) fa.push_back(extractor.features(img));
    for (const auto& img : set_b) fb.push_back(extractor.features(img));
    std::vector<double> mu1, c1, mu2, c2;
    fit_gaussian(fa, mu1, c1);
    fit_gaussian(fb, mu2, c2);
    return frechet_distance(mu1, c1, mu2, c2);
}

// ---------------------------------------------------------------------------

struct MetricReport {
    std::vector<double> psnr_db;  // per image; +inf possible
    std::vector<double> ssim_val;
    double fid_val = 0.0;
    double psnr_mean = 0.0, psnr_std = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0;
};

inline MetricReport evaluate_images(const std::vector<DepthImage>& recon, const std::vector<DepthImage>& truth) {
    if (recon.size() != truth.size() || recon.empty())
        throw std::invalid_argument("evaluate_images: set sizes differ or empty");
    MetricReport rep;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        rep.psnr_db.push_back(psnr(recon[i], truth[i]));
        rep.ssim_val.push_back(ssim(recon[i], truth[i]));
    }
    auto mean_std = [](const std::vector<double>& v, double& m, double& s) {
        m = 0;
        for (double x : v) m += x;
        m /= v.size();
        s = 0;
        for (double x : v) s += (x - m) * (x - m);
        s = v.size() > 1 ? std::sqrt(s / (v.size() - 1)) : 0.0;
    };
    mean_std(rep.psnr_db, rep.psnr_mean, rep.psnr_std);
    mean_std(rep.ssim_val, rep.ssim_mean, rep.ssim_std);
    if (recon.size() >= 2) rep.fid_val = fid(recon, truth);
    return rep;
}

}  // namespace supermag
