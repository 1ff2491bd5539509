#pragma once

// In-hand pose (angle) estimation from reconstructed depth images: outlier
// clipping + Gaussian filtering, PCA principal-axis angle, the 4x4 -> 16x16
// bilinear baseline path, and the reorientation success table.

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "supermag/baseline.hpp"
#include "supermag/types.hpp"

namespace supermag {

// Percentile clipping (nearest-rank) followed by a normalized Gaussian blur
// with replicated edges. Output stays in [0,1].
inline DepthImage denoise(const DepthImage& img, double percentile_clip = 99.5, double blur_sigma = 1.0) {
    DepthImage out = img;
    if (percentile_clip < 100.0 && !img.values.empty()) {
        std::vector<float> sorted = img.values;
        const std::size_t n = sorted.size();
        std::size_t rank = static_cast<std::size_t>(std::ceil(percentile_clip / 100.0 * n));
        rank = std::clamp<std::size_t>(rank, 1, n) - 1;
        std::nth_element(sorted.begin(), sorted.begin() + rank, sorted.end());
        const float cap = sorted[rank];
        for (float& v : out.values) v = std::min(v, cap);
    }
    if (blur_sigma <= 0.0) return out;

    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * blur_sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (blur_sigma * blur_sigma));
        ksum += kernel[i + radius];
    }
    for (double& k : kernel) k /= ksum;

    const int h = img.height, w = img.width;
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * out.at(r, std::clamp(c + i, 0, w - 1));
            tmp[static_cast<std::size_t>(r) * w + c] = acc;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp[static_cast<std::size_t>(std::clamp(r + i, 0, h - 1)) * w + c];
            out.at(r, c) = static_cast<float>(acc);
        }
    return out;
}

enum class PoseError { none, no_contact, degenerate_orientation };

struct AngleEstimate {
    bool ok = false;
    double degrees = 0.0;  // in [-90, 90)
    PoseError error = PoseError::none;
};

inline const char* pose_error_name(PoseError e) {
    switch (e) {
        case PoseError::none: return "none";
        case PoseError::no_contact: return "no contact";
        case PoseError::degenerate_orientation: return "degenerate orientation";
    }
    return "?";
}

// Reduce an angle in degrees into [-90, 90) modulo 180.
inline double wrap_half_turn(double deg) {
    deg = std::fmod(deg, 180.0);
    if (deg < -90.0) deg += 180.0;
    if (deg >= 90.0) deg -= 180.0;
    return deg;
}

// Symmetric mod-180 angular distance, in [0, 90].
inline double angular_distance_deg(double a, double b) { return std::abs(wrap_half_turn(a - b)); }

// Principal-axis angle of the covariance of thresholded pixel coordinates.
// Image rows grow downward, so y = -row to express the angle in the scene
// frame (counterclockwise positive).
inline AngleEstimate estimate_angle(const DepthImage& img, double threshold = 0.2, int min_pixels = 8,
                                    double eig_ratio_min = 1.05) {
    double sx = 0, sy = 0;
    long n = 0;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            if (img.at(r, c) > threshold) {
                sx += c;
                sy += -r;
                ++n;
            }
    if (n < min_pixels) return {false, 0.0, PoseError::no_contact};
    const double mx = sx / n, my = sy / n;
    double cxx = 0, cyy = 0, cxy = 0;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            if (img.at(r, c) > threshold) {
                const double dx = c - mx, dy = -r - my;
                cxx += dx * dx;
                cyy += dy * dy;
                cxy += dx * dy;
            }
    cxx /= n;
    cyy /= n;
    cxy /= n;
    const double half_trace = 0.5 * (cxx + cyy);
    const double det_term = std::sqrt(0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy);
    const double l1 = half_trace + det_term;
    const double l2 = half_trace - det_term;
    if (l1 / std::max(l2, 1e-12) < eig_ratio_min) return {false, 0.0, PoseError::degenerate_orientation};
    const double angle = 0.5 * std::atan2(2.0 * cxy, cxx - cyy) * (180.0 / 3.14159265358979323846);
    return {true, wrap_half_turn(angle), PoseError::none};
}

// Baseline path: z grid -> 16x16 bilinear field, positive part normalized by
// its maximum (background sits near 0, contact near 1), then the same
// denoise + PCA pipeline.
inline ScalarField upsample_zgrid16(const MagReading& normalized) {
    return bilinear_upsample(zaxis_grid(normalized), 16, 16);
}

inline AngleEstimate baseline_pose_path(const MagReading& normalized, double threshold = 0.2) {
    const ScalarField field = upsample_zgrid16(normalized);
    float peak = 0.0f;
    for (float v : field.values) peak = std::max(peak, v);
    DepthImage img(field.height, field.width);
    if (peak > 0.0f)
        for (std::size_t i = 0; i < img.numel(); ++i)
            img.values[i] = std::max(field.values[i], 0.0f) / peak;
    return estimate_angle(denoise(img), threshold);
}

struct PoseTrial {
    int object_id = 0;
    std::string method;
    double true_deg = 0.0;  // reduced into [-90, 90)
    AngleEstimate estimate;
    bool success = false;
};

struct MethodSuccess {
    int trials = 0;
    int successes = 0;
    double rate() const { return trials ? static_cast<double>(successes) / trials : 0.0; }
};

// success <=> estimate ok and |theta_hat - theta*| mod 180 <= tolerance.
// Estimation errors count as failures, never aborts.
inline std::map<std::string, MethodSuccess> evaluate_reorientation(std::vector<PoseTrial>& trials,
                                                                   double tolerance_deg = 5.0) {
    if (trials.empty()) throw std::invalid_argument("evaluate_reorientation: needs at least one trial");
    std::map<std::string, MethodSuccess> table;
    for (PoseTrial& t : trials) {
        t.success = t.estimate.ok && angular_distance_deg(t.estimate.degrees, t.true_deg) <= tolerance_deg;
        MethodSuccess& m = table[t.method];
        ++m.trials;
        if (t.success) ++m.successes;
    }
    return table;
}

}  // namespace supermag
