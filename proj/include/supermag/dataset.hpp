#pragma once

// Dataset persistence and preprocessing.
//
// File format (little-endian, constant stride, seekable):
//   magic   "SMAG"
//   u16     version (1)
//   u16     image height
//   u16     image width
//   u32     record count
//   records: 48 f32 raw magnetometer values,
//            H*W f32 depth values,
//            metadata block: u32 shape_id, f32 tx, f32 ty, f32 theta_deg,
//                            f32 press_depth, u64 seed  (28 bytes)

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "supermag/rng.hpp"
#include "supermag/types.hpp"

namespace supermag {

static_assert(std::endian::native == std::endian::little, "dataset format is little-endian");

struct RecordMeta {
    std::uint32_t shape_id = 0;
    float tx_mm = 0, ty_mm = 0, theta_deg = 0, press_depth_mm = 0;
    std::uint64_t seed = 0;
};

struct DatasetRecord {
    MagReading mag_raw;  // raw units, clamped to +-500
    DepthImage depth;    // [0,1]
    RecordMeta meta;
};

struct Dataset {
    std::uint16_t image_h = 0;
    std::uint16_t image_w = 0;
    std::vector<DatasetRecord> records;
};

struct BadMagicError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadVersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TruncatedFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
    char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    buf.append(tmp, sizeof(T));
}

template <typename T>
T take(const char*& p, const char* end, const std::string& path) {
    if (p + sizeof(T) > end) throw TruncatedFileError(path + ": truncated dataset file");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::string& path) {
    const std::size_t stride = kReadingLen * 4 + static_cast<std::size_t>(ds.image_h) * ds.image_w * 4 + 28;
    std::string buf;
    buf.reserve(16 + ds.records.size() * stride);
    buf.append("SMAG", 4);
    detail::put<std::uint16_t>(buf, 1);
    detail::put<std::uint16_t>(buf, ds.image_h);
    detail::put<std::uint16_t>(buf, ds.image_w);
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.records.size()));
    for (const DatasetRecord& r : ds.records) {
        if (r.depth.height != ds.image_h || r.depth.width != ds.image_w)
            throw std::invalid_argument(path + ": record image size differs from dataset header");
        for (float v : r.mag_raw.values) detail::put<float>(buf, v);
        for (float v : r.depth.values) detail::put<float>(buf, v);
        detail::put<std::uint32_t>(buf, r.meta.shape_id);
        detail::put<float>(buf, r.meta.tx_mm);
        detail::put<float>(buf, r.meta.ty_mm);
        detail::put<float>(buf, r.meta.theta_deg);
        detail::put<float>(buf, r.meta.press_depth_mm);
        detail::put<std::uint64_t>(buf, r.meta.seed);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(path + ": cannot open for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(path + ": write failed");
}

inline Dataset read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(path + ": cannot open for reading");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const char* p = buf.data();
    const char* end = p + buf.size();

    if (buf.size() < 4 || std::memcmp(p, "SMAG", 4) != 0) throw BadMagicError(path + ": bad magic (not a dataset file)");
    p += 4;
    const auto version = detail::take<std::uint16_t>(p, end, path);
    if (version != 1) throw BadVersionError(path + ": unsupported dataset version " + std::to_string(version));

    Dataset ds;
    ds.image_h = detail::take<std::uint16_t>(p, end, path);
    ds.image_w = detail::take<std::uint16_t>(p, end, path);
    const auto count = detail::take<std::uint32_t>(p, end, path);
    ds.records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        DatasetRecord r;
        r.mag_raw.unit_state = UnitState::raw;
        for (float& v : r.mag_raw.values) v = detail::take<float>(p, end, path);
        r.depth = DepthImage(ds.image_h, ds.image_w);
        for (float& v : r.depth.values) v = detail::take<float>(p, end, path);
        r.meta.shape_id = detail::take<std::uint32_t>(p, end, path);
        r.meta.tx_mm = detail::take<float>(p, end, path);
        r.meta.ty_mm = detail::take<float>(p, end, path);
        r.meta.theta_deg = detail::take<float>(p, end, path);
        r.meta.press_depth_mm = detail::take<float>(p, end, path);
        r.meta.seed = detail::take<std::uint64_t>(p, end, path);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

// v' = clamp(v, -500, 500) / 500 per component.
inline MagReading clamp_normalize(const MagReading& raw) {
    if (raw.unit_state != UnitState::raw)
        throw std::invalid_argument("clamp_normalize: reading already normalized");
    MagReading out;
    out.unit_state = UnitState::normalized;
    for (int i = 0; i < kReadingLen; ++i)
        out.values[i] = std::clamp(raw.values[i], -kRawClamp, kRawClamp) / kRawClamp;
    return out;
}

namespace detail {

// 1-D area-average resample of length src_n to dst_n (src_n >= dst_n).
// Row-major operates on rows of `stride` apart.
inline void box_resample_1d(const float* src, int src_n, std::size_t src_stride, double* dst, int dst_n,
                            std::size_t dst_stride) {
    const double scale = static_cast<double>(src_n) / dst_n;
    for (int i = 0; i < dst_n; ++i) {
        const double lo = i * scale;
        const double hi = (i + 1) * scale;
        const int j0 = static_cast<int>(lo);
        const int j1 = std::min(static_cast<int>(std::ceil(hi)), src_n);
        double acc = 0.0;
        for (int j = j0; j < j1; ++j) {
            const double cover = std::min(hi, static_cast<double>(j + 1)) - std::max(lo, static_cast<double>(j));
            acc += cover * src[static_cast<std::size_t>(j) * src_stride];
        }
        dst[static_cast<std::size_t>(i) * dst_stride] = acc / scale;
    }
}

}  // namespace detail

// Area-weighted mean downsampling (separable box filter). Rejects upsampling.
inline DepthImage downsample_depth(const DepthImage& img, int target_h, int target_w) {
    if (target_h > img.height || target_w > img.width)
        throw std::invalid_argument("downsample_depth: target is larger than the source");
    if (target_h < 1 || target_w < 1) throw std::invalid_argument("downsample_depth: bad target size");

    // rows first (H x W -> target_h x W), then columns
    std::vector<double> mid(static_cast<std::size_t>(target_h) * img.width);
    for (int c = 0; c < img.width; ++c)
        detail::box_resample_1d(img.values.data() + c, img.height, img.width, mid.data() + c, target_h, img.width);

    DepthImage out(target_h, target_w);
    std::vector<double> row(target_w);
    for (int r = 0; r < target_h; ++r) {
        const double* src = mid.data() + static_cast<std::size_t>(r) * img.width;
        std::vector<float> tmp(img.width);
        for (int c = 0; c < img.width; ++c) tmp[c] = static_cast<float>(src[c]);
        detail::box_resample_1d(tmp.data(), img.width, 1, row.data(), target_w, 1);
        for (int c = 0; c < target_w; ++c) out.at(r, c) = static_cast<float>(row[c]);
    }
    return out;
}

// 3x3 median filter with edge replication. Only needed for real VBTS
// captures; synthetic data skips de-noising.
inline DepthImage median3(const DepthImage& img) {
    DepthImage out(img.height, img.width);
    float win[9];
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            int k = 0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = std::clamp(r + dr, 0, img.height - 1);
                    const int cc = std::clamp(c + dc, 0, img.width - 1);
                    win[k++] = img.at(rr, cc);
                }
            std::nth_element(win, win + 4, win + 9);
            out.at(r, c) = win[4];
        }
    return out;
}

// Deterministic 90/10 split by seeded shuffle: first round(n * test_frac)
// shuffled indices are the test set.
struct SplitIndices {
    std::vector<int> train;
    std::vector<int> test;
};

inline SplitIndices split_train_test(int n, double test_frac, std::uint64_t seed) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(idx[i], idx[j]);
    }
    const int n_test = static_cast<int>(std::llround(n * test_frac));
    SplitIndices s;
    s.test.assign(idx.begin(), idx.begin() + n_test);
    s.train.assign(idx.begin() + n_test, idx.end());
    return s;
}

}  // namespace supermag
