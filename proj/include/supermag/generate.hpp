#pragma once

// Paired-data generation: draws poses and press depths per record, rasterizes
// the depth map and simulates the matching raw reading. Each record derives
// its own RNG substream from (seed, record index), so output is byte-identical
// for identical inputs regardless of evaluation order.

#include <cstdint>
#include <string>
#include <vector>

#include "supermag/dataset.hpp"
#include "supermag/simkit.hpp"

namespace supermag {

struct SampleRanges {
    double max_offset_mm = 5.0;        // |tx|, |ty| upper bound
    double press_min_mm = 0.8;
    double press_max_mm = 2.5;
};

inline DatasetRecord generate_record(const ContactShape& shape, const SkinConfig& cfg, const SampleRanges& ranges,
                                     std::uint64_t seed, std::uint64_t index) {
    Rng rng = Rng::substream(seed, index);
    ContactScene scene;
    scene.shape = shape;
    scene.pose.tx_mm = rng.uniform(-ranges.max_offset_mm, ranges.max_offset_mm);
    scene.pose.ty_mm = rng.uniform(-ranges.max_offset_mm, ranges.max_offset_mm);
    scene.pose.theta_deg = rng.uniform(-90.0, 90.0);
    scene.press_depth_mm = rng.uniform(ranges.press_min_mm, ranges.press_max_mm);
    scene.rng_seed = rng.next_u64();

    DatasetRecord rec;
    rec.depth = rasterize_depth(scene, cfg).image;
    rec.mag_raw = simulate_mag(rec.depth, cfg, scene.rng_seed);
    rec.meta.shape_id = shape.id;
    rec.meta.tx_mm = static_cast<float>(scene.pose.tx_mm);
    rec.meta.ty_mm = static_cast<float>(scene.pose.ty_mm);
    rec.meta.theta_deg = static_cast<float>(scene.pose.theta_deg);
    rec.meta.press_depth_mm = static_cast<float>(scene.press_depth_mm);
    rec.meta.seed = scene.rng_seed;
    return rec;
}

inline Dataset generate_records(const std::vector<ContactShape>& shapes, int n_per_shape, const SkinConfig& cfg,
                                std::uint64_t seed, const SampleRanges& ranges = {}) {
    cfg.validate();
    if (n_per_shape < 0) throw std::invalid_argument("generate_records: n_per_shape must be >= 0");
    Dataset ds;
    ds.image_h = static_cast<std::uint16_t>(cfg.image_h);
    ds.image_w = static_cast<std::uint16_t>(cfg.image_w);
    ds.records.reserve(static_cast<std::size_t>(n_per_shape) * shapes.size());
    std::uint64_t index = 0;
    for (const ContactShape& shape : shapes)
        for (int i = 0; i < n_per_shape; ++i, ++index)
            ds.records.push_back(generate_record(shape, cfg, ranges, seed, index));
    return ds;
}

inline Dataset generate_dataset(const std::vector<ContactShape>& shapes, int n_per_shape, const SkinConfig& cfg,
                                std::uint64_t seed, const std::string& path, const SampleRanges& ranges = {}) {
    Dataset ds = generate_records(shapes, n_per_shape, cfg, seed, ranges);
    write_dataset(ds, path);
    return ds;
}

}  // namespace supermag
