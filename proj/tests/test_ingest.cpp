#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "supermag/dataset.hpp"
#include "supermag/rng.hpp"

using namespace supermag;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

DatasetRecord random_record(Rng& rng, int h, int w) {
    DatasetRecord r;
    r.mag_raw.unit_state = UnitState::raw;
    for (auto& v : r.mag_raw.values) v = static_cast<float>(rng.uniform(-500, 500));
    r.depth = DepthImage(h, w);
    for (auto& v : r.depth.values) v = static_cast<float>(rng.uniform());
    r.meta = {static_cast<std::uint32_t>(rng.below(7)), static_cast<float>(rng.uniform(-5, 5)),
              static_cast<float>(rng.uniform(-5, 5)), static_cast<float>(rng.uniform(-90, 90)),
              static_cast<float>(rng.uniform(0.8, 2.5)), rng.next_u64()};
    return r;
}

}  // namespace

TEST_CASE("clamp_normalize maps the documented example points", "[ingest]") {
    MagReading raw;
    raw.values[0] = 500.0f;
    raw.values[1] = 0.0f;
    raw.values[2] = -12345.0f;
    raw.values[3] = 250.0f;
    const MagReading n = clamp_normalize(raw);
    REQUIRE(n.unit_state == UnitState::normalized);
    REQUIRE(n.values[0] == 1.0f);
    REQUIRE(n.values[1] == 0.0f);
    REQUIRE(n.values[2] == -1.0f);
    REQUIRE(n.values[3] == 0.5f);
    REQUIRE_THROWS_AS(clamp_normalize(n), std::invalid_argument);
}

TEST_CASE("clamp then scale is a retraction", "[ingest]") {
    Rng rng(3);
    MagReading raw;
    for (auto& v : raw.values) v = static_cast<float>(rng.uniform(-800, 800));
    const MagReading once = clamp_normalize(raw);
    MagReading re;
    re.unit_state = UnitState::raw;
    for (int i = 0; i < kReadingLen; ++i) re.values[i] = once.values[i] * kRawClamp;
    const MagReading twice = clamp_normalize(re);
    REQUIRE(once.values == twice.values);
}

TEST_CASE("downsample preserves constants and dimensions", "[ingest]") {
    DepthImage img(325, 325, 0.37f);
    const DepthImage out = downsample_depth(img, 200, 200);
    REQUIRE(out.height == 200);
    REQUIRE(out.width == 200);
    for (float v : out.values) REQUIRE(v == Catch::Approx(0.37f).margin(1e-6));
}

TEST_CASE("downsample averages a checkerboard to one half", "[ingest]") {
    DepthImage img(4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) img.at(r, c) = static_cast<float>((r + c) % 2);
    const DepthImage out = downsample_depth(img, 2, 2);
    for (float v : out.values) REQUIRE(v == Catch::Approx(0.5f).margin(1e-7));
}

TEST_CASE("downsample preserves the global mean for integer factors", "[ingest]") {
    Rng rng(11);
    DepthImage img(36, 24);
    double mean_in = 0;
    for (auto& v : img.values) {
        v = static_cast<float>(rng.uniform());
        mean_in += v;
    }
    mean_in /= img.numel();
    const DepthImage out = downsample_depth(img, 12, 8);
    double mean_out = 0;
    for (float v : out.values) mean_out += v;
    mean_out /= out.numel();
    REQUIRE(mean_out == Catch::Approx(mean_in).margin(1e-6));
}

TEST_CASE("downsample rejects upsampling", "[ingest]") {
    DepthImage img(10, 10);
    REQUIRE_THROWS_AS(downsample_depth(img, 20, 10), std::invalid_argument);
}

TEST_CASE("median filter removes a lone spike and keeps constants", "[ingest]") {
    DepthImage img(9, 9, 0.25f);
    img.at(4, 4) = 1.0f;
    const DepthImage out = median3(img);
    REQUIRE(out.at(4, 4) == 0.25f);
    DepthImage flat(5, 5, 0.6f);
    const DepthImage out2 = median3(flat);
    REQUIRE(out2.values == flat.values);
}

TEST_CASE("dataset round-trips bit-exactly", "[ingest]") {
    const std::string path = temp_path("supermag_ingest_rt.smag");
    Rng rng(21);
    Dataset ds;
    ds.image_h = ds.image_w = 12;
    for (int i = 0; i < 17; ++i) ds.records.push_back(random_record(rng, 12, 12));
    write_dataset(ds, path);
    const Dataset back = read_dataset(path);
    REQUIRE(back.image_h == 12);
    REQUIRE(back.records.size() == ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        REQUIRE(back.records[i].mag_raw.values == ds.records[i].mag_raw.values);
        REQUIRE(back.records[i].depth.values == ds.records[i].depth.values);
        REQUIRE(back.records[i].meta.shape_id == ds.records[i].meta.shape_id);
        REQUIRE(back.records[i].meta.seed == ds.records[i].meta.seed);
        REQUIRE(back.records[i].meta.theta_deg == ds.records[i].meta.theta_deg);
    }

    // byte-identical on rewrite
    write_dataset(back, path + ".2");
    std::ifstream f1(path, std::ios::binary), f2(path + ".2", std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
    std::remove(path.c_str());
    std::remove((path + ".2").c_str());
}

TEST_CASE("empty dataset round-trips", "[ingest]") {
    const std::string path = temp_path("supermag_ingest_empty.smag");
    Dataset ds;
    ds.image_h = ds.image_w = 64;
    write_dataset(ds, path);
    const Dataset back = read_dataset(path);
    REQUIRE(back.records.empty());
    REQUIRE(back.image_w == 64);
    std::remove(path.c_str());
}

TEST_CASE("a 3645-record file reports count 3645", "[ingest]") {
    const std::string path = temp_path("supermag_ingest_big.smag");
    Rng rng(5);
    Dataset ds;
    ds.image_h = ds.image_w = 8;
    ds.records.reserve(3645);
    for (int i = 0; i < 3645; ++i) ds.records.push_back(random_record(rng, 8, 8));
    write_dataset(ds, path);
    REQUIRE(read_dataset(path).records.size() == 3645);
    std::remove(path.c_str());
}

TEST_CASE("malformed files raise distinct errors", "[ingest]") {
    const std::string path = temp_path("supermag_ingest_bad.smag");

    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f << "NOPE correct garbage";
    }
    REQUIRE_THROWS_AS(read_dataset(path), BadMagicError);

    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        const char bytes[] = {'S', 'M', 'A', 'G', 9, 0};
        f.write(bytes, sizeof bytes);
    }
    REQUIRE_THROWS_AS(read_dataset(path), BadVersionError);

    {
        Dataset ds;
        ds.image_h = ds.image_w = 8;
        Rng rng(1);
        ds.records.push_back(random_record(rng, 8, 8));
        write_dataset(ds, path);
        // chop the tail off
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
    }
    REQUIRE_THROWS_AS(read_dataset(path), TruncatedFileError);
    std::remove(path.c_str());
}

TEST_CASE("train/test split is deterministic and proportional", "[ingest]") {
    const SplitIndices a = split_train_test(2025, 0.1, 9);
    const SplitIndices b = split_train_test(2025, 0.1, 9);
    REQUIRE(a.test.size() == 203);  // round(202.5)
    REQUIRE(a.train.size() == 1822);
    REQUIRE(a.test == b.test);
    REQUIRE(a.train == b.train);

    // partitions the index set
    std::vector<bool> seen(2025, false);
    for (int i : a.train) seen[i] = true;
    for (int i : a.test) {
        REQUIRE_FALSE(seen[i]);
        seen[i] = true;
    }
    for (bool s : seen) REQUIRE(s);

    const SplitIndices c = split_train_test(2025, 0.1, 10);
    REQUIRE(c.test != a.test);
}
