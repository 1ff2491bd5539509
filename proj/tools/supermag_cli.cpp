// supermag: single executable orchestrating dataset generation, training,
// reconstruction, evaluation, pose experiments and wire-stream decoding.
//
// Every subcommand takes a key=value config file (--config) overridable by
// flags, seeds all randomness from --seed, and writes a manifest with the
// fully resolved settings next to its outputs so any run can be repeated
// bit-identically.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "supermag/baseline.hpp"
#include "supermag/config.hpp"
#include "supermag/dataset.hpp"
#include "supermag/generate.hpp"
#include "supermag/metrics.hpp"
#include "supermag/model.hpp"
#include "supermag/pgm.hpp"
#include "supermag/pose.hpp"
#include "supermag/simkit.hpp"
#include "supermag/wire.hpp"

namespace fs = std::filesystem;
using namespace supermag;

namespace {

constexpr const char* kVersion = "1.0.0";

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_manifest(const KvMap& kv, const std::string& out_dir) {
    save_kv(kv, (fs::path(out_dir) / "manifest.txt").string());
}

void ensure_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error(out_dir + ": cannot create output directory: " + ec.message());
}

SkinConfig skin_from_kv(const KvMap& kv) {
    SkinConfig c;
    c.active_area_mm = kv_double(kv, "active_area", c.active_area_mm);
    c.skin_thickness_mm = kv_double(kv, "skin_thickness", c.skin_thickness_mm);
    c.taxel_grid = static_cast<int>(kv_int(kv, "taxel_grid", c.taxel_grid));
    c.taxel_pitch_mm = kv_double(kv, "taxel_pitch", c.taxel_pitch_mm);
    c.sensor_plane_offset_mm = kv_double(kv, "sensor_plane_offset", c.sensor_plane_offset_mm);
    c.dipole_grid = static_cast<int>(kv_int(kv, "dipole_grid", c.dipole_grid));
    c.dipole_moment = kv_double(kv, "dipole_moment", c.dipole_moment);
    c.image_h = static_cast<int>(kv_int(kv, "image_h", c.image_h));
    c.image_w = static_cast<int>(kv_int(kv, "image_w", c.image_w));
    c.raw_scale = kv_double(kv, "raw_scale", c.raw_scale);
    c.noise_std = kv_double(kv, "noise_std", c.noise_std);
    c.edge_width_mm = kv_double(kv, "edge_width", c.edge_width_mm);
    return c;
}

void skin_to_kv(const SkinConfig& c, KvMap& kv) {
    kv["active_area"] = fmt(c.active_area_mm);
    kv["skin_thickness"] = fmt(c.skin_thickness_mm);
    kv["taxel_grid"] = std::to_string(c.taxel_grid);
    kv["taxel_pitch"] = fmt(c.taxel_pitch_mm);
    kv["sensor_plane_offset"] = fmt(c.sensor_plane_offset_mm);
    kv["dipole_grid"] = std::to_string(c.dipole_grid);
    kv["dipole_moment"] = fmt(c.dipole_moment);
    kv["image_h"] = std::to_string(c.image_h);
    kv["image_w"] = std::to_string(c.image_w);
    kv["raw_scale"] = fmt(c.raw_scale);
    kv["noise_std"] = fmt(c.noise_std);
    kv["edge_width"] = fmt(c.edge_width_mm);
}

CvaeConfig cvae_from_kv(const KvMap& kv) {
    CvaeConfig c;
    c.latent_dim = static_cast<int>(kv_int(kv, "latent_dim", c.latent_dim));
    c.cond_embed_dim = static_cast<int>(kv_int(kv, "cond_embed_dim", c.cond_embed_dim));
    c.cond_hidden = static_cast<int>(kv_int(kv, "cond_hidden", c.cond_hidden));
    c.enc_fc_hidden = static_cast<int>(kv_int(kv, "enc_fc_hidden", c.enc_fc_hidden));
    c.dec_start_channels = static_cast<int>(kv_int(kv, "dec_start_channels", c.dec_start_channels));
    if (auto it = kv.find("enc_widths"); it != kv.end()) {
        auto parts = split_csv(it->second);
        if (parts.size() != 6) throw std::runtime_error("enc_widths: expected 6 comma-separated values");
        for (int i = 0; i < 6; ++i) c.enc_widths[i] = std::stoi(parts[i]);
    }
    if (auto it = kv.find("dec_widths"); it != kv.end()) {
        auto parts = split_csv(it->second);
        if (parts.size() != 4) throw std::runtime_error("dec_widths: expected 4 comma-separated values");
        for (int i = 0; i < 4; ++i) c.dec_widths[i] = std::stoi(parts[i]);
    }
    c.beta = static_cast<float>(kv_double(kv, "beta", c.beta));
    c.logvar_min = static_cast<float>(kv_double(kv, "logvar_min", c.logvar_min));
    c.logvar_max = static_cast<float>(kv_double(kv, "logvar_max", c.logvar_max));
    c.lr = static_cast<float>(kv_double(kv, "lr", c.lr));
    c.adam_beta1 = static_cast<float>(kv_double(kv, "adam_beta1", c.adam_beta1));
    c.adam_beta2 = static_cast<float>(kv_double(kv, "adam_beta2", c.adam_beta2));
    c.weight_decay = static_cast<float>(kv_double(kv, "weight_decay", c.weight_decay));
    c.epochs = static_cast<int>(kv_int(kv, "epochs", c.epochs));
    c.batch_size = static_cast<int>(kv_int(kv, "batch_size", c.batch_size));
    c.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", static_cast<std::int64_t>(c.seed)));
    c.zaxis_only = kv_bool(kv, "zaxis_only", c.zaxis_only);
    return c;
}

void cvae_to_kv(const CvaeConfig& c, KvMap& kv) {
    kv["image_h"] = std::to_string(c.image_h);
    kv["image_w"] = std::to_string(c.image_w);
    kv["latent_dim"] = std::to_string(c.latent_dim);
    kv["cond_embed_dim"] = std::to_string(c.cond_embed_dim);
    kv["cond_hidden"] = std::to_string(c.cond_hidden);
    kv["enc_fc_hidden"] = std::to_string(c.enc_fc_hidden);
    kv["dec_start_channels"] = std::to_string(c.dec_start_channels);
    std::string ew, dw;
    for (int i = 0; i < 6; ++i) ew += (i ? "," : "") + std::to_string(c.enc_widths[i]);
    for (int i = 0; i < 4; ++i) dw += (i ? "," : "") + std::to_string(c.dec_widths[i]);
    kv["enc_widths"] = ew;
    kv["dec_widths"] = dw;
    kv["beta"] = fmt(c.beta);
    kv["logvar_min"] = fmt(c.logvar_min);
    kv["logvar_max"] = fmt(c.logvar_max);
    kv["lr"] = fmt(c.lr);
    kv["adam_beta1"] = fmt(c.adam_beta1);
    kv["adam_beta2"] = fmt(c.adam_beta2);
    kv["weight_decay"] = fmt(c.weight_decay);
    kv["epochs"] = std::to_string(c.epochs);
    kv["batch_size"] = std::to_string(c.batch_size);
    kv["seed"] = std::to_string(c.seed);
    kv["zaxis_only"] = c.zaxis_only ? "1" : "0";
}

std::vector<int> pick_split(int n, const std::string& which, std::uint64_t split_seed) {
    if (which == "all") {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        return idx;
    }
    SplitIndices s = split_train_test(n, 0.1, split_seed);
    if (which == "train") return s.train;
    if (which == "test") return s.test;
    throw std::runtime_error("--split must be train, test or all");
}

DepthImage reconstruct_record(const Cvae<float>* model, const DatasetRecord& rec, const std::string& method,
                              bool stochastic, std::uint64_t eps_seed) {
    const MagReading nm = clamp_normalize(rec.mag_raw);
    if (method == "cvae") {
        if (!model) throw std::runtime_error("--method cvae requires --ckpt");
        return model->reconstruct(nm, stochastic ? Cvae<float>::ReconMode::stochastic : Cvae<float>::ReconMode::deterministic,
                                  eps_seed);
    }
    const TaxelGrid grid = zaxis_grid(nm);
    if (method == "bilinear") return to_unit_range(bilinear_upsample(grid, rec.depth.height, rec.depth.width));
    if (method == "bicubic") return to_unit_range(bicubic_upsample(grid, rec.depth.height, rec.depth.width));
    throw std::runtime_error("--method must be cvae, bilinear or bicubic");
}

// ---------------------------------------------------------------------------

int cmd_gen(const KvMap& kv, const std::string& out_dir, const std::string& shapes_csv, int n_per_shape,
            std::uint64_t seed) {
    ensure_out_dir(out_dir);
    SkinConfig cfg = skin_from_kv(kv);
    SampleRanges ranges;
    ranges.max_offset_mm = kv_double(kv, "max_offset", ranges.max_offset_mm);
    ranges.press_min_mm = kv_double(kv, "press_min", ranges.press_min_mm);
    ranges.press_max_mm = kv_double(kv, "press_max", ranges.press_max_mm);

    std::vector<ContactShape> shapes;
    for (const std::string& name : split_csv(shapes_csv)) shapes.push_back(shape_by_name(name));
    if (shapes.empty()) throw std::runtime_error("gen: no shapes given");

    const std::string data_path = (fs::path(out_dir) / "dataset.smag").string();
    Dataset ds = generate_dataset(shapes, n_per_shape, cfg, seed, data_path, ranges);

    KvMap manifest;
    manifest["command"] = "gen";
    manifest["version"] = kVersion;
    manifest["shapes"] = shapes_csv;
    manifest["n_per_shape"] = std::to_string(n_per_shape);
    manifest["seed"] = std::to_string(seed);
    manifest["max_offset"] = fmt(ranges.max_offset_mm);
    manifest["press_min"] = fmt(ranges.press_min_mm);
    manifest["press_max"] = fmt(ranges.press_max_mm);
    skin_to_kv(cfg, manifest);
    write_manifest(manifest, out_dir);

    std::printf("gen: wrote %zu records (%dx%d) to %s\n", ds.records.size(), cfg.image_h, cfg.image_w, data_path.c_str());
    return 0;
}

int cmd_train(const KvMap& kv, const std::string& data_path, const std::string& out_dir, const std::string& shapes_csv,
              const std::string& split, std::uint64_t split_seed) {
    ensure_out_dir(out_dir);
    Dataset ds = read_dataset(data_path);
    if (ds.records.empty()) throw std::runtime_error(data_path + ": dataset has no records");

    CvaeConfig cfg = cvae_from_kv(kv);
    cfg.image_h = ds.image_h;
    cfg.image_w = ds.image_w;

    std::vector<std::uint32_t> keep_ids;
    for (const std::string& name : split_csv(shapes_csv)) keep_ids.push_back(shape_by_name(name).id);

    std::vector<const DatasetRecord*> records;
    for (int i : pick_split(static_cast<int>(ds.records.size()), split, split_seed)) {
        const DatasetRecord& r = ds.records[i];
        if (!keep_ids.empty() &&
            std::find(keep_ids.begin(), keep_ids.end(), r.meta.shape_id) == keep_ids.end())
            continue;
        records.push_back(&r);
    }
    if (records.empty()) throw std::runtime_error("train: no records left after split/shape filtering");
    std::printf("train: %zu records, %d epochs, latent %d, beta %g%s\n", records.size(), cfg.epochs, cfg.latent_dim,
                static_cast<double>(cfg.beta), cfg.zaxis_only ? ", z-axis only" : "");

    Cvae<float> model(cfg);
    Cvae<float>::TrainOptions opts;
    opts.on_epoch = [&](int e, const LossBreakdown& lb) {
        std::printf("epoch %d: nll=%.3f kl=%.3f total=%.3f\n", e + 1, lb.nll, lb.kl, lb.total);
        std::fflush(stdout);
    };
    const auto history = model.train(records, opts);

    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.smck").string();
    model.save(ckpt_path);

    std::ofstream hist((fs::path(out_dir) / "loss_history.csv").string(), std::ios::trunc);
    hist << "epoch,nll,kl,total\n";
    for (std::size_t e = 0; e < history.size(); ++e) {
        char line[160];
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g\n", e + 1, history[e].nll, history[e].kl, history[e].total);
        hist << line;
    }

    KvMap manifest;
    manifest["command"] = "train";
    manifest["version"] = kVersion;
    manifest["data"] = data_path;
    manifest["split"] = split;
    manifest["split_seed"] = std::to_string(split_seed);
    manifest["shapes_filter"] = shapes_csv;
    cvae_to_kv(cfg, manifest);
    write_manifest(manifest, out_dir);

    std::printf("train: checkpoint %s (final total %.3f)\n", ckpt_path.c_str(), history.back().total);
    return 0;
}

int cmd_recon(const std::string& data_path, const std::string& ckpt_path, const std::string& out_dir,
              const std::string& method, const std::string& split, std::uint64_t split_seed, int count, bool stochastic,
              std::uint64_t seed) {
    ensure_out_dir(out_dir);
    Dataset ds = read_dataset(data_path);
    std::unique_ptr<Cvae<float>> model;
    if (!ckpt_path.empty()) model = std::make_unique<Cvae<float>>(Cvae<float>::load(ckpt_path));
    std::vector<int> idx = pick_split(static_cast<int>(ds.records.size()), split, split_seed);
    if (count > 0 && count < static_cast<int>(idx.size())) idx.resize(count);

    for (std::size_t k = 0; k < idx.size(); ++k) {
        const DatasetRecord& rec = ds.records[idx[k]];
        char name[64];
        std::snprintf(name, sizeof name, "gt_%04zu.pgm", k);
        write_pgm16(rec.depth, (fs::path(out_dir) / name).string());
        std::snprintf(name, sizeof name, "recon_%04zu.pgm", k);
        write_pgm16(reconstruct_record(model.get(), rec, method, stochastic, seed + k),
                    (fs::path(out_dir) / name).string());
    }

    KvMap manifest;
    manifest["command"] = "recon";
    manifest["version"] = kVersion;
    manifest["data"] = data_path;
    manifest["ckpt"] = ckpt_path;
    manifest["method"] = method;
    manifest["split"] = split;
    manifest["split_seed"] = std::to_string(split_seed);
    manifest["count"] = std::to_string(static_cast<int>(idx.size()));
    manifest["mode"] = stochastic ? "stochastic" : "deterministic";
    manifest["seed"] = std::to_string(seed);
    write_manifest(manifest, out_dir);

    std::printf("recon: wrote %zu image pairs (%s) to %s\n", idx.size(), method.c_str(), out_dir.c_str());
    return 0;
}

struct EvalRow {
    std::string label;
    MetricReport report;
};

int cmd_eval(const std::string& data_path, const std::string& out_dir, const std::string& ckpt,
             const std::string& ckpt_zaxis, const std::string& ckpt_single, const std::string& split,
             std::uint64_t split_seed) {
    ensure_out_dir(out_dir);
    Dataset ds = read_dataset(data_path);
    std::vector<int> idx = pick_split(static_cast<int>(ds.records.size()), split, split_seed);
    if (idx.size() < 2) throw std::runtime_error("eval: need at least 2 evaluation records");

    std::vector<DepthImage> truth;
    truth.reserve(idx.size());
    for (int i : idx) truth.push_back(ds.records[i].depth);

    auto recon_set = [&](const Cvae<float>& model) {
        std::vector<DepthImage> out;
        out.reserve(idx.size());
        for (int i : idx)
            out.push_back(model.reconstruct(clamp_normalize(ds.records[i].mag_raw), Cvae<float>::ReconMode::deterministic));
        return out;
    };

    std::vector<EvalRow> rows;
    {
        std::vector<DepthImage> bil, bic;
        for (int i : idx) {
            const DatasetRecord& rec = ds.records[i];
            const TaxelGrid grid = zaxis_grid(clamp_normalize(rec.mag_raw));
            bil.push_back(to_unit_range(bilinear_upsample(grid, rec.depth.height, rec.depth.width)));
            bic.push_back(to_unit_range(bicubic_upsample(grid, rec.depth.height, rec.depth.width)));
        }
        rows.push_back({"Bilinear", evaluate_images(bil, truth)});
        rows.push_back({"Bicubic", evaluate_images(bic, truth)});
    }
    if (!ckpt_zaxis.empty()) {
        Cvae<float> m = Cvae<float>::load(ckpt_zaxis);
        rows.push_back({"SuperMag (z-axis)", evaluate_images(recon_set(m), truth)});
    }
    if (!ckpt_single.empty()) {
        Cvae<float> m = Cvae<float>::load(ckpt_single);
        rows.push_back({"SuperMag (single-shape)", evaluate_images(recon_set(m), truth)});
    }
    if (!ckpt.empty()) {
        Cvae<float> m = Cvae<float>::load(ckpt);
        rows.push_back({"SuperMag (full)", evaluate_images(recon_set(m), truth)});
    }

    std::ostringstream table;
    table << "Method                  | FID      | PSNR [dB]       | SSIM\n";
    table << "------------------------+----------+-----------------+---------------\n";
    KvMap report;
    for (const EvalRow& row : rows) {
        char line[160];
        std::snprintf(line, sizeof line, "%-23s | %8.3f | %6.2f +- %5.2f | %5.3f +- %5.3f\n", row.label.c_str(),
                      row.report.fid_val, row.report.psnr_mean, row.report.psnr_std, row.report.ssim_mean,
                      row.report.ssim_std);
        table << line;
        std::string key = row.label;
        for (char& ch : key) {
            if (ch == ' ' || ch == '(' || ch == ')' || ch == '-') ch = '_';
            ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        }
        report[key + ".fid"] = fmt(row.report.fid_val);
        report[key + ".psnr_mean"] = fmt(row.report.psnr_mean);
        report[key + ".psnr_std"] = fmt(row.report.psnr_std);
        report[key + ".ssim_mean"] = fmt(row.report.ssim_mean);
        report[key + ".ssim_std"] = fmt(row.report.ssim_std);
    }
    report["n_eval"] = std::to_string(static_cast<int>(idx.size()));

    std::cout << table.str();
    std::ofstream tf((fs::path(out_dir) / "table.txt").string(), std::ios::trunc);
    tf << table.str();
    save_kv(report, (fs::path(out_dir) / "report.txt").string());

    KvMap manifest;
    manifest["command"] = "eval";
    manifest["version"] = kVersion;
    manifest["data"] = data_path;
    manifest["ckpt"] = ckpt;
    manifest["ckpt_zaxis"] = ckpt_zaxis;
    manifest["ckpt_single"] = ckpt_single;
    manifest["split"] = split;
    manifest["split_seed"] = std::to_string(split_seed);
    write_manifest(manifest, out_dir);
    return 0;
}

int cmd_pose(const KvMap& kv, const std::string& ckpt_path, const std::string& out_dir, const std::string& rods_csv,
             const std::string& angles_csv, double tolerance_deg, double press_mm, std::uint64_t seed) {
    ensure_out_dir(out_dir);
    Cvae<float> model = Cvae<float>::load(ckpt_path);
    SkinConfig cfg = skin_from_kv(kv);
    cfg.image_h = model.config().image_h;
    cfg.image_w = model.config().image_w;

    std::vector<PoseTrial> trials;
    std::ostringstream detail;
    detail << "object,true_deg,method,ok,est_deg,error\n";
    int object_id = 0;
    std::uint64_t trial_seed = seed;
    for (const std::string& rod : split_csv(rods_csv)) {
        ++object_id;
        for (const std::string& as : split_csv(angles_csv)) {
            const double angle = wrap_half_turn(std::stod(as));
            ContactScene scene;
            scene.shape = shape_by_name(rod);
            scene.pose.theta_deg = angle;
            scene.press_depth_mm = press_mm;
            const RasterResult ras = rasterize_depth(scene, cfg);
            const MagReading raw = simulate_mag(ras.image, cfg, ++trial_seed);
            const MagReading nm = clamp_normalize(raw);

            PoseTrial cvae_trial;
            cvae_trial.object_id = object_id;
            cvae_trial.method = "cvae";
            cvae_trial.true_deg = angle;
            cvae_trial.estimate =
                estimate_angle(denoise(model.reconstruct(nm, Cvae<float>::ReconMode::deterministic)));
            trials.push_back(cvae_trial);

            PoseTrial base_trial = cvae_trial;
            base_trial.method = "bilinear16";
            base_trial.estimate = baseline_pose_path(nm);
            trials.push_back(base_trial);
        }
    }
    const auto table = evaluate_reorientation(trials, tolerance_deg);
    for (const PoseTrial& t : trials) {
        char line[160];
        std::snprintf(line, sizeof line, "%d,%.3f,%s,%d,%.3f,%s\n", t.object_id, t.true_deg, t.method.c_str(),
                      t.estimate.ok ? 1 : 0, t.estimate.ok ? t.estimate.degrees : 0.0, pose_error_name(t.estimate.error));
        detail << line;
    }

    std::ostringstream summary;
    summary << "method,successes,trials,rate\n";
    for (const auto& [method, ms] : table) {
        char line[128];
        std::snprintf(line, sizeof line, "%s,%d,%d,%.4f\n", method.c_str(), ms.successes, ms.trials, ms.rate());
        summary << line;
        std::printf("pose %-12s %d/%d (%.1f%%)\n", method.c_str(), ms.successes, ms.trials, 100.0 * ms.rate());
    }
    std::ofstream df((fs::path(out_dir) / "trials.csv").string(), std::ios::trunc);
    df << detail.str();
    std::ofstream sf((fs::path(out_dir) / "success.csv").string(), std::ios::trunc);
    sf << summary.str();

    KvMap manifest;
    manifest["command"] = "pose";
    manifest["version"] = kVersion;
    manifest["ckpt"] = ckpt_path;
    manifest["rods"] = rods_csv;
    manifest["angles"] = angles_csv;
    manifest["tolerance_deg"] = fmt(tolerance_deg);
    manifest["press"] = fmt(press_mm);
    manifest["seed"] = std::to_string(seed);
    skin_to_kv(cfg, manifest);
    write_manifest(manifest, out_dir);
    return 0;
}

int cmd_stream(const std::string& in_path, const std::string& out_dir, const std::string& ckpt_path, int max_frames) {
    ensure_out_dir(out_dir);
    std::vector<std::uint8_t> bytes;
    if (in_path == "-") {
        std::string all((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
        bytes.assign(all.begin(), all.end());
    } else {
        std::ifstream f(in_path, std::ios::binary);
        if (!f) throw std::runtime_error(in_path + ": cannot open stream file");
        std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        bytes.assign(all.begin(), all.end());
    }
    auto [frames, stats] = decode_stream(bytes);
    if (max_frames > 0 && static_cast<int>(frames.size()) > max_frames) frames.resize(max_frames);

    std::ofstream rf((fs::path(out_dir) / "readings.csv").string(), std::ios::trunc);
    rf << "seq";
    for (int i = 0; i < kReadingLen; ++i) rf << ",v" << i;
    rf << "\n";
    for (const auto& [seq, reading] : frames) {
        rf << seq;
        for (float v : reading.values) {
            char buf[32];
            std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v));
            rf << buf;
        }
        rf << "\n";
    }

    KvMap report;
    report["frames_decoded"] = std::to_string(stats.frames_decoded);
    report["crc_errors"] = std::to_string(stats.crc_errors);
    report["bytes_skipped"] = std::to_string(stats.bytes_skipped);
    std::printf("stream: %llu frames, %llu crc errors, %llu bytes skipped\n",
                static_cast<unsigned long long>(stats.frames_decoded),
                static_cast<unsigned long long>(stats.crc_errors),
                static_cast<unsigned long long>(stats.bytes_skipped));

    if (!ckpt_path.empty() && !frames.empty()) {
        Cvae<float> model = Cvae<float>::load(ckpt_path);
        double total_ms = 0, max_ms = 0;
        for (const auto& [seq, reading] : frames) {
            const MagReading nm = clamp_normalize(reading);
            const auto t0 = std::chrono::steady_clock::now();
            volatile float sink = model.reconstruct(nm, Cvae<float>::ReconMode::deterministic).values[0];
            (void)sink;
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            total_ms += ms;
            max_ms = std::max(max_ms, ms);
        }
        const double mean_ms = total_ms / frames.size();
        report["recon_latency_mean_ms"] = fmt(mean_ms);
        report["recon_latency_max_ms"] = fmt(max_ms);
        std::printf("stream: reconstruction latency mean %.2f ms, max %.2f ms over %zu readings\n", mean_ms, max_ms,
                    frames.size());
    }
    save_kv(report, (fs::path(out_dir) / "stream_report.txt").string());

    KvMap manifest;
    manifest["command"] = "stream";
    manifest["version"] = kVersion;
    manifest["in"] = in_path;
    manifest["ckpt"] = ckpt_path;
    manifest["max_frames"] = std::to_string(max_frames);
    write_manifest(manifest, out_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"supermag: tactile super-resolution pipeline (simulator, CVAE, baselines, metrics, pose)"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::uint64_t seed = 0;

    // gen
    auto* gen = app.add_subcommand("gen", "generate a paired (reading, depth) dataset");
    std::string gen_shapes = "lshape,glyph_r";
    int gen_n = 256, gen_image = 0;
    gen->add_option("--config", config_path, "key=value config file");
    gen->add_option("--out", out_dir, "output directory");
    gen->add_option("--shapes", gen_shapes, "comma-separated shape names");
    gen->add_option("--n", gen_n, "records per shape");
    gen->add_option("--seed", seed, "master seed");
    gen->add_option("--image-size", gen_image, "square depth image size");

    // train
    auto* train = app.add_subcommand("train", "train the CVAE on a dataset");
    std::string tr_data, tr_shapes, tr_split = "train";
    std::uint64_t tr_split_seed = 42;
    int tr_epochs = -1, tr_latent = -1;
    double tr_lr = -1;
    bool tr_zaxis = false;
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--data", tr_data, "dataset file")->required();
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--epochs", tr_epochs, "training epochs");
    train->add_option("--lr", tr_lr, "learning rate");
    train->add_option("--latent-dim", tr_latent, "latent dimension");
    train->add_option("--seed", seed, "training seed");
    train->add_flag("--zaxis-only", tr_zaxis, "zero-mask x/y axes before embedding (ablation)");
    train->add_option("--shapes", tr_shapes, "train only on these shapes (ablation)");
    train->add_option("--split", tr_split, "train|test|all (default train)");
    train->add_option("--split-seed", tr_split_seed, "90/10 split seed");

    // recon
    auto* recon = app.add_subcommand("recon", "write reconstruction/ground-truth image pairs");
    std::string rc_data, rc_ckpt, rc_method = "cvae", rc_split = "test";
    std::uint64_t rc_split_seed = 42;
    int rc_count = 16;
    bool rc_stochastic = false;
    recon->add_option("--data", rc_data, "dataset file")->required();
    recon->add_option("--ckpt", rc_ckpt, "checkpoint (required for --method cvae)");
    recon->add_option("--out", out_dir, "output directory");
    recon->add_option("--method", rc_method, "cvae|bilinear|bicubic");
    recon->add_option("--count", rc_count, "max pairs to write (0 = all)");
    recon->add_option("--split", rc_split, "train|test|all (default test)");
    recon->add_option("--split-seed", rc_split_seed, "90/10 split seed");
    recon->add_flag("--stochastic", rc_stochastic, "sample z from the prior instead of z = 0");
    recon->add_option("--seed", seed, "stochastic draw seed");

    // eval
    auto* eval = app.add_subcommand("eval", "metric table over a held-out split");
    std::string ev_data, ev_ckpt, ev_ckpt_zaxis, ev_ckpt_single, ev_split = "test";
    std::uint64_t ev_split_seed = 42;
    eval->add_option("--data", ev_data, "dataset file")->required();
    eval->add_option("--out", out_dir, "output directory");
    eval->add_option("--ckpt", ev_ckpt, "full-model checkpoint");
    eval->add_option("--ckpt-zaxis", ev_ckpt_zaxis, "z-axis ablation checkpoint");
    eval->add_option("--ckpt-single", ev_ckpt_single, "single-shape ablation checkpoint");
    eval->add_option("--split", ev_split, "train|test|all (default test)");
    eval->add_option("--split-seed", ev_split_seed, "90/10 split seed");

    // pose
    auto* pose = app.add_subcommand("pose", "rod reorientation experiment");
    std::string po_ckpt, po_rods = "rod_thin,rod_mid,rod_wide", po_angles = "-60,-20,25,70";
    double po_tol = 5.0, po_press = 2.0;
    pose->add_option("--config", config_path, "key=value config file (skin parameters)");
    pose->add_option("--ckpt", po_ckpt, "checkpoint")->required();
    pose->add_option("--out", out_dir, "output directory");
    pose->add_option("--rods", po_rods, "comma-separated rod shape names");
    pose->add_option("--angles", po_angles, "comma-separated true angles (deg)");
    pose->add_option("--tolerance-deg", po_tol, "success tolerance (deg)");
    pose->add_option("--press", po_press, "press depth (mm)");
    pose->add_option("--seed", seed, "noise seed");

    // stream
    auto* stream = app.add_subcommand("stream", "decode a wire byte stream; optionally time reconstruction");
    std::string st_in, st_ckpt;
    int st_max = 0;
    stream->add_option("--in", st_in, "stream file or - for stdin")->required();
    stream->add_option("--out", out_dir, "output directory");
    stream->add_option("--ckpt", st_ckpt, "checkpoint for latency measurement");
    stream->add_option("--max-frames", st_max, "cap on decoded frames (0 = all)");

    CLI11_PARSE(app, argc, argv);

    try {
        KvMap kv;
        if (!config_path.empty()) kv = load_kv(config_path);

        if (gen->parsed()) {
            if (gen_image > 0) {
                kv["image_h"] = std::to_string(gen_image);
                kv["image_w"] = std::to_string(gen_image);
            }
            if (gen->count("--seed")) kv["seed"] = std::to_string(seed);
            return cmd_gen(kv, out_dir, gen_shapes, gen_n, seed);
        }
        if (train->parsed()) {
            if (tr_epochs >= 0) kv["epochs"] = std::to_string(tr_epochs);
            if (tr_lr >= 0) kv["lr"] = fmt(tr_lr);
            if (tr_latent > 0) kv["latent_dim"] = std::to_string(tr_latent);
            if (train->count("--seed")) kv["seed"] = std::to_string(seed);
            if (tr_zaxis) kv["zaxis_only"] = "1";
            return cmd_train(kv, tr_data, out_dir, tr_shapes, tr_split, tr_split_seed);
        }
        if (recon->parsed())
            return cmd_recon(rc_data, rc_ckpt, out_dir, rc_method, rc_split, rc_split_seed, rc_count, rc_stochastic, seed);
        if (eval->parsed())
            return cmd_eval(ev_data, out_dir, ev_ckpt, ev_ckpt_zaxis, ev_ckpt_single, ev_split, ev_split_seed);
        if (pose->parsed()) return cmd_pose(kv, po_ckpt, out_dir, po_rods, po_angles, po_tol, po_press, seed);
        if (stream->parsed()) return cmd_stream(st_in, out_dir, st_ckpt, st_max);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "supermag: %s\n", e.what());
        return 1;
    }
    return 0;
}
