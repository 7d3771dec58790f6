#pragma once

// End-to-end commands behind the CLI: dataset synthesis, pair estimation
// over a manifest (resumable, parallel across pairs), temporal smoothing into
// speed profiles and cross-sections, metric evaluation, and 3D lifting.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "flowlift/image_png.hpp"
#include "flowlift/io.hpp"
#include "flowlift/kinematics.hpp"
#include "flowlift/metrics.hpp"
#include "flowlift/solver.hpp"
#include "flowlift/synth.hpp"

namespace flowlift {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// synth

inline SceneSpec parse_scene_spec(const nlohmann::json& j) {
    SceneSpec spec;
    spec.texture_seed = j.value("seed", 1);
    spec.rig = default_synth_rig(j.value("width", 256), j.value("height", 160),
                                 j.value("focal", 300.0));
    spec.distance = j.value("distance", 20.0);
    spec.slope = j.value("slope", 0.0);
    if (j.contains("depth_band")) {
        const auto band = j.at("depth_band").get<std::vector<double>>();
        if (band.size() != 2) throw ConfigError("synth spec: depth_band needs [near, far]");
        plane_for_depth_band(spec.rig, band[0], band[1], &spec.distance, &spec.slope);
    }
    spec.lidar_points = j.value("lidar_points", 4000);
    spec.image_noise = j.value("image_noise", 0.0);
    spec.depth_noise = j.value("depth_noise", 0.0);
    spec.frames = j.value("frames", 2);
    spec.frame_interval = j.value("frame_interval", 0.04);
    if (j.contains("motion")) {
        const auto& m = j.at("motion");
        const std::string kind = m.value("kind", "none");
        if (kind == "none") {
            spec.motion.kind = MotionModel::Kind::None;
        } else if (kind == "uniform") {
            spec.motion.kind = MotionModel::Kind::UniformPixels;
            spec.motion.flow_u = m.value("flow_u", 0.0);
            spec.motion.flow_v = m.value("flow_v", 0.0);
        } else if (kind == "profile") {
            spec.motion.kind = MotionModel::Kind::Profile;
            spec.motion.peak_speed = m.value("peak_speed", 0.0);
            spec.motion.chan_lo = m.value("chan_lo", -1e9);
            spec.motion.chan_hi = m.value("chan_hi", 1e9);
            spec.motion.parabolic = m.value("parabolic", false);
            if (m.contains("schedule"))
                spec.motion.schedule = m.at("schedule").get<std::vector<double>>();
        } else {
            throw ConfigError("synth spec: unknown motion kind '" + kind + "'");
        }
    }
    return spec;
}

inline SceneSpec load_scene_spec(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open synth spec: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad synth spec JSON: " + path.string() + ": " + e.what());
    }
    return parse_scene_spec(j);
}

/// Writes a synthetic dataset in the layout `estimate` ingests: PNG images,
/// DPC1 clouds, calibration JSON, GT rasters, and a manifest.
inline void cmd_synth(const SceneSpec& spec, const fs::path& out_dir) {
    const SyntheticScene scene = generate(spec);
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "clouds");
    fs::create_directories(out_dir / "gt");
    save_calibration(out_dir / "calibration.json", scene.rig);
    for (int t = 0; t < static_cast<int>(scene.images.size()); ++t) {
        save_png(out_dir / "images" / DatasetManifest::format_epoch("frame_%06d.png", t),
                 scene.images[t]);
        save_cloud(out_dir / "clouds" / DatasetManifest::format_epoch("cloud_%06d.dpc", t),
                   scene.clouds[t]);
        save_raster(out_dir / "gt" / DatasetManifest::format_epoch("depth_%06d.dflo", t),
                    scene.gt_depth[t]);
    }
    for (int t = 0; t < static_cast<int>(scene.gt_flow.size()); ++t) {
        save_raster(out_dir / "gt" / DatasetManifest::format_epoch("flow_%06d.dflo", t),
                    scene.gt_flow[t]);
        save_raster(out_dir / "gt" / DatasetManifest::format_epoch("velocity_%06d.dflo", t),
                    scene.gt_velocity[t]);
    }
    {
        std::ofstream os(out_dir / "gt" / "speed_schedule.csv");
        os << "epoch,speed_mps\n";
        for (int t = 0; t < static_cast<int>(scene.gt_speed_schedule.size()); ++t)
            os << t << "," << scene.gt_speed_schedule[t] << "\n";
    }
    nlohmann::json manifest{{"image_dir", "images"},
                            {"image_pattern", "frame_%06d.png"},
                            {"cloud_dir", "clouds"},
                            {"cloud_pattern", "cloud_%06d.dpc"},
                            {"calibration", "calibration.json"},
                            {"frame_start", 0},
                            {"frame_end", static_cast<int>(scene.images.size()) - 1},
                            {"frame_interval", scene.frame_interval},
                            {"gt_flow_dir", "gt"},
                            {"gt_flow_pattern", "flow_%06d.dflo"},
                            {"gt_depth_dir", "gt"},
                            {"gt_depth_pattern", "depth_%06d.dflo"}};
    std::ofstream os(out_dir / "manifest.json");
    os << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// estimate

/// Rig adjusted for a manifest crop: the principal point shifts with the
/// crop origin and the frame shrinks to the crop size.
inline CalibratedRig rig_for_crop(const CalibratedRig& rig,
                                  const std::optional<CropRect>& crop) {
    if (!crop) return rig;
    CalibratedRig out = rig;
    out.px -= crop->x;
    out.py -= crop->y;
    out.width = crop->width;
    out.height = crop->height;
    return out;
}

inline Field load_dataset_image(const DatasetManifest& manifest, int epoch) {
    Field img = to_grayscale(load_png(manifest.image_path(epoch)));
    if (manifest.crop) img = crop_field(img, *manifest.crop);
    return img;
}

struct EstimateFailure {
    int epoch;
    std::string message;
};

struct EstimateSummary {
    int completed = 0;
    int skipped = 0;
    std::vector<EstimateFailure> failures;
};

inline fs::path pair_dir_name(const fs::path& out_dir, int epoch) {
    return out_dir / DatasetManifest::format_epoch("pair_%06d", epoch);
}

/// Estimates every consecutive frame pair in the manifest. Completed pairs
/// (those with a report.json) are skipped, so reruns are byte-identical
/// no-ops. Pairs are independent: failures are collected per epoch and the
/// rest proceed. `jobs` is the number of worker threads.
inline EstimateSummary cmd_estimate(const DatasetManifest& manifest, const SolverConfig& cfg,
                                    const fs::path& out_dir, int jobs = 1,
                                    bool quiet = false) {
    cfg.validate();
    const CalibratedRig rig_full = load_calibration(manifest.calibration_path());
    const CalibratedRig rig = rig_for_crop(rig_full, manifest.crop);
    rig.validate();

    fs::create_directories(out_dir);
    {
        nlohmann::json info{{"calibration", calibration_to_json(rig)},
                            {"frame_interval", manifest.frame_interval},
                            {"frame_start", manifest.frame_start},
                            {"frame_end", manifest.frame_end},
                            {"eta", cfg.eta},
                            {"seed", cfg.seed},
                            {"eps_static", cfg.eps_static}};
        std::ofstream os(out_dir / "dataset.json");
        os << info.dump(2) << "\n";
    }

    std::vector<int> epochs;
    for (int e = manifest.frame_start; e < manifest.frame_end; ++e) epochs.push_back(e);

    EstimateSummary summary;
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    const int workers = std::max(1, jobs);
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= epochs.size()) return;
            const int epoch = epochs[i];
            const fs::path dir = pair_dir_name(out_dir, epoch);
            if (fs::exists(dir / "report.json")) {
                std::lock_guard<std::mutex> lock(mu);
                ++summary.skipped;
                continue;
            }
            try {
                const Field img_t = load_dataset_image(manifest, epoch);
                const Field img_t1 = load_dataset_image(manifest, epoch + 1);
                PointCloud cloud_t = load_cloud(manifest.cloud_path(epoch));
                PointCloud cloud_t1 = load_cloud(manifest.cloud_path(epoch + 1));
                cloud_t.epoch = epoch;
                cloud_t1.epoch = epoch + 1;
                const PairEstimate est =
                    estimate_pair(img_t, img_t1, cloud_t, cloud_t1, rig, cfg);
                save_pair_estimate(dir, est, epoch);
                std::lock_guard<std::mutex> lock(mu);
                ++summary.completed;
                if (!quiet)
                    std::cerr << "pair " << epoch << ": total energy "
                              << est.report.total << "\n";
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(mu);
                summary.failures.push_back({epoch, e.what()});
                if (!quiet)
                    std::cerr << "pair " << epoch << " failed: " << e.what() << "\n";
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    return summary;
}

// ---------------------------------------------------------------------------
// profile

struct EstimateSet {
    CalibratedRig rig;
    double frame_interval = 0.04;
    double eps_static = 0.5;
    std::vector<LoadedPairEstimate> pairs;  // sorted by epoch
};

inline EstimateSet load_estimate_set(const fs::path& estimate_dir) {
    EstimateSet set;
    std::ifstream is(estimate_dir / "dataset.json");
    if (!is) throw IoError("missing dataset.json in " + estimate_dir.string());
    nlohmann::json j;
    is >> j;
    {
        const nlohmann::json cal = j.at("calibration");
        set.rig.fx = cal.at("fx").get<double>();
        set.rig.fy = cal.at("fy").get<double>();
        set.rig.px = cal.at("px").get<double>();
        set.rig.py = cal.at("py").get<double>();
        set.rig.width = cal.at("width").get<int>();
        set.rig.height = cal.at("height").get<int>();
        const auto R = cal.at("R").get<std::vector<double>>();
        const auto t = cal.at("t").get<std::vector<double>>();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) set.rig.R[r][c] = R[r * 3 + c];
        for (int i = 0; i < 3; ++i) set.rig.t[i] = t[i];
    }
    set.frame_interval = j.value("frame_interval", 0.04);
    set.eps_static = j.value("eps_static", 0.5);
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(estimate_dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("pair_", 0) == 0 &&
            fs::exists(entry.path() / "report.json"))
            dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const fs::path& d : dirs) set.pairs.push_back(load_pair_estimate(d));
    return set;
}

struct ProfileOptions {
    RegionBox region;                      // default: the channel box
    double l0 = 0.25, l1 = 0.5, l2 = 0.25;  // temporal smoothing weights
    bool moving_only = false;
    std::optional<std::pair<int, int>> band;  // image-row band for cross-sections
    int bins = 32;
};

/// Temporal smoothing weights fall back to the identity (0,1,0) at sequence
/// boundaries or where neighbor epochs are not consecutive.
inline Field smoothed_flow_at(const EstimateSet& set, std::size_t i, double l0, double l1,
                              double l2) {
    const auto& pairs = set.pairs;
    const bool has_prev = i > 0 && pairs[i - 1].epoch + 1 == pairs[i].epoch;
    const bool has_next = i + 1 < pairs.size() && pairs[i].epoch + 1 == pairs[i + 1].epoch;
    if (!has_prev || !has_next) return pairs[i].flow_f;
    return smooth_flow(pairs[i - 1].flow_f, pairs[i - 1].flow_b, pairs[i].flow_f,
                       pairs[i + 1].flow_f, l0, l1, l2);
}

struct ProfileResult {
    SpeedProfile profile;
    std::vector<SceneFlowFrame> frames;
    std::vector<Field> speeds;  // per-pixel speed [m/s] per frame
};

inline ProfileResult compute_profile(const EstimateSet& set, const ProfileOptions& opt) {
    if (set.pairs.size() < 2)
        throw ConfigError("profile: need at least 2 pair estimates");
    ProfileResult out;
    for (std::size_t i = 0; i < set.pairs.size(); ++i) {
        const LoadedPairEstimate& pe = set.pairs[i];
        const Field flow = smoothed_flow_at(set, i, opt.l0, opt.l1, opt.l2);
        SceneFlowFrame frame = lift_to_scene_flow(flow, pe.depth_t, pe.depth_t1, set.rig);
        frame.epoch = pe.epoch;
        if (opt.moving_only) {
            for (std::size_t k = 0; k < frame.valid.data.size(); ++k)
                if (pe.mask.data[k] != 0.0) frame.valid.data[k] = 0.0;
        }
        Field speed(frame.valid.width, frame.valid.height, 1, 0.0);
        for (int v = 0; v < speed.height; ++v)
            for (int u = 0; u < speed.width; ++u) {
                const double vx = frame.velocity.at(u, v, 0);
                const double vy = frame.velocity.at(u, v, 1);
                const double vz = frame.velocity.at(u, v, 2);
                speed.at(u, v) = std::sqrt(vx * vx + vy * vy + vz * vz) / set.frame_interval;
            }
        out.speeds.push_back(std::move(speed));
        out.frames.push_back(std::move(frame));
    }
    out.profile = speed_profile(out.frames, opt.region, set.frame_interval);
    return out;
}

inline void write_profile_csv(const fs::path& path, const SpeedProfile& profile) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "epoch,time_s,speed_mps\n";
    for (std::size_t i = 0; i < profile.epochs.size(); ++i) {
        os << profile.epochs[i] << "," << profile.epochs[i] * profile.frame_interval << ",";
        if (profile.speeds[i])
            os << *profile.speeds[i];
        else
            os << "nan";  // region empty at this epoch
        os << "\n";
    }
}

inline void write_cross_section_csv(const fs::path& path,
                                    const std::vector<CrossSectionBin>& bins) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "x_m,speed_mps\n";
    for (const CrossSectionBin& b : bins) os << b.x << "," << b.speed << "\n";
}

/// Smooths, lifts, and writes the speed profile CSV; with a row band set,
/// also writes one cross-section CSV per epoch next to the profile.
inline void cmd_profile(const fs::path& estimate_dir, const ProfileOptions& opt,
                        const fs::path& out_csv) {
    const EstimateSet set = load_estimate_set(estimate_dir);
    const ProfileResult result = compute_profile(set, opt);
    write_profile_csv(out_csv, result.profile);
    if (opt.band) {
        const fs::path dir = out_csv.parent_path();
        for (std::size_t i = 0; i < result.frames.size(); ++i) {
            const auto bins =
                channel_cross_section(result.frames[i], result.speeds[i],
                                      opt.band->first, opt.band->second, opt.bins);
            write_cross_section_csv(
                dir / DatasetManifest::format_epoch("cross_section_%06d.csv",
                                                    result.frames[i].epoch),
                bins);
        }
    }
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::vector<std::string> metrics = {"rmsd", "census", "depth"};  // + "epe"
    std::optional<std::pair<int, int>> frame_range;  // inclusive epochs
    double epe_tau = 1.0;
};

/// Computes the requested metrics per pair and dataset means. Metrics whose
/// inputs are missing are marked unavailable in the report; the return value
/// is false if any requested metric ended up unavailable.
inline bool cmd_eval(const fs::path& estimate_dir, const DatasetManifest& manifest,
                     const EvalOptions& opt, nlohmann::json* report) {
    const EstimateSet set = load_estimate_set(estimate_dir);
    const auto wants = [&](const std::string& m) {
        return std::find(opt.metrics.begin(), opt.metrics.end(), m) != opt.metrics.end();
    };

    nlohmann::json pairs = nlohmann::json::array();
    double sum_rmsd = 0.0, sum_census = 0.0, sum_epe = 0.0, sum_frac = 0.0;
    double sum_mae10 = 0.0, sum_mae30 = 0.0, sum_mae50 = 0.0, sum_absrel = 0.0;
    std::size_t n_photo = 0, n_epe = 0, n10 = 0, n30 = 0, n50 = 0;

    for (const LoadedPairEstimate& pe : set.pairs) {
        const int epoch = pe.epoch;
        if (opt.frame_range &&
            (epoch < opt.frame_range->first || epoch > opt.frame_range->second))
            continue;
        nlohmann::json entry{{"epoch", epoch}};

        if (wants("rmsd") || wants("census")) {
            const Field img_t = load_dataset_image(manifest, epoch);
            const Field img_t1 = load_dataset_image(manifest, epoch + 1);
            const Field recon = backward_warp(img_t1, pe.flow_f);
            const double r = rmsd(img_t, recon);
            const double c = census_loss(img_t, recon);
            entry["rmsd"] = r;
            entry["census"] = c;
            sum_rmsd += r;
            sum_census += c;
            ++n_photo;
        }
        if (wants("depth")) {
            PointCloud cloud = load_cloud(manifest.cloud_path(epoch));
            const DepthEvalReport d = depth_eval(pe.depth_t, cloud, set.rig);
            entry["depth"] = {{"n10", d.n10}, {"n30", d.n30}, {"n50", d.n50}};
            if (d.mae10) entry["depth"]["mae10"] = *d.mae10;
            if (d.mae30) entry["depth"]["mae30"] = *d.mae30;
            if (d.mae50) entry["depth"]["mae50"] = *d.mae50;
            if (d.abs_rel) entry["depth"]["abs_rel"] = *d.abs_rel;
            if (d.mae10) {
                sum_mae10 += *d.mae10;
                ++n10;
            }
            if (d.mae30) {
                sum_mae30 += *d.mae30;
                ++n30;
            }
            if (d.mae50) {
                sum_mae50 += *d.mae50;
                sum_absrel += *d.abs_rel;
                ++n50;
            }
        }
        if (wants("epe") && manifest.has_gt_flow()) {
            const fs::path gt_path = manifest.gt_flow_path(epoch);
            if (fs::exists(gt_path)) {
                const Field gt = load_raster(gt_path);
                const EndpointError e = endpoint_error(pe.flow_f, gt, opt.epe_tau);
                entry["epe_mean"] = e.mean;
                entry["epe_fraction_below"] = e.fraction_below;
                sum_epe += e.mean;
                sum_frac += e.fraction_below;
                ++n_epe;
            }
        }
        pairs.push_back(std::move(entry));
    }

    nlohmann::json summary;
    bool all_available = true;
    const auto finish = [&](const std::string& name, bool available,
                            const nlohmann::json& value) {
        summary[name] = available ? value : nlohmann::json{{"available", false}};
        if (wants(name) && !available) all_available = false;
    };
    finish("rmsd", n_photo > 0, nlohmann::json(n_photo ? sum_rmsd / n_photo : 0.0));
    finish("census", n_photo > 0, nlohmann::json(n_photo ? sum_census / n_photo : 0.0));
    {
        nlohmann::json depth;
        if (n10) depth["mae10"] = sum_mae10 / n10;
        if (n30) depth["mae30"] = sum_mae30 / n30;
        if (n50) {
            depth["mae50"] = sum_mae50 / n50;
            depth["abs_rel"] = sum_absrel / n50;
        }
        finish("depth", n50 > 0, depth);
    }
    finish("epe", n_epe > 0,
           nlohmann::json{{"mean", n_epe ? sum_epe / n_epe : 0.0},
                          {"fraction_below", n_epe ? sum_frac / n_epe : 0.0},
                          {"tau", opt.epe_tau}});

    (*report)["pairs"] = std::move(pairs);
    (*report)["summary"] = std::move(summary);
    return all_available;
}

// ---------------------------------------------------------------------------
// lift

/// Lifts each pair's forward flow to 3D and writes points / velocity / valid
/// / speed rasters into the pair directory.
inline void cmd_lift(const fs::path& estimate_dir) {
    const EstimateSet set = load_estimate_set(estimate_dir);
    if (set.pairs.empty()) throw ConfigError("lift: no pair estimates found");
    for (const LoadedPairEstimate& pe : set.pairs) {
        const SceneFlowFrame frame =
            lift_to_scene_flow(pe.flow_f, pe.depth_t, pe.depth_t1, set.rig);
        Field speed(frame.valid.width, frame.valid.height, 1, 0.0);
        for (int v = 0; v < speed.height; ++v)
            for (int u = 0; u < speed.width; ++u) {
                const double vx = frame.velocity.at(u, v, 0);
                const double vy = frame.velocity.at(u, v, 1);
                const double vz = frame.velocity.at(u, v, 2);
                speed.at(u, v) = std::sqrt(vx * vx + vy * vy + vz * vz) / set.frame_interval;
            }
        const fs::path dir = pair_dir_name(estimate_dir, pe.epoch);
        save_raster(dir / "points.dflo", frame.points_t);
        save_raster(dir / "velocity.dflo", frame.velocity);
        save_raster(dir / "valid.dflo", frame.valid);
        save_raster(dir / "speed.dflo", speed);
    }
}

}  // namespace flowlift
