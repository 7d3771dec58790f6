#pragma once

// File formats: "DFLO" raster files, "DPC1" point cloud files (with CSV
// fallback), calibration JSON, key = value solver config files, and dataset
// manifests. All binary formats are little-endian.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowlift/error.hpp"
#include "flowlift/field.hpp"
#include "flowlift/geom.hpp"
#include "flowlift/solver.hpp"

namespace flowlift {

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t x) {
    const unsigned char b[4] = {static_cast<unsigned char>(x & 0xff),
                                static_cast<unsigned char>((x >> 8) & 0xff),
                                static_cast<unsigned char>((x >> 16) & 0xff),
                                static_cast<unsigned char>((x >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32le(std::ostream& os, float f) {
    std::uint32_t x;
    static_assert(sizeof(float) == 4);
    std::memcpy(&x, &f, 4);
    put_u32le(os, x);
}

inline float get_f32le(std::istream& is) {
    const std::uint32_t x = get_u32le(is);
    float f;
    std::memcpy(&f, &x, 4);
    return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DFLO rasters: magic "DFLO", u32 width/height/channels, f32 data row-major.

inline void save_raster(const std::filesystem::path& path, const Field& field) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("DFLO", 4);
    detail::put_u32le(os, static_cast<std::uint32_t>(field.width));
    detail::put_u32le(os, static_cast<std::uint32_t>(field.height));
    detail::put_u32le(os, static_cast<std::uint32_t>(field.channels));
    for (double d : field.data) detail::put_f32le(os, static_cast<float>(d));
    if (!os) throw IoError("write failed: " + path.string());
}

inline Field load_raster(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "DFLO")
        throw IoError("not a DFLO raster: " + path.string());
    const std::uint32_t w = detail::get_u32le(is);
    const std::uint32_t h = detail::get_u32le(is);
    const std::uint32_t c = detail::get_u32le(is);
    if (!is || w == 0 || h == 0 || c == 0 || w > 1u << 20 || h > 1u << 20 || c > 1024)
        throw IoError("bad DFLO header: " + path.string());
    Field f(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
    for (double& d : f.data) d = detail::get_f32le(is);
    if (!is) throw IoError("truncated DFLO raster: " + path.string());
    return f;
}

// ---------------------------------------------------------------------------
// Point clouds: magic "DPC1", u32 count, count x 3 f32 (x,y,z meters), or a
// CSV fallback with header "x,y,z".

inline void save_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("DPC1", 4);
    detail::put_u32le(os, static_cast<std::uint32_t>(cloud.points.size()));
    for (const Vec3& p : cloud.points) {
        detail::put_f32le(os, static_cast<float>(p[0]));
        detail::put_f32le(os, static_cast<float>(p[1]));
        detail::put_f32le(os, static_cast<float>(p[2]));
    }
    if (!os) throw IoError("write failed: " + path.string());
}

inline PointCloud load_cloud_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty cloud CSV: " + path.string());
    if (line != "x,y,z" && line != "x,y,z\r")
        throw IoError("cloud CSV must start with header \"x,y,z\": " + path.string());
    PointCloud cloud;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        Vec3 p;
        char comma;
        std::istringstream ls(line);
        if (!(ls >> p[0] >> comma >> p[1] >> comma >> p[2]))
            throw IoError("bad cloud CSV row: " + path.string());
        cloud.points.push_back(p);
    }
    return cloud;
}

inline PointCloud load_cloud(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char magic[4] = {0, 0, 0, 0};
    is.read(magic, 4);
    if (is && std::string(magic, 4) == "DPC1") {
        const std::uint32_t count = detail::get_u32le(is);
        if (!is || count > 1u << 28) throw IoError("bad DPC1 header: " + path.string());
        PointCloud cloud;
        cloud.points.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            Vec3 p;
            p[0] = detail::get_f32le(is);
            p[1] = detail::get_f32le(is);
            p[2] = detail::get_f32le(is);
            cloud.points.push_back(p);
        }
        if (!is) throw IoError("truncated DPC1 cloud: " + path.string());
        return cloud;
    }
    is.close();
    return load_cloud_csv(path);  // CSV fallback
}

// ---------------------------------------------------------------------------
// Calibration JSON

inline CalibratedRig load_calibration(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open calibration: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad calibration JSON: " + path.string() + ": " + e.what());
    }
    CalibratedRig rig;
    try {
        rig.fx = j.at("fx").get<double>();
        rig.fy = j.at("fy").get<double>();
        rig.px = j.at("px").get<double>();
        rig.py = j.at("py").get<double>();
        rig.width = j.at("width").get<int>();
        rig.height = j.at("height").get<int>();
        const auto R = j.at("R").get<std::vector<double>>();
        const auto t = j.at("t").get<std::vector<double>>();
        if (R.size() != 9 || t.size() != 3)
            throw IoError("calibration: R must have 9 entries, t must have 3");
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) rig.R[r][c] = R[r * 3 + c];
        for (int i = 0; i < 3; ++i) rig.t[i] = t[i];
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad calibration JSON: " + path.string() + ": " + e.what());
    }
    rig.validate();
    return rig;
}

inline nlohmann::json calibration_to_json(const CalibratedRig& rig) {
    std::vector<double> R;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) R.push_back(rig.R[r][c]);
    return nlohmann::json{{"fx", rig.fx},       {"fy", rig.fy},
                          {"px", rig.px},       {"py", rig.py},
                          {"R", R},             {"t", {rig.t[0], rig.t[1], rig.t[2]}},
                          {"width", rig.width}, {"height", rig.height}};
}

inline void save_calibration(const std::filesystem::path& path, const CalibratedRig& rig) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << calibration_to_json(rig).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Solver config: flat "key = value" lines, '#' comments.

inline std::map<std::string, std::string> parse_config_file(
    const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    const auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline void apply_config(const std::map<std::string, std::string>& kv, SolverConfig* cfg) {
    const auto to_double = [](const std::string& k, const std::string& v) {
        try {
            return std::stod(v);
        } catch (...) {
            throw ConfigError("config key " + k + ": bad number '" + v + "'");
        }
    };
    const auto to_bool = [](const std::string& k, const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("config key " + k + ": expected true/false, got '" + v + "'");
    };
    for (const auto& [k, v] : kv) {
        if (k == "levels") cfg->levels = static_cast<int>(to_double(k, v));
        else if (k == "iters_per_level") cfg->iters_per_level = static_cast<int>(to_double(k, v));
        else if (k == "init_step_flow") cfg->init_step_flow = to_double(k, v);
        else if (k == "init_step_depth") cfg->init_step_depth = to_double(k, v);
        else if (k == "step_halvings_max") cfg->step_halvings_max = static_cast<int>(to_double(k, v));
        else if (k == "eps_static") cfg->eps_static = to_double(k, v);
        else if (k == "eta") cfg->eta = to_double(k, v);
        else if (k == "seed") cfg->seed = static_cast<std::uint64_t>(to_double(k, v));
        else if (k == "prior_depth") cfg->prior_depth = to_double(k, v);
        else if (k == "min_depth") cfg->min_depth = to_double(k, v);
        else if (k == "warmup_fraction") cfg->warmup_fraction = to_double(k, v);
        else if (k == "lambda_flow") cfg->weights.lambda_flow = to_double(k, v);
        else if (k == "lambda_depth") cfg->weights.lambda_depth = to_double(k, v);
        else if (k == "lambda_sm_flow") cfg->weights.lambda_sm_flow = to_double(k, v);
        else if (k == "lambda_sm_depth") cfg->weights.lambda_sm_depth = to_double(k, v);
        else if (k == "beta") cfg->weights.beta = to_double(k, v);
        else if (k == "enable_static") cfg->weights.enable_static = to_bool(k, v);
        else if (k == "enable_cycle") cfg->weights.enable_cycle = to_bool(k, v);
        else throw ConfigError("config: unknown key '" + k + "'");
    }
}

inline SolverConfig load_solver_config(const std::filesystem::path& path) {
    SolverConfig cfg;
    apply_config(parse_config_file(path), &cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON)

struct CropRect {
    int x = 0, y = 0, width = 0, height = 0;
};

struct DatasetManifest {
    std::filesystem::path root;  // directory containing the manifest
    std::string image_dir;
    std::string image_pattern;  // printf-style, e.g. "frame_%06d.png"
    std::string cloud_dir;
    std::string cloud_pattern;
    std::string calibration;  // path relative to root
    int frame_start = 0;
    int frame_end = 0;  // inclusive
    double frame_interval = 0.04;
    std::optional<CropRect> crop;
    // Optional ground-truth rasters (synthetic datasets).
    std::string gt_flow_dir;
    std::string gt_flow_pattern;
    std::string gt_depth_dir;
    std::string gt_depth_pattern;

    std::filesystem::path image_path(int epoch) const {
        return root / image_dir / format_epoch(image_pattern, epoch);
    }
    std::filesystem::path cloud_path(int epoch) const {
        return root / cloud_dir / format_epoch(cloud_pattern, epoch);
    }
    std::filesystem::path calibration_path() const { return root / calibration; }
    bool has_gt_flow() const { return !gt_flow_pattern.empty(); }
    std::filesystem::path gt_flow_path(int epoch) const {
        return root / gt_flow_dir / format_epoch(gt_flow_pattern, epoch);
    }

    static std::string format_epoch(const std::string& pattern, int epoch) {
        char buf[512];
        const int n = std::snprintf(buf, sizeof(buf), pattern.c_str(), epoch);
        if (n < 0 || n >= static_cast<int>(sizeof(buf)))
            throw ConfigError("manifest: bad filename pattern '" + pattern + "'");
        return std::string(buf, n);
    }
};

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest JSON: " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.root = std::filesystem::absolute(path).parent_path();
    try {
        m.image_dir = j.value("image_dir", std::string("images"));
        m.image_pattern = j.at("image_pattern").get<std::string>();
        m.cloud_dir = j.value("cloud_dir", std::string("clouds"));
        m.cloud_pattern = j.at("cloud_pattern").get<std::string>();
        m.calibration = j.value("calibration", std::string("calibration.json"));
        m.frame_start = j.at("frame_start").get<int>();
        m.frame_end = j.at("frame_end").get<int>();
        m.frame_interval = j.value("frame_interval", 0.04);
        if (j.contains("crop")) {
            CropRect c;
            c.x = j["crop"].value("x", 0);
            c.y = j["crop"].value("y", 0);
            c.width = j["crop"].at("width").get<int>();
            c.height = j["crop"].at("height").get<int>();
            m.crop = c;
        }
        m.gt_flow_dir = j.value("gt_flow_dir", std::string(""));
        m.gt_flow_pattern = j.value("gt_flow_pattern", std::string(""));
        m.gt_depth_dir = j.value("gt_depth_dir", std::string(""));
        m.gt_depth_pattern = j.value("gt_depth_pattern", std::string(""));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest JSON: " + path.string() + ": " + e.what());
    }
    if (m.frame_end < m.frame_start)
        throw ConfigError("manifest: frame_end < frame_start");
    return m;
}

/// Crops to the given rectangle (needed to make dimensions divisible by
/// 2^(levels-1) before pyramid construction).
inline Field crop_field(const Field& f, const CropRect& r) {
    if (r.x < 0 || r.y < 0 || r.width < 1 || r.height < 1 || r.x + r.width > f.width ||
        r.y + r.height > f.height)
        throw ShapeError("crop_field: rectangle outside field");
    Field out(r.width, r.height, f.channels);
    for (int v = 0; v < r.height; ++v)
        for (int u = 0; u < r.width; ++u)
            for (int c = 0; c < f.channels; ++c)
                out.at(u, v, c) = f.at(u + r.x, v + r.y, c);
    return out;
}

// ---------------------------------------------------------------------------
// PairEstimate serialization: a directory of DFLO rasters plus report.json.

inline nlohmann::json energy_report_to_json(const EnergyReport& r) {
    return nlohmann::json{
        {"photo", r.photo},
        {"smooth_flow", r.smooth_flow},
        {"depth_l1", r.depth_l1},
        {"smooth_depth", r.smooth_depth},
        {"static", r.static_term},
        {"cycle", r.cycle},
        {"total", r.total},
        {"weights",
         {{"lambda_flow", r.weights.lambda_flow},
          {"lambda_depth", r.weights.lambda_depth},
          {"lambda_sm_flow", r.weights.lambda_sm_flow},
          {"lambda_sm_depth", r.weights.lambda_sm_depth},
          {"beta", r.weights.beta},
          {"enable_static", r.weights.enable_static},
          {"enable_cycle", r.weights.enable_cycle}}}};
}

inline void save_pair_estimate(const std::filesystem::path& dir, const PairEstimate& est,
                               int epoch) {
    std::filesystem::create_directories(dir);
    save_raster(dir / "flow_f.dflo", est.flow_f);
    save_raster(dir / "flow_b.dflo", est.flow_b);
    save_raster(dir / "depth_t.dflo", est.depth_t);
    save_raster(dir / "depth_t1.dflo", est.depth_t1);
    save_raster(dir / "mask.dflo", est.mask);
    nlohmann::json j;
    j["epoch"] = epoch;
    j["energy"] = energy_report_to_json(est.report);
    nlohmann::json trace = nlohmann::json::array();
    for (const TraceEntry& e : est.energy_trace)
        trace.push_back({e.level, e.iter, e.phase, e.warmup, e.total});
    j["energy_trace"] = std::move(trace);
    // report.json is written last and atomically: its presence marks the pair
    // as complete for resume purposes.
    const std::filesystem::path tmp = dir / "report.json.tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw IoError("cannot open for writing: " + tmp.string());
        os << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, dir / "report.json");
}

struct LoadedPairEstimate {
    int epoch = 0;
    Field flow_f, flow_b, depth_t, depth_t1, mask;
};

inline LoadedPairEstimate load_pair_estimate(const std::filesystem::path& dir) {
    LoadedPairEstimate est;
    est.flow_f = load_raster(dir / "flow_f.dflo");
    est.flow_b = load_raster(dir / "flow_b.dflo");
    est.depth_t = load_raster(dir / "depth_t.dflo");
    est.depth_t1 = load_raster(dir / "depth_t1.dflo");
    est.mask = load_raster(dir / "mask.dflo");
    std::ifstream is(dir / "report.json");
    if (!is) throw IoError("missing report.json in " + dir.string());
    nlohmann::json j;
    is >> j;
    est.epoch = j.value("epoch", 0);
    return est;
}

}  // namespace flowlift
