// flowlift command-line tool: estimate dense flow/depth for a camera-LiDAR
// dataset, smooth it into speed profiles, evaluate metrics, synthesize test
// datasets, and lift flow to 3D.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowlift/pipeline.hpp"

namespace {

std::vector<double> parse_numbers(const std::string& csv, std::size_t expect,
                                  const std::string& flag) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw flowlift::ConfigError(flag + ": bad number '" + item + "'");
        }
    }
    if (out.size() != expect)
        throw flowlift::ConfigError(flag + ": expected " + std::to_string(expect) +
                                    " comma-separated values");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace flowlift;
    namespace fs = std::filesystem;

    CLI::App app{"Dense 2D flow, depth, and 3D surface velocity for a static "
                 "camera-LiDAR rig observing a flowing surface"};
    app.require_subcommand(1);

    // Shared solver/weight options.
    std::string config_path, manifest_path, out_path;
    double eta = -1.0, lambda_flow = -1.0, lambda_depth = -1.0;
    bool no_static = false, no_cycle = false;
    long long seed = -1;
    int jobs = 1;

    auto add_solver_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "solver config file (key = value lines)");
        cmd->add_option("--eta", eta, "LiDAR downsampling ratio in (0,1]");
        cmd->add_option("--lambda-flow", lambda_flow, "flow loss weight");
        cmd->add_option("--lambda-depth", lambda_depth, "depth loss weight");
        cmd->add_flag("--no-static", no_static, "disable the static-scene term");
        cmd->add_flag("--no-cycle", no_cycle, "disable the cycle term");
        cmd->add_option("--seed", seed, "RNG seed for LiDAR downsampling");
    };

    // estimate
    auto* est = app.add_subcommand("estimate", "estimate flow/depth for all frame pairs");
    est->add_option("--manifest", manifest_path, "dataset manifest JSON")->required();
    est->add_option("--out", out_path, "output directory")->required();
    est->add_option("--jobs", jobs, "worker threads across pairs");
    add_solver_flags(est);

    // profile
    std::string estimate_dir, region_csv, band_csv, lambdas_csv;
    bool moving_only = false;
    int bins = 32;
    auto* prof = app.add_subcommand("profile", "temporal smoothing and speed profile CSV");
    prof->add_option("--estimates", estimate_dir, "estimate output directory")->required();
    prof->add_option("--out", out_path, "profile CSV path")->required();
    prof->add_option("--region", region_csv, "LiDAR-frame box x0,x1,y0,y1 (default -1,1,19,21)");
    prof->add_option("--band", band_csv, "image-row band v0,v1 for cross-section CSVs");
    prof->add_option("--bins", bins, "cross-section x-bin count");
    prof->add_option("--temporal-lambdas", lambdas_csv, "smoothing weights l0,l1,l2");
    prof->add_flag("--moving-only", moving_only, "average only non-static pixels");

    // eval
    std::string metrics_csv = "rmsd,census,depth", frames_csv;
    double epe_tau = 1.0;
    auto* ev = app.add_subcommand("eval", "metric report JSON for an estimate directory");
    ev->add_option("--estimates", estimate_dir, "estimate output directory")->required();
    ev->add_option("--manifest", manifest_path, "dataset manifest JSON")->required();
    ev->add_option("--out", out_path, "report JSON path (default: stdout)");
    ev->add_option("--metrics", metrics_csv, "comma list of rmsd,census,depth,epe");
    ev->add_option("--frames", frames_csv, "inclusive epoch range a,b to evaluate");
    ev->add_option("--epe-tau", epe_tau, "endpoint-error threshold [px]");

    // synth
    std::string spec_path;
    auto* sy = app.add_subcommand("synth", "generate a synthetic dataset");
    sy->add_option("--spec", spec_path, "scene spec JSON")->required();
    sy->add_option("--out", out_path, "dataset directory")->required();

    // lift
    auto* li = app.add_subcommand("lift", "lift pair estimates to 3D scene flow rasters");
    li->add_option("--estimates", estimate_dir, "estimate output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (est->parsed()) {
            SolverConfig cfg;
            if (!config_path.empty()) cfg = load_solver_config(config_path);
            if (eta > 0.0) cfg.eta = eta;
            if (lambda_flow >= 0.0) cfg.weights.lambda_flow = lambda_flow;
            if (lambda_depth >= 0.0) cfg.weights.lambda_depth = lambda_depth;
            if (no_static) cfg.weights.enable_static = false;
            if (no_cycle) cfg.weights.enable_cycle = false;
            if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
            const DatasetManifest manifest = load_manifest(manifest_path);
            const EstimateSummary summary = cmd_estimate(manifest, cfg, out_path, jobs);
            std::cerr << "estimate: " << summary.completed << " computed, "
                      << summary.skipped << " already complete, "
                      << summary.failures.size() << " failed\n";
            for (const EstimateFailure& f : summary.failures)
                std::cerr << "  epoch " << f.epoch << ": " << f.message << "\n";
            return summary.failures.empty() ? 0 : 1;
        }
        if (prof->parsed()) {
            ProfileOptions opt;
            if (!region_csv.empty()) {
                const auto r = parse_numbers(region_csv, 4, "--region");
                opt.region = {r[0], r[1], r[2], r[3]};
            }
            if (!lambdas_csv.empty()) {
                const auto l = parse_numbers(lambdas_csv, 3, "--temporal-lambdas");
                opt.l0 = l[0];
                opt.l1 = l[1];
                opt.l2 = l[2];
            }
            if (!band_csv.empty()) {
                const auto b = parse_numbers(band_csv, 2, "--band");
                opt.band = {static_cast<int>(b[0]), static_cast<int>(b[1])};
            }
            opt.bins = bins;
            opt.moving_only = moving_only;
            cmd_profile(estimate_dir, opt, out_path);
            return 0;
        }
        if (ev->parsed()) {
            EvalOptions opt;
            opt.metrics.clear();
            std::stringstream ss(metrics_csv);
            std::string m;
            while (std::getline(ss, m, ','))
                if (!m.empty()) opt.metrics.push_back(m);
            if (!frames_csv.empty()) {
                const auto f = parse_numbers(frames_csv, 2, "--frames");
                opt.frame_range = {static_cast<int>(f[0]), static_cast<int>(f[1])};
            }
            opt.epe_tau = epe_tau;
            nlohmann::json report;
            const bool ok =
                cmd_eval(estimate_dir, load_manifest(manifest_path), opt, &report);
            if (out_path.empty()) {
                std::cout << report.dump(2) << "\n";
            } else {
                std::ofstream os(out_path);
                os << report.dump(2) << "\n";
            }
            if (!ok) std::cerr << "eval: some requested metrics are unavailable\n";
            return ok ? 0 : 1;
        }
        if (sy->parsed()) {
            cmd_synth(load_scene_spec(spec_path), out_path);
            return 0;
        }
        if (li->parsed()) {
            cmd_lift(estimate_dir);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
