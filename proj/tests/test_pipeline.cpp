#include "flowlift/pipeline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"

using namespace flowlift;
namespace fs = std::filesystem;

namespace {

class PipelineTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("flowlift_pipe_" +
                std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

SceneSpec small_scene(int frames, std::uint64_t seed) {
    SceneSpec spec;
    spec.rig = default_synth_rig(64, 48);
    spec.texture_seed = seed;
    spec.distance = 20.0;
    spec.frames = frames;
    spec.lidar_points = 700;
    spec.motion.kind = MotionModel::Kind::UniformPixels;
    spec.motion.flow_u = 1.0;
    spec.motion.flow_v = -0.5;
    return spec;
}

SolverConfig tiny_config() {
    SolverConfig cfg;
    cfg.levels = 3;
    cfg.iters_per_level = 20;
    return cfg;
}

std::map<fs::path, std::vector<char>> read_tree(const fs::path& root) {
    std::map<fs::path, std::vector<char>> tree;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream is(entry.path(), std::ios::binary);
        tree[fs::relative(entry.path(), root)] = std::vector<char>(
            std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    }
    return tree;
}

TEST_F(PipelineTest, SynthWritesIngestableDataset) {
    cmd_synth(small_scene(4, 120), dir_ / "data");
    EXPECT_TRUE(fs::exists(dir_ / "data" / "manifest.json"));
    EXPECT_TRUE(fs::exists(dir_ / "data" / "calibration.json"));
    EXPECT_TRUE(fs::exists(dir_ / "data" / "images" / "frame_000003.png"));
    EXPECT_TRUE(fs::exists(dir_ / "data" / "clouds" / "cloud_000003.dpc"));
    EXPECT_TRUE(fs::exists(dir_ / "data" / "gt" / "flow_000002.dflo"));
    const DatasetManifest m = load_manifest(dir_ / "data" / "manifest.json");
    EXPECT_EQ(m.frame_start, 0);
    EXPECT_EQ(m.frame_end, 3);
    EXPECT_TRUE(m.has_gt_flow());
    // Round-tripped PNG stays close to the generated image.
    const SyntheticScene scene = generate(small_scene(4, 120));
    const Field img = load_png(dir_ / "data" / "images" / "frame_000000.png");
    double max_err = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i)
        max_err = std::max(max_err, std::abs(img.data[i] - scene.images[0].data[i]));
    EXPECT_LT(max_err, 0.5 / 255.0 + 1e-9);
}

TEST_F(PipelineTest, EstimateProducesPairPerConsecutiveFrames) {
    cmd_synth(small_scene(4, 121), dir_ / "data");
    const DatasetManifest m = load_manifest(dir_ / "data" / "manifest.json");
    const EstimateSummary s = cmd_estimate(m, tiny_config(), dir_ / "out", 1, true);
    EXPECT_EQ(s.completed, 3);
    EXPECT_TRUE(s.failures.empty());
    EXPECT_TRUE(fs::exists(dir_ / "out" / "pair_000000" / "report.json"));
    EXPECT_TRUE(fs::exists(dir_ / "out" / "pair_000001" / "report.json"));
    EXPECT_TRUE(fs::exists(dir_ / "out" / "pair_000002" / "report.json"));
    EXPECT_FALSE(fs::exists(dir_ / "out" / "pair_000003"));
}

TEST_F(PipelineTest, RerunIsIdempotentNoByteChanges) {
    cmd_synth(small_scene(3, 122), dir_ / "data");
    const DatasetManifest m = load_manifest(dir_ / "data" / "manifest.json");
    const EstimateSummary first = cmd_estimate(m, tiny_config(), dir_ / "out", 1, true);
    EXPECT_EQ(first.completed, 2);
    const auto before = read_tree(dir_ / "out");
    const EstimateSummary second = cmd_estimate(m, tiny_config(), dir_ / "out", 1, true);
    EXPECT_EQ(second.completed, 0);
    EXPECT_EQ(second.skipped, 2);
    EXPECT_EQ(read_tree(dir_ / "out"), before);
}

TEST_F(PipelineTest, JobsDoNotChangeOutputBytes) {
    cmd_synth(small_scene(4, 123), dir_ / "data");
    const DatasetManifest m = load_manifest(dir_ / "data" / "manifest.json");
    cmd_estimate(m, tiny_config(), dir_ / "out1", 1, true);
    cmd_estimate(m, tiny_config(), dir_ / "out2", 3, true);
    EXPECT_EQ(read_tree(dir_ / "out1"), read_tree(dir_ / "out2"));
}

TEST_F(PipelineTest, CorruptCloudFailsOnlyThatPair) {
    cmd_synth(small_scene(4, 124), dir_ / "data");
    {
        std::ofstream os(dir_ / "data" / "clouds" / "cloud_000002.dpc", std::ios::binary);
        os << "garbage";
    }
    const DatasetManifest m = load_manifest(dir_ / "data" / "manifest.json");
    const EstimateSummary s = cmd_estimate(m, tiny_config(), dir_ / "out", 1, true);
    // Pairs (1,2) and (2,3) both touch the corrupt cloud.
    EXPECT_EQ(s.completed, 1);
    ASSERT_EQ(s.failures.size(), 2u);
    EXPECT_TRUE(s.failures[0].epoch == 1 || s.failures[0].epoch == 2);
    EXPECT_TRUE(fs::exists(dir_ / "out" / "pair_000000" / "report.json"));
    EXPECT_FALSE(fs::exists(dir_ / "out" / "pair_000001" / "report.json"));
}

/// Builds an estimate directory holding ground-truth rasters, bypassing the
/// solver; lets the profile/eval machinery be tested exactly and fast.
void write_gt_estimates(const fs::path& out, const SyntheticScene& scene) {
    fs::create_directories(out);
    nlohmann::json info{{"calibration", calibration_to_json(scene.rig)},
                        {"frame_interval", scene.frame_interval},
                        {"frame_start", 0},
                        {"frame_end", static_cast<int>(scene.images.size()) - 1},
                        {"eta", 0.5},
                        {"seed", 7},
                        {"eps_static", 0.5}};
    std::ofstream os(out / "dataset.json");
    os << info.dump(2) << "\n";
    os.close();
    for (std::size_t t = 0; t + 1 < scene.images.size(); ++t) {
        PairEstimate est;
        est.flow_f = scene.gt_flow[t];
        // Backward flow: exact inverse for uniform pixel translation; for
        // profile motion this is approximate but unused by these tests.
        est.flow_b = scene.gt_flow[t];
        for (double& d : est.flow_b.data) d = -d;
        est.depth_t = scene.gt_depth[t];
        est.depth_t1 = scene.gt_depth[t + 1];
        est.mask = motion_segment(est.flow_f, 0.5);
        save_pair_estimate(out / DatasetManifest::format_epoch("pair_%06d", t), est,
                           static_cast<int>(t));
    }
}

TEST_F(PipelineTest, ProfileOfConstantVelocitySceneIsFlat) {
    SceneSpec spec;
    spec.rig = default_synth_rig(96, 64);
    spec.texture_seed = 125;
    spec.distance = 20.0;
    spec.frames = 6;
    spec.lidar_points = 0;
    spec.motion.kind = MotionModel::Kind::Profile;
    spec.motion.peak_speed = 0.06;
    spec.motion.parabolic = false;
    const SyntheticScene scene = generate(spec);
    write_gt_estimates(dir_ / "est", scene);

    ProfileOptions opt;
    opt.region = RegionBox{-2.0, 2.0, -2.0, 2.0};
    cmd_profile(dir_ / "est", opt, dir_ / "profile.csv");

    std::ifstream is(dir_ / "profile.csv");
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "epoch,time_s,speed_mps");
    const double expect = 0.06 / spec.frame_interval;
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string epoch, time, speed;
        std::getline(ss, epoch, ',');
        std::getline(ss, time, ',');
        std::getline(ss, speed, ',');
        EXPECT_NEAR(std::stod(speed), expect, 0.05 * expect) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 5);
}

TEST_F(PipelineTest, ProfileRecoversPiecewiseSchedule) {
    SceneSpec spec;
    spec.rig = default_synth_rig(96, 64);
    spec.texture_seed = 126;
    spec.distance = 20.0;
    spec.frames = 9;
    spec.lidar_points = 0;
    spec.motion.kind = MotionModel::Kind::Profile;
    spec.motion.peak_speed = 0.04;
    spec.motion.parabolic = false;
    spec.motion.schedule = {1, 1, 1, 1, 2, 2, 2, 2};
    const SyntheticScene scene = generate(spec);
    write_gt_estimates(dir_ / "est", scene);

    ProfileOptions opt;
    opt.region = RegionBox{-2.0, 2.0, -2.0, 2.0};
    const EstimateSet set = load_estimate_set(dir_ / "est");
    const ProfileResult result = compute_profile(set, opt);
    ASSERT_EQ(result.profile.speeds.size(), 8u);
    // Segment interiors (excluding epochs adjacent to the speed switch at
    // pair 4, where constant-velocity smoothing straddles the boundary).
    for (const int e : {0, 1, 2, 5, 6, 7}) {
        ASSERT_TRUE(result.profile.speeds[e].has_value());
        const double expect = scene.gt_speed_schedule[e];
        EXPECT_NEAR(*result.profile.speeds[e], expect, 0.05 * expect) << "epoch " << e;
    }
}

TEST_F(PipelineTest, EvalOnGtEstimatesIsNearPerfect) {
    SceneSpec spec = small_scene(3, 127);
    spec.lidar_points = 700;
    cmd_synth(spec, dir_ / "data");
    const SyntheticScene scene = generate(spec);
    write_gt_estimates(dir_ / "est", scene);

    EvalOptions opt;
    opt.metrics = {"rmsd", "census", "depth", "epe"};
    nlohmann::json report;
    const bool ok =
        cmd_eval(dir_ / "est", load_manifest(dir_ / "data" / "manifest.json"), opt, &report);
    EXPECT_TRUE(ok);
    ASSERT_TRUE(report.contains("summary"));
    // Integer translation: reconstruction is sampling at exact pixels, and
    // the only error left is PNG quantization.
    EXPECT_LT(report["summary"]["rmsd"].get<double>(), 0.01);
    EXPECT_LT(report["summary"]["census"].get<double>(), 0.05);
    EXPECT_EQ(report["summary"]["epe"]["mean"].get<double>(), 0.0);
    EXPECT_LT(report["summary"]["depth"]["abs_rel"].get<double>(), 0.2);
    EXPECT_TRUE(report["summary"]["depth"].contains("mae10") ||
                report["summary"]["depth"].contains("mae50"));
}

TEST_F(PipelineTest, ZeroFlowEstimateHasWorseRmsdThanGtFlow) {
    const SceneSpec spec = small_scene(2, 128);
    cmd_synth(spec, dir_ / "data");
    const SyntheticScene scene = generate(spec);
    write_gt_estimates(dir_ / "gt_est", scene);

    SyntheticScene zeroed = scene;
    for (Field& f : zeroed.gt_flow)
        for (double& d : f.data) d = 0.0;
    write_gt_estimates(dir_ / "zero_est", zeroed);

    const DatasetManifest m = load_manifest(dir_ / "data" / "manifest.json");
    EvalOptions opt;
    opt.metrics = {"rmsd"};
    nlohmann::json gt_report, zero_report;
    cmd_eval(dir_ / "gt_est", m, opt, &gt_report);
    cmd_eval(dir_ / "zero_est", m, opt, &zero_report);
    EXPECT_GT(zero_report["summary"]["rmsd"].get<double>(),
              gt_report["summary"]["rmsd"].get<double>());
}

TEST_F(PipelineTest, EvalMarksMissingGtUnavailable) {
    SceneSpec spec = small_scene(2, 129);
    cmd_synth(spec, dir_ / "data");
    // Strip the GT references from the manifest.
    nlohmann::json j;
    {
        std::ifstream is(dir_ / "data" / "manifest.json");
        is >> j;
    }
    j.erase("gt_flow_dir");
    j.erase("gt_flow_pattern");
    {
        std::ofstream os(dir_ / "data" / "manifest.json");
        os << j.dump(2);
    }
    const SyntheticScene scene = generate(spec);
    write_gt_estimates(dir_ / "est", scene);
    EvalOptions opt;
    opt.metrics = {"rmsd", "epe"};
    nlohmann::json report;
    const bool ok =
        cmd_eval(dir_ / "est", load_manifest(dir_ / "data" / "manifest.json"), opt, &report);
    EXPECT_FALSE(ok);
    EXPECT_EQ(report["summary"]["epe"]["available"], false);
}

TEST_F(PipelineTest, LiftWritesSceneFlowRasters) {
    const SceneSpec spec = small_scene(2, 130);
    const SyntheticScene scene = generate(spec);
    write_gt_estimates(dir_ / "est", scene);
    cmd_lift(dir_ / "est");
    EXPECT_TRUE(fs::exists(dir_ / "est" / "pair_000000" / "velocity.dflo"));
    EXPECT_TRUE(fs::exists(dir_ / "est" / "pair_000000" / "points.dflo"));
    const Field vel = load_raster(dir_ / "est" / "pair_000000" / "velocity.dflo");
    const SceneFlowFrame frame = lift_to_scene_flow(
        scene.gt_flow[0], scene.gt_depth[0], scene.gt_depth[1], scene.rig);
    for (std::size_t i = 0; i < vel.data.size(); ++i)
        EXPECT_EQ(vel.data[i], static_cast<double>(static_cast<float>(frame.velocity.data[i])));
}

TEST_F(PipelineTest, CrossSectionCsvWrittenWithBand) {
    SceneSpec spec;
    spec.rig = default_synth_rig(96, 64);
    spec.texture_seed = 131;
    spec.distance = 20.0;
    spec.frames = 3;
    spec.lidar_points = 0;
    spec.motion.kind = MotionModel::Kind::Profile;
    spec.motion.peak_speed = 0.05;
    spec.motion.parabolic = true;
    spec.motion.chan_lo = -4.0;
    spec.motion.chan_hi = 4.0;
    const SyntheticScene scene = generate(spec);
    write_gt_estimates(dir_ / "est", scene);
    ProfileOptions opt;
    opt.region = RegionBox{-2.0, 2.0, -2.0, 2.0};
    opt.band = {{24, 40}};
    opt.bins = 12;
    cmd_profile(dir_ / "est", opt, dir_ / "profile.csv");
    EXPECT_TRUE(fs::exists(dir_ / "cross_section_000000.csv"));
    std::ifstream is(dir_ / "cross_section_000000.csv");
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "x_m,speed_mps");
    int rows = 0;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    EXPECT_GT(rows, 4);
}

TEST_F(PipelineTest, ProfileRequiresTwoEstimates) {
    const SceneSpec spec = small_scene(2, 132);
    const SyntheticScene scene = generate(spec);
    write_gt_estimates(dir_ / "est", scene);  // only 1 pair
    ProfileOptions opt;
    EXPECT_THROW(cmd_profile(dir_ / "est", opt, dir_ / "p.csv"), ConfigError);
}

}  // namespace
