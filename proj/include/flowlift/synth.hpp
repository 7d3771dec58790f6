#pragma once

// Synthetic desk-scale scenes: a band-limited random texture on a (possibly
// tilted) plane, advected by a configurable motion model, observed through a
// calibrated rig, with LiDAR-like clouds sampled from the true surface and
// exact ground-truth flow/depth/velocity rasters. Everything is
// deterministic given the seeds.

#include <cmath>
#include <cstdint>
#include <vector>

#include "flowlift/error.hpp"
#include "flowlift/field.hpp"
#include "flowlift/geom.hpp"
#include "flowlift/rng.hpp"

namespace flowlift {

struct MotionModel {
    enum class Kind {
        None,           // static scene
        UniformPixels,  // exact constant pixel flow (requires slope == 0)
        Profile,        // down-slope surface motion with a lateral speed profile
    };
    Kind kind = Kind::None;

    // UniformPixels
    double flow_u = 0.0;  // [px/frame]
    double flow_v = 0.0;  // [px/frame]

    // Profile: material speed along the down-slope plane axis is
    // peak_speed * profile(s1) * schedule[t], where profile is 1 (flat) or a
    // parabola inside the lateral channel [chan_lo, chan_hi] meters and 0 on
    // the banks outside it.
    double peak_speed = 0.0;       // [m/frame]
    double chan_lo = -1e9;         // [m] lateral channel extent
    double chan_hi = 1e9;
    bool parabolic = false;
    std::vector<double> schedule;  // per-pair speed scale; empty = all ones
};

struct SceneSpec {
    std::uint64_t texture_seed = 1;
    double distance = 20.0;  // depth at the principal ray [m]
    double slope = 0.0;      // depth tilt ky: plane z = distance + ky * y_cam
    MotionModel motion;
    int lidar_points = 4000;   // returns per frame
    double image_noise = 0.0;  // sigma on [0,1] intensities
    double depth_noise = 0.0;  // sigma along the ray [m]
    int frames = 2;
    double frame_interval = 0.04;  // [s]
    CalibratedRig rig;
    double min_wavelength_px = 6.0;  // texture band limits at the image scale
    double max_wavelength_px = 64.0;
    int texture_waves = 40;
};

struct SyntheticScene {
    CalibratedRig rig;
    double frame_interval = 0.04;
    std::vector<Field> images;       // frames, grayscale in [0,1]
    std::vector<PointCloud> clouds;  // frames, LiDAR frame
    std::vector<Field> gt_depth;     // frames, camera-frame z [m]
    std::vector<Field> gt_flow;      // frames-1, pixel flow t -> t+1
    std::vector<Field> gt_velocity;  // frames-1, LiDAR-frame 3D motion [m/frame]
    std::vector<double> gt_speed_schedule;  // frames-1, nominal channel speed [m/s]
};

/// Default desk-scale rig: identity extrinsics, 256x160, f = 300 px.
inline CalibratedRig default_synth_rig(int width = 256, int height = 160,
                                       double focal = 300.0) {
    CalibratedRig rig;
    rig.fx = rig.fy = focal;
    rig.px = width / 2.0;
    rig.py = height / 2.0;
    rig.width = width;
    rig.height = height;
    return rig;
}

/// Plane parameters (distance, slope) such that the depth runs from z_near at
/// the top image row to z_far at the bottom row.
inline void plane_for_depth_band(const CalibratedRig& rig, double z_near, double z_far,
                                 double* distance, double* slope) {
    const double rv_min = (0.0 - rig.py) / rig.fy;
    const double rv_max = (rig.height - 1.0 - rig.py) / rig.fy;
    const double a = 1.0 / z_near, b = 1.0 / z_far;
    const double z0 = 1.0 / (a + (a - b) * rv_min / (rv_max - rv_min));
    *distance = z0;
    *slope = z0 * (a - b) / (rv_max - rv_min);
}

namespace detail {

/// Sum of random cosines with wavelengths log-uniform in the configured band;
/// smooth and analytic, so warped resampling stays accurate.
struct BandTexture {
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::vector<Wave> waves;
    double gain = 1.2;

    static BandTexture make(const SceneSpec& spec, double max_depth) {
        BandTexture tex;
        Rng rng(spec.texture_seed);
        // Wavelengths convert to meters at the deepest visible point so the
        // pixel-space band limit holds across the whole (tilted) plane.
        const double meters_per_px = max_depth / spec.rig.fx;
        const double lo = spec.min_wavelength_px * meters_per_px;
        const double hi = spec.max_wavelength_px * meters_per_px;
        tex.waves.reserve(spec.texture_waves);
        for (int i = 0; i < spec.texture_waves; ++i) {
            const double wavelength = lo * std::exp(rng.uniform() * std::log(hi / lo));
            const double k = 2.0 * 3.14159265358979323846 / wavelength;
            const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            tex.waves.push_back({k * std::cos(theta), k * std::sin(theta),
                                 rng.uniform(0.0, 2.0 * 3.14159265358979323846),
                                 1.0 / spec.texture_waves});
        }
        return tex;
    }

    double intensity(double s1, double s2) const {
        double v = 0.0;
        for (const Wave& w : waves)
            v += w.amp * std::cos(w.kx * s1 + w.ky * s2 + w.phase);
        return std::clamp(0.5 + gain * v, 0.0, 1.0);
    }
};

/// Plane geometry in the camera frame: z = distance + slope * y, i.e.
/// n = (0, -slope, 1), n . P = distance. s1 runs along camera x, s2 along the
/// unit down-slope axis (0, 1, slope)/sqrt(1+slope^2).
struct PlaneGeometry {
    double distance, slope, e2y, e2z;

    explicit PlaneGeometry(const SceneSpec& spec)
        : distance(spec.distance), slope(spec.slope) {
        const double norm = std::sqrt(1.0 + slope * slope);
        e2y = 1.0 / norm;
        e2z = slope / norm;
    }

    /// Camera-frame depth of the ray through pixel (u,v); the tilt runs along
    /// v only, so u never enters.
    double depth(const CalibratedRig& rig, double /*u*/, double v) const {
        const double rv = (v - rig.py) / rig.fy;
        const double denom = 1.0 - slope * rv;
        if (!(denom > 1e-6)) throw ConfigError("synth: plane not visible at pixel");
        return distance / denom;
    }

    /// Camera-frame point on the plane under pixel (u,v).
    Vec3 point(const CalibratedRig& rig, double u, double v) const {
        const double z = depth(rig, u, v);
        return {z * (u - rig.px) / rig.fx, z * (v - rig.py) / rig.fy, z};
    }

    /// In-plane coordinates (lateral, down-slope) of a camera-frame point.
    void coords(const Vec3& p, double* s1, double* s2) const {
        *s1 = p[0];
        *s2 = p[1] * e2y + (p[2] - distance) * e2z;
    }

    Vec3 displaced(const Vec3& p, double along_slope) const {
        return {p[0], p[1] + along_slope * e2y, p[2] + along_slope * e2z};
    }
};

}  // namespace detail

/// Lateral speed profile factor in [0,1] at plane coordinate s1.
inline double motion_profile(const MotionModel& m, double s1) {
    if (s1 < m.chan_lo || s1 > m.chan_hi) return 0.0;
    if (!m.parabolic) return 1.0;
    const double c = 0.5 * (m.chan_lo + m.chan_hi);
    const double r = 0.5 * (m.chan_hi - m.chan_lo);
    const double t = (s1 - c) / r;
    return std::max(0.0, 1.0 - t * t);
}

inline SyntheticScene generate(const SceneSpec& spec) {
    if (spec.frames < 1) throw ConfigError("synth: need at least one frame");
    if (spec.lidar_points < 0) throw ConfigError("synth: negative lidar_points");
    if (spec.motion.kind == MotionModel::Kind::UniformPixels && spec.slope != 0.0)
        throw ConfigError("synth: uniform pixel motion requires a fronto-parallel plane");
    spec.rig.validate();

    const CalibratedRig& rig = spec.rig;
    const detail::PlaneGeometry plane(spec);

    // Depth must stay inside (0, 100] m over the full frame.
    double max_depth = 0.0;
    for (int corner = 0; corner < 4; ++corner) {
        const double u = (corner & 1) ? rig.width - 1.0 : 0.0;
        const double v = (corner & 2) ? rig.height - 1.0 : 0.0;
        const double z = plane.depth(rig, u, v);
        if (!(z > 0.0 && z <= 100.0))
            throw ConfigError("synth: plane depth outside (0, 100] m");
        max_depth = std::max(max_depth, z);
    }
    const detail::BandTexture tex = detail::BandTexture::make(spec, max_depth);

    const double mpp = spec.distance / rig.fx;  // meters per pixel at center depth
    const bool uniform = spec.motion.kind == MotionModel::Kind::UniformPixels;
    const double du_m = uniform ? spec.motion.flow_u * mpp : 0.0;
    const double dv_m = uniform ? spec.motion.flow_v * spec.distance / rig.fy : 0.0;

    const auto schedule_at = [&](int t) {
        if (spec.motion.kind != MotionModel::Kind::Profile) return 1.0;
        if (spec.motion.schedule.empty()) return 1.0;
        return spec.motion.schedule[std::min<std::size_t>(t, spec.motion.schedule.size() - 1)];
    };
    // Cumulative down-slope displacement before frame t.
    std::vector<double> cum(spec.frames, 0.0);
    for (int t = 1; t < spec.frames; ++t)
        cum[t] = cum[t - 1] + spec.motion.peak_speed * schedule_at(t - 1);

    SyntheticScene scene;
    scene.rig = rig;
    scene.frame_interval = spec.frame_interval;

    for (int t = 0; t < spec.frames; ++t) {
        // Image: texture advected in plane coordinates.
        Field img(rig.width, rig.height, 1);
        for (int v = 0; v < rig.height; ++v) {
            for (int u = 0; u < rig.width; ++u) {
                double s1, s2;
                plane.coords(plane.point(rig, u, v), &s1, &s2);
                double val;
                if (uniform) {
                    val = tex.intensity(s1 - t * du_m, s2 - t * dv_m);
                } else {
                    val = tex.intensity(s1, s2 - cum[t] * motion_profile(spec.motion, s1));
                }
                img.at(u, v) = val;
            }
        }
        if (spec.image_noise > 0.0) {
            Rng noise(spec.texture_seed ^ (0xabcdef12345ull + 977ull * t));
            for (double& d : img.data)
                d = std::clamp(d + spec.image_noise * noise.normal(), 0.0, 1.0);
        }
        scene.images.push_back(std::move(img));

        // Ground-truth depth raster.
        Field depth(rig.width, rig.height, 1);
        for (int v = 0; v < rig.height; ++v)
            for (int u = 0; u < rig.width; ++u) depth.at(u, v) = plane.depth(rig, u, v);
        scene.gt_depth.push_back(std::move(depth));

        // LiDAR cloud: distinct random pixels back-projected onto the plane,
        // optionally perturbed along the ray so projections stay put.
        PointCloud cloud;
        cloud.epoch = t;
        Rng crng(spec.texture_seed ^ (0x51d5ca7e000ull + 131ull * t));
        const std::size_t total = static_cast<std::size_t>(rig.width) * rig.height;
        const std::vector<std::size_t> chosen = crng.sample_indices(
            total, std::min<std::size_t>(spec.lidar_points, total));
        cloud.points.reserve(chosen.size());
        for (std::size_t idx : chosen) {
            const int u = static_cast<int>(idx % rig.width);
            const int v = static_cast<int>(idx / rig.width);
            double z = plane.depth(rig, u, v);
            if (spec.depth_noise > 0.0) z = std::max(0.1, z + spec.depth_noise * crng.normal());
            const Vec3 pc = {z * (u - rig.px) / rig.fx, z * (v - rig.py) / rig.fy, z};
            // Camera frame -> LiDAR frame.
            const Vec3 shifted = {pc[0] - rig.t[0], pc[1] - rig.t[1], pc[2] - rig.t[2]};
            cloud.points.push_back(mat3_tmul(rig.R, shifted));
        }
        scene.clouds.push_back(std::move(cloud));
    }

    // Ground-truth flow and 3D velocity per frame pair.
    for (int t = 0; t + 1 < spec.frames; ++t) {
        Field flow(rig.width, rig.height, 2, 0.0);
        Field vel(rig.width, rig.height, 3, 0.0);
        for (int v = 0; v < rig.height; ++v) {
            for (int u = 0; u < rig.width; ++u) {
                Vec3 motion_cam = {0.0, 0.0, 0.0};
                if (uniform) {
                    flow.at(u, v, 0) = spec.motion.flow_u;
                    flow.at(u, v, 1) = spec.motion.flow_v;
                    motion_cam = {du_m, dv_m * plane.e2y, dv_m * plane.e2z};
                } else if (spec.motion.kind == MotionModel::Kind::Profile) {
                    const Vec3 p = plane.point(rig, u, v);
                    double s1, s2;
                    plane.coords(p, &s1, &s2);
                    const double w =
                        spec.motion.peak_speed * schedule_at(t) * motion_profile(spec.motion, s1);
                    if (w != 0.0) {  // banks carry exactly zero flow
                        const Vec3 moved = plane.displaced(p, w);
                        flow.at(u, v, 0) = rig.fx * moved[0] / moved[2] + rig.px - u;
                        flow.at(u, v, 1) = rig.fy * moved[1] / moved[2] + rig.py - v;
                        motion_cam = {0.0, w * plane.e2y, w * plane.e2z};
                    }
                }
                const Vec3 vlidar = mat3_tmul(rig.R, motion_cam);  // rotation only
                for (int c = 0; c < 3; ++c) vel.at(u, v, c) = vlidar[c];
            }
        }
        scene.gt_flow.push_back(std::move(flow));
        scene.gt_velocity.push_back(std::move(vel));

        double nominal = 0.0;
        if (uniform)
            nominal = std::hypot(du_m, dv_m) / spec.frame_interval;
        else if (spec.motion.kind == MotionModel::Kind::Profile)
            nominal = std::abs(spec.motion.peak_speed * schedule_at(t)) / spec.frame_interval;
        scene.gt_speed_schedule.push_back(nominal);
    }
    return scene;
}

}  // namespace flowlift
