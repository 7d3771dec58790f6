#pragma once

// Multi-frame temporal smoothing of flow estimates, lifting optical flow to
// 3D surface velocity, and the flow-speed products: time profiles inside a
// region of interest and cross-channel speed sections.

#include <cmath>
#include <optional>
#include <vector>

#include "flowlift/error.hpp"
#include "flowlift/field.hpp"
#include "flowlift/geom.hpp"

namespace flowlift {

/// Back-projected pixels and their per-frame 3D displacement, LiDAR frame.
struct SceneFlowFrame {
    int epoch = 0;
    Field points_t;   // H x W x 3 [m]
    Field velocity;   // H x W x 3 [m / frame interval]
    Field valid;      // H x W x 1, 0 or 1
};

/// Axis-aligned x/y box in the LiDAR frame; z is unconstrained (a vertical
/// column through the channel).
struct RegionBox {
    double x0 = -1.0, x1 = 1.0;
    double y0 = 19.0, y1 = 21.0;

    bool contains(double x, double y) const {
        return x >= x0 && x <= x1 && y >= y0 && y <= y1;
    }
};

/// Mean surface speed per epoch inside a region; entries without any valid
/// in-region pixel are missing rather than zero.
struct SpeedProfile {
    std::vector<int> epochs;
    std::vector<std::optional<double>> speeds;  // [m/s]
    RegionBox region;
    double frame_interval = 0.04;  // [s]
};

// ---------------------------------------------------------------------------

/// Constant-velocity temporal smoothing of the middle frame's forward flow:
/// the previous pair's flow warped forward, the next pair's flow pulled back,
/// and the frame's own estimate, combined with weights summing to 1.
inline Field smooth_flow(const Field& flow0_f, const Field& flow0_b, const Field& flow1_f,
                         const Field& flow2_f, double l0, double l1, double l2) {
    if (std::abs(l0 + l1 + l2 - 1.0) > 1e-12)
        throw ConfigError("smooth_flow: weights must sum to 1");
    require_same_shape(flow0_f, flow1_f, "smooth_flow");
    require_same_shape(flow2_f, flow1_f, "smooth_flow");
    require_same_shape(flow0_b, flow1_f, "smooth_flow");
    const Field prev = backward_warp(flow0_f, flow0_b);
    const Field next = backward_warp(flow2_f, flow1_f);
    Field out(flow1_f.width, flow1_f.height, 2);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = l0 * prev.data[i] + l1 * flow1_f.data[i] + l2 * next.data[i];
    return out;
}

/// Lifts a 2D flow field to 3D: back-projects each pixel at its depth, then
/// its flow target at the bilinearly sampled second-frame depth, and takes
/// the difference. Pixels with nonpositive depth at either end are invalid.
inline SceneFlowFrame lift_to_scene_flow(const Field& flow_f, const Field& depth_t,
                                         const Field& depth_t1, const CalibratedRig& rig) {
    require_same_grid(flow_f, depth_t, "lift_to_scene_flow");
    require_same_grid(flow_f, depth_t1, "lift_to_scene_flow");
    if (flow_f.channels != 2)
        throw ShapeError("lift_to_scene_flow: flow must have 2 channels");
    const int W = flow_f.width, H = flow_f.height;
    SceneFlowFrame out;
    out.points_t = Field(W, H, 3);
    out.velocity = Field(W, H, 3);
    out.valid = Field(W, H, 1, 0.0);
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            const double z0 = depth_t.at(u, v);
            if (!(z0 > 0.0) || !std::isfinite(z0)) continue;
            const double tu = u + flow_f.at(u, v, 0);
            const double tv = v + flow_f.at(u, v, 1);
            const double z1 = sample_tap(depth_t1, make_tap(depth_t1, tu, tv), 0);
            if (!(z1 > 0.0) || !std::isfinite(z1)) continue;
            const Vec3 p0 = back_project(u, v, z0, rig);
            const Vec3 p1 = back_project(tu, tv, z1, rig);
            for (int c = 0; c < 3; ++c) {
                out.points_t.at(u, v, c) = p0[c];
                out.velocity.at(u, v, c) = p1[c] - p0[c];
            }
            out.valid.at(u, v) = 1.0;
        }
    }
    return out;
}

/// Per-epoch mean of ||velocity||_2 / frame_interval over valid pixels whose
/// back-projected point lies inside the region (x/y containment only).
inline SpeedProfile speed_profile(const std::vector<SceneFlowFrame>& frames,
                                  const RegionBox& region, double frame_interval) {
    if (frames.empty()) throw ConfigError("speed_profile: no frames");
    if (!(frame_interval > 0.0))
        throw ConfigError("speed_profile: frame interval must be positive");
    SpeedProfile profile;
    profile.region = region;
    profile.frame_interval = frame_interval;
    for (const SceneFlowFrame& f : frames) {
        double sum = 0.0;
        std::size_t count = 0;
        for (int v = 0; v < f.valid.height; ++v) {
            for (int u = 0; u < f.valid.width; ++u) {
                if (f.valid.at(u, v) == 0.0) continue;
                if (!region.contains(f.points_t.at(u, v, 0), f.points_t.at(u, v, 1)))
                    continue;
                const double vx = f.velocity.at(u, v, 0);
                const double vy = f.velocity.at(u, v, 1);
                const double vz = f.velocity.at(u, v, 2);
                sum += std::sqrt(vx * vx + vy * vy + vz * vz);
                ++count;
            }
        }
        profile.epochs.push_back(f.epoch);
        if (count > 0)
            profile.speeds.push_back(sum / (static_cast<double>(count) * frame_interval));
        else
            profile.speeds.push_back(std::nullopt);
    }
    return profile;
}

/// One cross-section sample: lateral position [m] against mean speed [m/s].
struct CrossSectionBin {
    double x = 0.0;
    double speed = 0.0;
};

/// Collects (x, speed) for valid pixels whose image row lies in
/// [v_lo, v_hi], averaged into `bins` uniform x-bins across the selection's
/// lateral extent. Empty selection yields an empty list.
inline std::vector<CrossSectionBin> channel_cross_section(const SceneFlowFrame& frame,
                                                          const Field& speeds, int v_lo,
                                                          int v_hi, int bins = 32) {
    require_same_grid(frame.valid, speeds, "channel_cross_section");
    if (v_lo < 0 || v_hi >= frame.valid.height)
        throw ConfigError("channel_cross_section: row band outside image height");
    if (bins < 1) throw ConfigError("channel_cross_section: bins must be >= 1");
    std::vector<double> xs;
    std::vector<double> sp;
    for (int v = v_lo; v <= v_hi; ++v) {
        for (int u = 0; u < frame.valid.width; ++u) {
            if (frame.valid.at(u, v) == 0.0) continue;
            xs.push_back(frame.points_t.at(u, v, 0));
            sp.push_back(speeds.at(u, v));
        }
    }
    if (xs.empty()) return {};
    double xmin = xs[0], xmax = xs[0];
    for (double x : xs) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    const double span = xmax - xmin;
    std::vector<double> sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        int b = span > 0.0 ? static_cast<int>((xs[i] - xmin) / span * bins) : 0;
        b = std::clamp(b, 0, bins - 1);
        sum[b] += sp[i];
        ++count[b];
    }
    std::vector<CrossSectionBin> out;
    for (int b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        const double center = xmin + (b + 0.5) * span / bins;
        out.push_back({center, sum[b] / static_cast<double>(count[b])});
    }
    return out;
}

}  // namespace flowlift
