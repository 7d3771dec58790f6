#pragma once

// Camera model and LiDAR <-> camera geometry: pinhole projection, depth
// back-projection, sparse range-map rasterization, and deterministic point
// cloud downsampling.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "flowlift/error.hpp"
#include "flowlift/field.hpp"
#include "flowlift/rng.hpp"

namespace flowlift {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline Vec3 mat3_mul(const Mat3& m, const Vec3& x) {
    return {m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
            m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
            m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2]};
}

inline Vec3 mat3_tmul(const Mat3& m, const Vec3& x) {  // transpose multiply
    return {m[0][0] * x[0] + m[1][0] * x[1] + m[2][0] * x[2],
            m[0][1] * x[0] + m[1][1] * x[1] + m[2][1] * x[2],
            m[0][2] * x[0] + m[1][2] * x[1] + m[2][2] * x[2]};
}

inline Mat3 identity3() {
    return {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
}

/// Pinhole intrinsics plus the rigid LiDAR->camera transform. A LiDAR-frame
/// point P maps to camera frame as R*P + t and projects through K.
struct CalibratedRig {
    double fx = 0.0, fy = 0.0;  // focal lengths [px]
    double px = 0.0, py = 0.0;  // principal point [px]
    Mat3 R = identity3();       // LiDAR->camera rotation
    Vec3 t = {0.0, 0.0, 0.0};   // LiDAR->camera translation [m]
    int width = 0, height = 0;

    void validate() const;
};

inline void CalibratedRig::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw ConfigError("rig: focal lengths must be positive");
    if (!(px >= 0.0 && px < width) || !(py >= 0.0 && py < height))
        throw ConfigError("rig: principal point outside image");
    // R orthonormal with det +1
    double max_err = 0.0;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += R[i][k] * R[j][k];
            max_err = std::max(max_err, std::abs(dot - (i == j ? 1.0 : 0.0)));
        }
    }
    const double det = R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1]) -
                       R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0]) +
                       R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0]);
    if (max_err > 1e-9 || std::abs(det - 1.0) > 1e-9)
        throw ConfigError("rig: R is not a proper rotation");
}

/// 3D points in the LiDAR frame, meters.
struct PointCloud {
    std::vector<Vec3> points;
    int epoch = 0;
};

/// Image-plane raster of camera-frame depths. depth(p) > 0 iff valid(p);
/// invalid pixels store 0.
struct SparseRangeMap {
    Field depth;        // H x W x 1, meters
    Field valid;        // H x W x 1, 0 or 1

    SparseRangeMap() = default;
    SparseRangeMap(int w, int h) : depth(w, h, 1, 0.0), valid(w, h, 1, 0.0) {}
};

struct Pixel {
    double u, v;
};

/// Non-throwing projection; returns false for points at or behind the camera
/// plane (z_cam <= 1e-9).
inline bool try_project(const Vec3& point, const CalibratedRig& rig, Pixel* pix,
                        double* z_cam) {
    const Vec3 rp = mat3_mul(rig.R, point);
    const Vec3 pc = {rp[0] + rig.t[0], rp[1] + rig.t[1], rp[2] + rig.t[2]};
    if (pc[2] <= 1e-9) return false;
    *z_cam = pc[2];
    *pix = {rig.fx * pc[0] / pc[2] + rig.px, rig.fy * pc[1] / pc[2] + rig.py};
    return true;
}

/// Projects a LiDAR-frame point: p = K[R|t]P dehomogenized. Returns the pixel
/// and the camera-frame depth (the homogeneous z before division).
inline Pixel project(const Vec3& point, const CalibratedRig& rig, double* z_cam) {
    Pixel pix;
    if (!try_project(point, rig, &pix, z_cam))
        throw GeometryError("project: point behind camera");
    return pix;
}

/// Inverse of project for a known depth: P = z * R^T K^{-1} p - R^T t,
/// returning the LiDAR-frame point.
inline Vec3 back_project(double u, double v, double z, const CalibratedRig& rig) {
    if (!(z > 0.0)) throw GeometryError("back_project: depth must be positive");
    const Vec3 ray = {(u - rig.px) / rig.fx, (v - rig.py) / rig.fy, 1.0};
    const Vec3 cam = {z * ray[0] - rig.t[0], z * ray[1] - rig.t[1], z * ray[2] - rig.t[2]};
    return mat3_tmul(rig.R, cam);
}

/// Projects every cloud point, rounds to the nearest integer pixel, and keeps
/// the smallest camera depth per pixel (nearest surface wins). Points behind
/// the camera or outside the frame are dropped.
inline SparseRangeMap rasterize_range_map(const PointCloud& cloud, const CalibratedRig& rig) {
    SparseRangeMap map(rig.width, rig.height);
    for (const Vec3& p : cloud.points) {
        double z = 0.0;
        Pixel px;
        if (!try_project(p, rig, &px, &z)) continue;
        const int ui = static_cast<int>(std::lround(px.u));
        const int vi = static_cast<int>(std::lround(px.v));
        if (ui < 0 || ui >= rig.width || vi < 0 || vi >= rig.height) continue;
        if (map.valid.at(ui, vi) == 0.0 || z < map.depth.at(ui, vi)) {
            map.depth.at(ui, vi) = z;
            map.valid.at(ui, vi) = 1.0;
        }
    }
    return map;
}

/// Deterministic split of a cloud into a uniformly sampled subset of
/// round(eta*n) points and the held-out remainder. Both halves preserve the
/// input ordering.
struct CloudSplit {
    PointCloud kept;
    PointCloud held_out;
};

inline CloudSplit split_cloud(const PointCloud& cloud, double eta, std::uint64_t seed) {
    if (!(eta > 0.0 && eta <= 1.0))
        throw ConfigError("split_cloud: eta must be in (0, 1]");
    const std::size_t n = cloud.points.size();
    const std::size_t k =
        static_cast<std::size_t>(std::llround(eta * static_cast<double>(n)));
    CloudSplit out;
    out.kept.epoch = cloud.epoch;
    out.held_out.epoch = cloud.epoch;
    if (k >= n) {
        out.kept.points = cloud.points;
        return out;
    }
    Rng rng(seed);
    const std::vector<std::size_t> chosen = rng.sample_indices(n, k);
    out.kept.points.reserve(k);
    out.held_out.points.reserve(n - k);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (next < chosen.size() && chosen[next] == i) {
            out.kept.points.push_back(cloud.points[i]);
            ++next;
        } else {
            out.held_out.points.push_back(cloud.points[i]);
        }
    }
    return out;
}

/// Uniform sample without replacement of round(eta*n) points; identity (order
/// preserved) for eta = 1. Deterministic given the seed.
inline PointCloud downsample_cloud(const PointCloud& cloud, double eta, std::uint64_t seed) {
    return split_cloud(cloud, eta, seed).kept;
}

}  // namespace flowlift
