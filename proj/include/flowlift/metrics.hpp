#pragma once

// Evaluation metrics: RMSD frame interpolation, ternary census loss, global
// SSIM, banded depth MAE / absolute relative error against a LiDAR cloud,
// and endpoint error for synthetic ground truth.

#include <cmath>
#include <cstddef>
#include <optional>

#include "flowlift/error.hpp"
#include "flowlift/field.hpp"
#include "flowlift/geom.hpp"

namespace flowlift {

/// Root-mean-square deviation over all pixels and channels.
inline double rmsd(const Field& image, const Field& reconstruction) {
    require_same_shape(image, reconstruction, "rmsd");
    double s = 0.0;
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        const double d = image.data[i] - reconstruction.data[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(image.data.size()));
}

namespace detail {

inline int census_code(double neighbor, double center, double eps) {
    if (neighbor - center >= eps) return -1;
    if (center - neighbor >= eps) return +1;
    return 0;
}

}  // namespace detail

/// Ternary census transform loss: each pixel's 3x3 neighborhood (clamped at
/// borders) is encoded as eight {-1,0,+1} entries with threshold eps_c; the
/// loss is the mean fraction of mismatched entries between the two images.
/// Invariant to global brightness shifts.
inline double census_loss(const Field& image, const Field& reconstruction,
                          double eps_c = 0.04) {
    require_same_shape(image, reconstruction, "census_loss");
    const int W = image.width, H = image.height, C = image.channels;
    std::size_t mismatches = 0;
    std::size_t entries = 0;
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            for (int c = 0; c < C; ++c) {
                const double a0 = image.at(u, v, c);
                const double b0 = reconstruction.at(u, v, c);
                for (int dv = -1; dv <= 1; ++dv) {
                    const int vv = std::clamp(v + dv, 0, H - 1);
                    for (int du = -1; du <= 1; ++du) {
                        if (du == 0 && dv == 0) continue;
                        const int uu = std::clamp(u + du, 0, W - 1);
                        const int ca = detail::census_code(image.at(uu, vv, c), a0, eps_c);
                        const int cb =
                            detail::census_code(reconstruction.at(uu, vv, c), b0, eps_c);
                        mismatches += ca != cb ? 1 : 0;
                        ++entries;
                    }
                }
            }
        }
    }
    return static_cast<double>(mismatches) / static_cast<double>(entries);
}

/// Global structural similarity index with c1 = 0.01^2, c2 = 0.03^2: one
/// mean/variance/covariance triple over the whole raster.
inline double ssim_index(const Field& x, const Field& y) {
    require_same_shape(x, y, "ssim_index");
    const double n = static_cast<double>(x.data.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        mx += x.data[i];
        my += y.data[i];
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double dx = x.data[i] - mx;
        const double dy = y.data[i] - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    return ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
           ((mx * mx + my * my + c1) * (vx + vy + c2));
}

/// Depth accuracy against LiDAR ground truth, bucketed by Euclidean distance
/// from the sensor. Bands are cumulative (within 10 m / 30 m / 50 m); a band
/// with no points is reported missing. abs_rel is in percent over the <=50 m
/// points.
struct DepthEvalReport {
    std::optional<double> mae10;
    std::optional<double> mae30;
    std::optional<double> mae50;
    std::optional<double> abs_rel;
    std::size_t n10 = 0, n30 = 0, n50 = 0;
};

/// Projects every cloud point, samples the dense prediction bilinearly at the
/// sub-pixel projection, and compares against the point's camera depth.
/// Points behind the camera or projecting outside the frame are skipped.
inline DepthEvalReport depth_eval(const Field& depth, const PointCloud& gt_cloud,
                                  const CalibratedRig& rig) {
    if (depth.width != rig.width || depth.height != rig.height)
        throw ShapeError("depth_eval: depth dimensions do not match the rig");
    double err10 = 0.0, err30 = 0.0, err50 = 0.0, rel = 0.0;
    DepthEvalReport rep;
    for (const Vec3& p : gt_cloud.points) {
        Pixel pix;
        double z_gt = 0.0;
        if (!try_project(p, rig, &pix, &z_gt)) continue;
        if (pix.u < 0.0 || pix.u > rig.width - 1 || pix.v < 0.0 || pix.v > rig.height - 1)
            continue;
        const double pred = sample_tap(depth, make_tap(depth, pix.u, pix.v), 0);
        const double err = std::abs(pred - z_gt);
        const double dist = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if (dist > 50.0) continue;
        err50 += err;
        rel += err / z_gt;
        ++rep.n50;
        if (dist <= 30.0) {
            err30 += err;
            ++rep.n30;
        }
        if (dist <= 10.0) {
            err10 += err;
            ++rep.n10;
        }
    }
    if (rep.n10 > 0) rep.mae10 = err10 / static_cast<double>(rep.n10);
    if (rep.n30 > 0) rep.mae30 = err30 / static_cast<double>(rep.n30);
    if (rep.n50 > 0) {
        rep.mae50 = err50 / static_cast<double>(rep.n50);
        rep.abs_rel = 100.0 * rel / static_cast<double>(rep.n50);
    }
    return rep;
}

struct EndpointError {
    double mean = 0.0;
    double fraction_below = 0.0;
};

/// Mean per-pixel L2 flow difference and the fraction of pixels under the
/// threshold tau.
inline EndpointError endpoint_error(const Field& flow, const Field& gt_flow,
                                    double tau = 1.0) {
    require_same_shape(flow, gt_flow, "endpoint_error");
    if (flow.channels != 2) throw ShapeError("endpoint_error: flows must have 2 channels");
    const int W = flow.width, H = flow.height;
    double sum = 0.0;
    std::size_t below = 0;
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            const double du = flow.at(u, v, 0) - gt_flow.at(u, v, 0);
            const double dv = flow.at(u, v, 1) - gt_flow.at(u, v, 1);
            const double e = std::sqrt(du * du + dv * dv);
            sum += e;
            below += e < tau ? 1 : 0;
        }
    }
    const double n = static_cast<double>(W) * H;
    return {sum / n, static_cast<double>(below) / n};
}

}  // namespace flowlift
