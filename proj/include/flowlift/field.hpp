#pragma once

// Dense raster containers and the sampling/warping/pyramid primitives that
// every other module builds on. Pixel (u,v) addresses column u in [0,W) and
// row v in [0,H); integer coordinates sit on pixel centers. Out-of-bounds
// sampling clamps to the field edge.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "flowlift/error.hpp"

namespace flowlift {

/// H x W x C raster of doubles, row-major with interleaved channels.
struct Field {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Field() = default;
    Field(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int u, int v, int c = 0) {
        return data[(static_cast<std::size_t>(v) * width + u) * channels + c];
    }
    double at(int u, int v, int c = 0) const {
        return data[(static_cast<std::size_t>(v) * width + u) * channels + c];
    }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Field& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    bool same_grid(const Field& o) const {
        return width == o.width && height == o.height;
    }
};

inline void require_same_shape(const Field& a, const Field& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": field shapes differ");
}

inline void require_same_grid(const Field& a, const Field& b, const char* where) {
    if (!a.same_grid(b))
        throw ShapeError(std::string(where) + ": field grids differ");
}

// ---------------------------------------------------------------------------
// Bilinear sampling

/// Precomputed sample footprint: integer corners and interpolation weights
/// after clamping the position to [0,W-1] x [0,H-1].
struct BilinearTap {
    int u0, v0, u1, v1;
    double fu, fv;       // fractional offsets toward (u1,v1)
    bool inside_u, inside_v;  // position was strictly within the clamp range
};

inline BilinearTap make_tap(const Field& f, double u, double v) {
    BilinearTap t;
    if (!std::isfinite(u) || !std::isfinite(v)) {
        // Propagate non-finite positions as NaN samples rather than indexing
        // with undefined casts; energy checks report them by term.
        t.u0 = t.v0 = t.u1 = t.v1 = 0;
        t.fu = t.fv = std::numeric_limits<double>::quiet_NaN();
        t.inside_u = t.inside_v = false;
        return t;
    }
    const double umax = static_cast<double>(f.width - 1);
    const double vmax = static_cast<double>(f.height - 1);
    t.inside_u = (u >= 0.0 && u <= umax);
    t.inside_v = (v >= 0.0 && v <= vmax);
    const double cu = std::clamp(u, 0.0, umax);
    const double cv = std::clamp(v, 0.0, vmax);
    t.u0 = static_cast<int>(std::floor(cu));
    t.v0 = static_cast<int>(std::floor(cv));
    t.u1 = std::min(t.u0 + 1, f.width - 1);
    t.v1 = std::min(t.v0 + 1, f.height - 1);
    t.fu = cu - t.u0;
    t.fv = cv - t.v0;
    return t;
}

inline double sample_tap(const Field& f, const BilinearTap& t, int c) {
    const double f00 = f.at(t.u0, t.v0, c);
    const double f10 = f.at(t.u1, t.v0, c);
    const double f01 = f.at(t.u0, t.v1, c);
    const double f11 = f.at(t.u1, t.v1, c);
    // Symmetric weight form: exact at fu,fv in {0,1}, so integer positions
    // reproduce stored values.
    const double top = (1.0 - t.fu) * f00 + t.fu * f10;
    const double bot = (1.0 - t.fu) * f01 + t.fu * f11;
    return (1.0 - t.fv) * top + t.fv * bot;
}

/// d(sample)/du and d(sample)/dv at the tap position. Zero along a clamped
/// axis (the sample no longer depends on the position there).
inline void sample_tap_position_grad(const Field& f, const BilinearTap& t, int c,
                                     double* du, double* dv) {
    const double f00 = f.at(t.u0, t.v0, c);
    const double f10 = f.at(t.u1, t.v0, c);
    const double f01 = f.at(t.u0, t.v1, c);
    const double f11 = f.at(t.u1, t.v1, c);
    *du = t.inside_u ? (1.0 - t.fv) * (f10 - f00) + t.fv * (f11 - f01) : 0.0;
    *dv = t.inside_v ? (1.0 - t.fu) * (f01 - f00) + t.fu * (f11 - f10) : 0.0;
}

/// Adjoint of sampling: distributes `w` onto the four corners of `acc`.
inline void scatter_tap(Field& acc, const BilinearTap& t, int c, double w) {
    acc.at(t.u0, t.v0, c) += (1.0 - t.fu) * (1.0 - t.fv) * w;
    acc.at(t.u1, t.v0, c) += t.fu * (1.0 - t.fv) * w;
    acc.at(t.u0, t.v1, c) += (1.0 - t.fu) * t.fv * w;
    acc.at(t.u1, t.v1, c) += t.fu * t.fv * w;
}

/// Interpolated C-vector at real position (u,v), clamped to the field edge.
inline std::vector<double> bilinear_sample(const Field& f, double u, double v) {
    const BilinearTap t = make_tap(f, u, v);
    std::vector<double> out(f.channels);
    for (int c = 0; c < f.channels; ++c) out[c] = sample_tap(f, t, c);
    return out;
}

// ---------------------------------------------------------------------------
// Warping

/// output(p) = field sampled at p + flow(p). Flow must be 2-channel (du,dv).
inline Field backward_warp(const Field& field, const Field& flow) {
    require_same_grid(field, flow, "backward_warp");
    if (flow.channels != 2) throw ShapeError("backward_warp: flow must have 2 channels");
    Field out(field.width, field.height, field.channels);
    for (int v = 0; v < field.height; ++v) {
        for (int u = 0; u < field.width; ++u) {
            const BilinearTap t =
                make_tap(field, u + flow.at(u, v, 0), v + flow.at(u, v, 1));
            for (int c = 0; c < field.channels; ++c)
                out.at(u, v, c) = sample_tap(field, t, c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pyramids

/// Coarse-to-fine stack; levels[0] is full resolution, each level halves both
/// dimensions via 2x2 box means.
struct Pyramid {
    std::vector<Field> levels;
};

inline Field downsample2x(const Field& f) {
    if (f.width % 2 != 0 || f.height % 2 != 0)
        throw ShapeError("downsample2x: dimensions must be even");
    Field out(f.width / 2, f.height / 2, f.channels);
    for (int v = 0; v < out.height; ++v)
        for (int u = 0; u < out.width; ++u)
            for (int c = 0; c < f.channels; ++c)
                out.at(u, v, c) = 0.25 * (f.at(2 * u, 2 * v, c) + f.at(2 * u + 1, 2 * v, c) +
                                          f.at(2 * u, 2 * v + 1, c) + f.at(2 * u + 1, 2 * v + 1, c));
    return out;
}

inline Pyramid build_pyramid(const Field& field, int levels = 5) {
    const int factor = 1 << (levels - 1);
    if (levels < 1 || field.width % factor != 0 || field.height % factor != 0)
        throw ShapeError("build_pyramid: dimensions not divisible by 2^(levels-1)");
    Pyramid p;
    p.levels.reserve(levels);
    p.levels.push_back(field);
    for (int k = 1; k < levels; ++k) p.levels.push_back(downsample2x(p.levels.back()));
    return p;
}

/// Bilinear 2x upsampling. Level-k pixel centers sit at coarse coordinate
/// (u-0.5)/2, matching the box-mean pyramid geometry. `value_scale` is 1 for
/// resolution-independent quantities (depth) and 2 for pixel-unit flow.
inline Field upsample2x(const Field& f, double value_scale = 1.0) {
    Field out(f.width * 2, f.height * 2, f.channels);
    for (int v = 0; v < out.height; ++v) {
        for (int u = 0; u < out.width; ++u) {
            const BilinearTap t = make_tap(f, (u - 0.5) / 2.0, (v - 0.5) / 2.0);
            for (int c = 0; c < f.channels; ++c)
                out.at(u, v, c) = value_scale * sample_tap(f, t, c);
        }
    }
    return out;
}

/// 2x spatial upsampling of a flow field with values doubled (pixel units
/// scale with resolution).
inline Field upsample_flow(const Field& flow) {
    if (flow.channels != 2) throw ShapeError("upsample_flow: flow must have 2 channels");
    return upsample2x(flow, 2.0);
}

// ---------------------------------------------------------------------------
// 3x3 box filtering (clamp-to-edge) and its adjoint

inline Field box3(const Field& f) {
    Field out(f.width, f.height, f.channels);
    for (int v = 0; v < f.height; ++v) {
        for (int u = 0; u < f.width; ++u) {
            for (int c = 0; c < f.channels; ++c) {
                double s = 0.0;
                for (int dv = -1; dv <= 1; ++dv) {
                    const int vv = std::clamp(v + dv, 0, f.height - 1);
                    for (int du = -1; du <= 1; ++du)
                        s += f.at(std::clamp(u + du, 0, f.width - 1), vv, c);
                }
                out.at(u, v, c) = s / 9.0;
            }
        }
    }
    return out;
}

/// Exact transpose of box3: scatters each output cotangent back onto the
/// clamped input pixels it averaged.
inline Field box3_adjoint(const Field& g) {
    Field out(g.width, g.height, g.channels);
    for (int v = 0; v < g.height; ++v) {
        for (int u = 0; u < g.width; ++u) {
            for (int c = 0; c < g.channels; ++c) {
                const double w = g.at(u, v, c) / 9.0;
                for (int dv = -1; dv <= 1; ++dv) {
                    const int vv = std::clamp(v + dv, 0, g.height - 1);
                    for (int du = -1; du <= 1; ++du)
                        out.at(std::clamp(u + du, 0, g.width - 1), vv, c) += w;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Small helpers

inline double field_mean(const Field& f) {
    double s = 0.0;
    for (double x : f.data) s += x;
    return f.data.empty() ? 0.0 : s / static_cast<double>(f.data.size());
}

inline double field_max_abs(const Field& f) {
    double m = 0.0;
    for (double x : f.data) m = std::max(m, std::abs(x));
    return m;
}

inline bool field_all_finite(const Field& f) {
    for (double x : f.data)
        if (!std::isfinite(x)) return false;
    return true;
}

/// Extracts one channel as a single-channel field.
inline Field extract_channel(const Field& f, int c) {
    Field out(f.width, f.height, 1);
    for (int v = 0; v < f.height; ++v)
        for (int u = 0; u < f.width; ++u) out.at(u, v, 0) = f.at(u, v, c);
    return out;
}

}  // namespace flowlift
