#pragma once

// Coarse-to-fine minimization of the total energy over bidirectional flow and
// two depth fields for one frame pair, plus motion segmentation and the
// LiDAR holdout supervision protocol. The optimizer is per-pixel gradient
// descent with a halving line search on the total energy, so the accepted
// energy sequence is non-increasing by construction and every run is bitwise
// deterministic.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "flowlift/energy.hpp"
#include "flowlift/error.hpp"
#include "flowlift/field.hpp"
#include "flowlift/geom.hpp"

namespace flowlift {

struct SolverConfig {
    int levels = 5;
    int iters_per_level = 200;
    double init_step_flow = 0.5;    // [px] at each level's own resolution
    double init_step_depth = 0.05;  // [m]
    int step_halvings_max = 20;
    double eps_static = 0.5;        // [px] at full resolution, scaled 2^-k per level
    double eta = 0.5;               // LiDAR downsampling ratio in (0, 1]
    std::uint64_t seed = 7;
    double prior_depth = 20.0;      // [m] fallback when a frame has no LiDAR returns
    double min_depth = 0.01;        // [m] positivity floor for depth iterates
    double warmup_fraction = 0.25;  // fraction of each level without static/cycle
    LossWeights weights;

    void validate() const {
        if (levels < 1) throw ConfigError("solver: levels must be >= 1");
        if (iters_per_level < 1) throw ConfigError("solver: iters_per_level must be >= 1");
        if (!(eps_static > 0.0)) throw ConfigError("solver: eps_static must be > 0");
        if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("solver: eta must be in (0, 1]");
        if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
            throw ConfigError("solver: warmup_fraction must be in [0, 1)");
    }
};

/// One accepted line-search step (or a phase-opening baseline). `phase`
/// increments whenever the objective is redefined: at each level start and at
/// each level's warmup -> full switch. Totals are non-increasing within a
/// phase.
struct TraceEntry {
    int level = 0;
    int iter = -1;  // -1 marks the phase-opening baseline evaluation
    int phase = 0;
    bool warmup = false;
    double total = 0.0;
};

struct PairEstimate {
    Field flow_f;
    Field flow_b;
    Field depth_t;
    Field depth_t1;
    Field mask;  // 1 = static, from the final forward flow
    EnergyReport report;
    std::vector<TraceEntry> energy_trace;
};

// ---------------------------------------------------------------------------
// Motion segmentation

/// mask(p) = 1 iff ||flow(p)||_2 < eps.
inline Field motion_segment(const Field& flow, double eps) {
    if (!(eps > 0.0)) throw ConfigError("motion_segment: eps must be > 0");
    if (flow.channels != 2) throw ShapeError("motion_segment: flow must have 2 channels");
    Field mask(flow.width, flow.height, 1);
    for (int v = 0; v < flow.height; ++v)
        for (int u = 0; u < flow.width; ++u)
            mask.at(u, v) =
                std::hypot(flow.at(u, v, 0), flow.at(u, v, 1)) < eps ? 1.0 : 0.0;
    return mask;
}

/// Static mask agreed by both flow directions; symmetric under swapping the
/// two flows, which the pair energy needs so that reversing the frame order
/// exchanges the state fields exactly.
inline Field motion_segment_pair(const Field& flow_f, const Field& flow_b, double eps) {
    const Field a = motion_segment(flow_f, eps);
    const Field b = motion_segment(flow_b, eps);
    Field mask(a.width, a.height, 1);
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        mask.data[i] = a.data[i] * b.data[i];
    return mask;
}

// ---------------------------------------------------------------------------
// Depth initialization

namespace detail {

/// Exact nearest-valid-pixel labels via the two-pass separable Euclidean
/// distance transform (per-column nearest row, then a lower-envelope sweep of
/// parabolas per row). Writes the depth of the nearest valid pixel into every
/// pixel. Requires at least one valid pixel.
inline Field nearest_fill(const SparseRangeMap& map) {
    const int W = map.depth.width, H = map.depth.height;
    const double inf = std::numeric_limits<double>::infinity();

    // Per column: nearest valid row above/below.
    std::vector<int> site_row(static_cast<std::size_t>(W) * H, -1);
    std::vector<double> col_dist(static_cast<std::size_t>(W) * H, inf);
    for (int u = 0; u < W; ++u) {
        int last = -1;
        for (int v = 0; v < H; ++v) {
            if (map.valid.at(u, v) != 0.0) last = v;
            if (last >= 0) {
                site_row[static_cast<std::size_t>(v) * W + u] = last;
                col_dist[static_cast<std::size_t>(v) * W + u] = v - last;
            }
        }
        last = -1;
        for (int v = H - 1; v >= 0; --v) {
            if (map.valid.at(u, v) != 0.0) last = v;
            if (last >= 0 && last - v < col_dist[static_cast<std::size_t>(v) * W + u]) {
                site_row[static_cast<std::size_t>(v) * W + u] = last;
                col_dist[static_cast<std::size_t>(v) * W + u] = last - v;
            }
        }
    }

    // Per row: lower envelope of parabolas (u - u')^2 + col_dist(u')^2.
    Field out(W, H, 1);
    std::vector<int> hull(W);
    std::vector<double> boundary(W + 1);
    for (int v = 0; v < H; ++v) {
        const std::size_t row = static_cast<std::size_t>(v) * W;
        int k = -1;
        for (int u = 0; u < W; ++u) {
            const double f = col_dist[row + u];
            if (f == inf) continue;
            const double fu2 = f * f;
            double s = 0.0;
            while (k >= 0) {
                const int q = hull[k];
                const double fq2 = col_dist[row + q] * col_dist[row + q];
                // Intersection of parabolas rooted at u and q.
                s = ((fu2 + u * static_cast<double>(u)) - (fq2 + q * static_cast<double>(q))) /
                    (2.0 * (u - q));
                if (s > boundary[k]) break;
                --k;
            }
            ++k;
            hull[k] = u;
            boundary[k] = k == 0 ? -inf : s;
            boundary[k + 1] = inf;
        }
        if (k < 0) throw GeometryError("nearest_fill: empty range map");
        int j = 0;
        for (int u = 0; u < W; ++u) {
            while (boundary[j + 1] < u) ++j;
            const int src_u = hull[j];
            out.at(u, v) = map.depth.at(src_u, site_row[row + src_u]);
        }
    }
    return out;
}

}  // namespace detail

/// Nearest-valid-neighbor fill of the sparse depths followed by one 3x3 box
/// blur pass over the filled-in pixels (measured pixels keep their exact
/// values). Strictly positive everywhere. An empty map yields a constant
/// prior-depth field.
inline Field init_depth(const SparseRangeMap& range_map, double prior_depth = 20.0) {
    bool any = false;
    for (double m : range_map.valid.data)
        if (m != 0.0) {
            any = true;
            break;
        }
    if (!any)
        return Field(range_map.depth.width, range_map.depth.height, 1, prior_depth);
    const Field filled = detail::nearest_fill(range_map);
    const Field blurred = box3(filled);
    Field out = filled;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (range_map.valid.data[i] == 0.0) out.data[i] = blurred.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// Pyramid-level helpers

/// Intrinsics and dimensions scaled to pyramid level k. A box-mean pyramid
/// puts the center of level-k pixel u at full-resolution coordinate
/// 2^k*u + (2^k - 1)/2, so the principal point shifts by that half-block
/// offset before scaling; otherwise coarse rasterizations land half a block
/// away from the image pyramid.
inline CalibratedRig scale_rig(const CalibratedRig& rig, int level) {
    CalibratedRig out = rig;
    const double factor = static_cast<double>(1 << level);
    const double offset = (factor - 1.0) / 2.0;
    out.fx /= factor;
    out.fy /= factor;
    out.px = (rig.px - offset) / factor;
    out.py = (rig.py - offset) / factor;
    out.width = rig.width >> level;
    out.height = rig.height >> level;
    return out;
}

/// Supervision map for a coarse pyramid level: each coarse pixel averages the
/// depths of all returns it swallows. Nearest-wins aggregation would bias
/// sloped surfaces low by up to half a pixel block; the mean is the unbiased
/// coarse summary. Full resolution keeps rasterize_range_map's visibility
/// semantics.
inline SparseRangeMap rasterize_mean_range_map(const PointCloud& cloud,
                                               const CalibratedRig& rig) {
    SparseRangeMap map(rig.width, rig.height);
    Field counts(rig.width, rig.height, 1, 0.0);
    for (const Vec3& p : cloud.points) {
        double z = 0.0;
        Pixel px;
        if (!try_project(p, rig, &px, &z)) continue;
        const int ui = static_cast<int>(std::lround(px.u));
        const int vi = static_cast<int>(std::lround(px.v));
        if (ui < 0 || ui >= rig.width || vi < 0 || vi >= rig.height) continue;
        map.depth.at(ui, vi) += z;
        counts.at(ui, vi) += 1.0;
    }
    for (std::size_t i = 0; i < counts.data.size(); ++i) {
        if (counts.data[i] > 0.0) {
            map.depth.data[i] /= counts.data[i];
            map.valid.data[i] = 1.0;
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// Pair solver

namespace detail {

inline double pair_max_abs(const Field& a, const Field& b) {
    return std::max(field_max_abs(a), field_max_abs(b));
}

// Flow descent directions are box-blurred before per-pixel normalization.
// The blur keeps the direction spatially smooth (a raw per-pixel
// normalization pays first-order L1 smoothness/cycle costs that reject every
// line-search step) and diffuses photometric gradient into weakly textured
// pixels; the soft normalization lifts the step size of pixels whose
// gradient sits far below the global maximum, which is what stalls plain
// infinity-normalized descent.
constexpr int kFlowDirBlurPasses = 2;
constexpr double kFlowDirSoftness = 0.1;  // mu, relative to the field max
constexpr double kGradFloor = 1e-12;      // below this, treat as converged

inline Field flow_direction(const Field& grad) {
    Field blurred = grad;
    for (int b = 0; b < kFlowDirBlurPasses; ++b) blurred = box3(blurred);
    const double gmax = field_max_abs(blurred);
    Field dir(grad.width, grad.height, grad.channels);
    if (gmax <= kGradFloor) return dir;
    const double mu = kFlowDirSoftness * gmax;
    for (int v = 0; v < dir.height; ++v) {
        for (int u = 0; u < dir.width; ++u) {
            double m = 0.0;
            for (int c = 0; c < dir.channels; ++c)
                m = std::max(m, std::abs(blurred.at(u, v, c)));
            for (int c = 0; c < dir.channels; ++c)
                dir.at(u, v, c) = blurred.at(u, v, c) / (m + mu);
        }
    }
    return dir;
}

inline void apply_step(const Field& x, const Field& g, double scale, Field* out) {
    out->width = x.width;
    out->height = x.height;
    out->channels = x.channels;
    out->data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i)
        out->data[i] = x.data[i] - scale * g.data[i];
}

inline void apply_step_clamped(const Field& x, const Field& g, double scale,
                               double floor, Field* out) {
    apply_step(x, g, scale, out);
    for (double& d : out->data) d = std::max(d, floor);
}

inline void repin_depth(Field* depth, const SparseRangeMap& sup) {
    for (std::size_t i = 0; i < depth->data.size(); ++i)
        if (sup.valid.data[i] != 0.0) depth->data[i] = sup.depth.data[i];
}

}  // namespace detail

/// Minimizes the pair energy over (flow_f, flow_b, depth_t, depth_t1) given
/// per-level observations. `sup` holds one supervision range map per level,
/// index 0 = full resolution. This is the instrumentable core: it sees only
/// the range maps it is given.
inline PairEstimate solve_pair(const Pyramid& images_t, const Pyramid& images_t1,
                               const std::vector<SparseRangeMap>& sup_t,
                               const std::vector<SparseRangeMap>& sup_t1,
                               const SolverConfig& cfg) {
    cfg.validate();
    const int levels = cfg.levels;
    const int coarsest = levels - 1;

    PairEstimate est;
    // Coarsest-level initialization: zero flow, nearest-fill depth.
    {
        const Field& img = images_t.levels[coarsest];
        est.flow_f = Field(img.width, img.height, 2, 0.0);
        est.flow_b = Field(img.width, img.height, 2, 0.0);
        est.depth_t = init_depth(sup_t[coarsest], cfg.prior_depth);
        est.depth_t1 = init_depth(sup_t1[coarsest], cfg.prior_depth);
    }

    int phase = -1;
    for (int level = coarsest; level >= 0; --level) {
        PairObservations obs;
        obs.image_t = images_t.levels[level];
        obs.image_t1 = images_t1.levels[level];
        obs.range_t = sup_t[level];
        obs.range_t1 = sup_t1[level];

        const double eps_level = cfg.eps_static / static_cast<double>(1 << level);
        // Static and cycle terms stay off for the first iterations of every
        // level: right after (re)initialization the flows are near-exactly
        // cycle-consistent, and the cycle L1 kink otherwise outweighs the
        // photometric slope and rejects every joint step.
        const int warmup_iters = static_cast<int>(cfg.warmup_fraction * cfg.iters_per_level);

        PairState state{est.flow_f, est.flow_b, est.depth_t, est.depth_t1};
        Field mask = motion_segment_pair(state.flow_f, state.flow_b, eps_level);

        bool phase_open = false;
        bool was_warmup = true;
        EnergyReport current;
        EnergyGradients grads;
        for (int iter = 0; iter < cfg.iters_per_level; ++iter) {
            const bool warmup = iter < warmup_iters;
            LossWeights w = cfg.weights;
            w.enable_static = w.enable_static && !warmup;
            w.enable_cycle = w.enable_cycle && !warmup;

            if (!phase_open || warmup != was_warmup) {
                // Objective (re)defined: fresh mask and a new trace phase.
                mask = motion_segment_pair(state.flow_f, state.flow_b, eps_level);
                current = total_energy(state, obs, mask, w, &grads);
                ++phase;
                est.energy_trace.push_back({level, -1, phase, warmup, current.total});
                phase_open = true;
                was_warmup = warmup;
            } else {
                current = total_energy(state, obs, mask, w, &grads);
            }

            // Descent directions: blurred soft-normalized per-pixel steps for
            // the flows, jointly infinity-normalized raw gradient for the
            // depths (depth supervision is pointwise; blurring would smear
            // it). Gradients at rounding level are treated as converged.
            const Field dir_f = detail::flow_direction(grads.flow_f);
            const Field dir_b = detail::flow_direction(grads.flow_b);
            const double fmax = detail::pair_max_abs(dir_f, dir_b);
            const double gd = detail::pair_max_abs(grads.depth_t, grads.depth_t1);
            const double flow_scale = fmax > 0.0 ? cfg.init_step_flow : 0.0;
            const double depth_scale =
                gd > detail::kGradFloor ? cfg.init_step_depth / gd : 0.0;
            if (flow_scale == 0.0 && depth_scale == 0.0) break;  // stationary

            PairState cand;
            bool accepted = false;
            double alpha = 1.0;
            for (int h = 0; h <= cfg.step_halvings_max; ++h, alpha *= 0.5) {
                detail::apply_step(state.flow_f, dir_f, alpha * flow_scale,
                                   &cand.flow_f);
                detail::apply_step(state.flow_b, dir_b, alpha * flow_scale,
                                   &cand.flow_b);
                detail::apply_step_clamped(state.depth_t, grads.depth_t,
                                           alpha * depth_scale, cfg.min_depth,
                                           &cand.depth_t);
                detail::apply_step_clamped(state.depth_t1, grads.depth_t1,
                                           alpha * depth_scale, cfg.min_depth,
                                           &cand.depth_t1);
                const EnergyReport trial = total_energy(cand, obs, mask, w, nullptr);
                if (trial.total < current.total) {
                    state = std::move(cand);
                    current = trial;
                    est.energy_trace.push_back({level, iter, phase, warmup, trial.total});
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                if (warmup) {
                    // The objective changes at the end of warmup; skip ahead
                    // instead of re-running the same rejected search.
                    iter = warmup_iters - 1;
                    continue;
                }
                const bool moved = state.flow_f.data != cand.flow_f.data ||
                                   state.flow_b.data != cand.flow_b.data ||
                                   state.depth_t.data != cand.depth_t.data ||
                                   state.depth_t1.data != cand.depth_t1.data;
                if (!moved) {
                    std::vector<double> totals;
                    totals.reserve(est.energy_trace.size());
                    for (const TraceEntry& e : est.energy_trace) totals.push_back(e.total);
                    throw ConvergenceError(
                        "solve_pair: step underflow at all pixels without energy decrease",
                        std::move(totals));
                }
                break;  // no decreasing step at this resolution; move on
            }
        }

        est.flow_f = std::move(state.flow_f);
        est.flow_b = std::move(state.flow_b);
        est.depth_t = std::move(state.depth_t);
        est.depth_t1 = std::move(state.depth_t1);

        if (level > 0) {
            est.flow_f = upsample_flow(est.flow_f);
            est.flow_b = upsample_flow(est.flow_b);
            est.depth_t = upsample2x(est.depth_t);
            est.depth_t1 = upsample2x(est.depth_t1);
            // Warm-start the finer level by snapping the upsampled depths to
            // that level's own measurements (the depth term would pull them
            // there anyway, one slow pixel at a time).
            detail::repin_depth(&est.depth_t, sup_t[level - 1]);
            detail::repin_depth(&est.depth_t1, sup_t1[level - 1]);
        }
    }

    // Final report under the full configured objective.
    PairState final_state{est.flow_f, est.flow_b, est.depth_t, est.depth_t1};
    PairObservations obs0{images_t.levels[0], images_t1.levels[0], sup_t[0], sup_t1[0]};
    const Field mask_sym = motion_segment_pair(est.flow_f, est.flow_b, cfg.eps_static);
    est.report = total_energy(final_state, obs0, mask_sym, cfg.weights, nullptr);
    est.mask = motion_segment(est.flow_f, cfg.eps_static);
    return est;
}

/// Per-epoch downsampling seed. Keyed by the cloud's own epoch (not its
/// argument position) so that swapping the two frames selects the same
/// LiDAR subsets.
inline std::uint64_t supervision_seed(std::uint64_t base_seed, int epoch) {
    Rng mix(base_seed ^ (0x9e3779b97f4a7c15ull *
                         static_cast<std::uint64_t>(epoch + 0x1234567)));
    return mix.next_u64();
}

/// Full supervision protocol for one frame pair: downsample each cloud with
/// ratio eta (seeded per epoch, so the held-out points never reach the
/// optimizer), rasterize the kept points at every pyramid level, and run the
/// coarse-to-fine solve.
inline PairEstimate estimate_pair(const Field& image_t, const Field& image_t1,
                                  const PointCloud& cloud_t, const PointCloud& cloud_t1,
                                  const CalibratedRig& rig, const SolverConfig& cfg) {
    cfg.validate();
    rig.validate();
    if (image_t.width != rig.width || image_t.height != rig.height)
        throw ShapeError("estimate_pair: image dimensions do not match the rig");
    require_same_shape(image_t, image_t1, "estimate_pair");

    const PointCloud down_t =
        downsample_cloud(cloud_t, cfg.eta, supervision_seed(cfg.seed, cloud_t.epoch));
    const PointCloud down_t1 =
        downsample_cloud(cloud_t1, cfg.eta, supervision_seed(cfg.seed, cloud_t1.epoch));

    std::vector<SparseRangeMap> sup_t, sup_t1;
    sup_t.reserve(cfg.levels);
    sup_t1.reserve(cfg.levels);
    for (int k = 0; k < cfg.levels; ++k) {
        const CalibratedRig rk = scale_rig(rig, k);
        if (k == 0) {
            sup_t.push_back(rasterize_range_map(down_t, rk));
            sup_t1.push_back(rasterize_range_map(down_t1, rk));
        } else {
            sup_t.push_back(rasterize_mean_range_map(down_t, rk));
            sup_t1.push_back(rasterize_mean_range_map(down_t1, rk));
        }
    }

    const Pyramid pyr_t = build_pyramid(image_t, cfg.levels);
    const Pyramid pyr_t1 = build_pyramid(image_t1, cfg.levels);
    return solve_pair(pyr_t, pyr_t1, sup_t, sup_t1, cfg);
}

}  // namespace flowlift
