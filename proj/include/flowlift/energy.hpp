#pragma once

// Self-supervised energy terms over flow and depth fields, each with its
// analytic gradient: SSIM photometric consistency under backward warping,
// edge-aware first-order smoothness, sparse-range L1 depth supervision, the
// static-scene depth consistency prior, and forward/backward cycle
// consistency. Gradients are accumulated in a fixed pixel order so results
// are bitwise reproducible.

#include <cmath>
#include <cstdio>
#include <string>

#include "flowlift/error.hpp"
#include "flowlift/field.hpp"
#include "flowlift/geom.hpp"

namespace flowlift {

/// Scalar term value plus its gradient with respect to one field.
struct TermGradient {
    double value = 0.0;
    Field grad;
};

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

namespace detail {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

inline Field hadamard(const Field& a, const Field& b) {
    Field out(a.width, a.height, a.channels);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Photometric loss
//
// value = (1 - meanSSIM(phi(I_t), phi(omega(I_t1, flow)))) / 2, with phi a
// 3x3 average pooling and SSIM evaluated on local 3x3 windows with
// c1 = 0.01^2, c2 = 0.03^2. The gradient w.r.t. the flow chains through the
// SSIM statistics, both pooling stages, and the bilinear warp.

inline double photometric_impl(const Field& I0, const Field& I1, const Field& flow,
                               Field* grad_flow) {
    require_same_shape(I0, I1, "photometric_loss");
    require_same_grid(I0, flow, "photometric_loss");
    if (flow.channels != 2) throw ShapeError("photometric_loss: flow must have 2 channels");

    const int W = I0.width, H = I0.height, C = I0.channels;
    const double n = static_cast<double>(W) * H * C;
    const double g_ssim = -0.5 / n;  // d value / d S(p,c)

    // Forward: warp, pool, local statistics.
    std::vector<BilinearTap> taps;
    taps.reserve(static_cast<std::size_t>(W) * H);
    Field warped(W, H, C);
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            const BilinearTap t = make_tap(I1, u + flow.at(u, v, 0), v + flow.at(u, v, 1));
            taps.push_back(t);
            for (int c = 0; c < C; ++c) warped.at(u, v, c) = sample_tap(I1, t, c);
        }
    }
    const Field A = box3(I0);
    const Field B = box3(warped);
    const Field mu_x = box3(A);
    const Field mu_y = box3(B);
    const Field m_xx = box3(detail::hadamard(A, A));
    const Field m_yy = box3(detail::hadamard(B, B));
    const Field m_xy = box3(detail::hadamard(A, B));

    double ssim_sum = 0.0;
    Field g_muy, g_myy, g_mxy;
    if (grad_flow) {
        g_muy = Field(W, H, C);
        g_myy = Field(W, H, C);
        g_mxy = Field(W, H, C);
    }
    for (std::size_t i = 0; i < mu_x.data.size(); ++i) {
        const double mx = mu_x.data[i], my = mu_y.data[i];
        const double var_x = m_xx.data[i] - mx * mx;
        const double var_y = m_yy.data[i] - my * my;
        const double cov = m_xy.data[i] - mx * my;
        const double n1 = 2.0 * mx * my + detail::kSsimC1;
        const double n2 = 2.0 * cov + detail::kSsimC2;
        const double d1 = mx * mx + my * my + detail::kSsimC1;
        const double d2 = var_x + var_y + detail::kSsimC2;
        const double s = (n1 * n2) / (d1 * d2);
        ssim_sum += s;
        if (grad_flow) {
            const double ds_dmuy = 2.0 * mx * n2 / (d1 * d2) - s * 2.0 * my / d1;
            const double ds_dvary = -s / d2;
            const double ds_dcov = 2.0 * n1 / (d1 * d2);
            // var_y = m_yy - mu_y^2 and cov = m_xy - mu_x*mu_y fold extra
            // mu_y terms into the mu_y cotangent.
            g_muy.data[i] = g_ssim * (ds_dmuy - 2.0 * my * ds_dvary - mx * ds_dcov);
            g_myy.data[i] = g_ssim * ds_dvary;
            g_mxy.data[i] = g_ssim * ds_dcov;
        }
    }
    const double value = 0.5 * (1.0 - ssim_sum / n);

    if (grad_flow) {
        // Pull cotangents back to the pooled warped image B...
        const Field t_muy = box3_adjoint(g_muy);
        const Field t_myy = box3_adjoint(g_myy);
        const Field t_mxy = box3_adjoint(g_mxy);
        Field g_B(W, H, C);
        for (std::size_t i = 0; i < g_B.data.size(); ++i)
            g_B.data[i] = t_muy.data[i] + 2.0 * B.data[i] * t_myy.data[i] +
                          A.data[i] * t_mxy.data[i];
        // ...then to the warped image, then through the warp to the flow.
        const Field g_W = box3_adjoint(g_B);
        *grad_flow = Field(W, H, 2);
        std::size_t p = 0;
        for (int v = 0; v < H; ++v) {
            for (int u = 0; u < W; ++u, ++p) {
                double gu = 0.0, gv = 0.0;
                for (int c = 0; c < C; ++c) {
                    double du, dv;
                    sample_tap_position_grad(I1, taps[p], c, &du, &dv);
                    const double g = g_W.at(u, v, c);
                    gu += g * du;
                    gv += g * dv;
                }
                grad_flow->at(u, v, 0) = gu;
                grad_flow->at(u, v, 1) = gv;
            }
        }
    }
    return value;
}

inline double photometric_value(const Field& I0, const Field& I1, const Field& flow) {
    return photometric_impl(I0, I1, flow, nullptr);
}

inline TermGradient photometric_loss(const Field& I0, const Field& I1, const Field& flow) {
    TermGradient out;
    out.value = photometric_impl(I0, I1, flow, &out.grad);
    return out;
}

// ---------------------------------------------------------------------------
// Edge-aware smoothness
//
// value = (1/(H*W*C)) sum_p sum_axis |d field(p)| * exp(-beta * |d image(p)|_1)
// with forward differences; the image L1 norm runs over image channels and
// the field term over field channels. Subgradient of |.| at 0 is 0.

inline double smoothness_impl(const Field& field, const Field& image, double beta,
                              Field* grad) {
    require_same_grid(field, image, "smoothness_loss");
    const int W = field.width, H = field.height, C = field.channels;
    const double n = static_cast<double>(W) * H * C;
    if (grad) *grad = Field(W, H, C);
    double value = 0.0;
    const int step_u[2] = {1, 0};
    const int step_v[2] = {0, 1};
    for (int axis = 0; axis < 2; ++axis) {
        const int su = step_u[axis], sv = step_v[axis];
        for (int v = 0; v + sv < H; ++v) {
            for (int u = 0; u + su < W; ++u) {
                double img_grad = 0.0;
                for (int ci = 0; ci < image.channels; ++ci)
                    img_grad += std::abs(image.at(u + su, v + sv, ci) - image.at(u, v, ci));
                const double w = std::exp(-beta * img_grad);
                for (int c = 0; c < C; ++c) {
                    const double d = field.at(u + su, v + sv, c) - field.at(u, v, c);
                    value += std::abs(d) * w;
                    if (grad) {
                        const double s = sgn(d) * w / n;
                        grad->at(u + su, v + sv, c) += s;
                        grad->at(u, v, c) -= s;
                    }
                }
            }
        }
    }
    return value / n;
}

inline double smoothness_value(const Field& field, const Field& image, double beta) {
    return smoothness_impl(field, image, beta, nullptr);
}

inline TermGradient smoothness_loss(const Field& field, const Field& image, double beta) {
    TermGradient out;
    out.value = smoothness_impl(field, image, beta, &out.grad);
    return out;
}

// ---------------------------------------------------------------------------
// Depth supervision
//
// L1 between the sparse range map and the dense prediction sampled at valid
// footprints, normalized by H*W (C = 1). Gradients scatter the L1
// subgradient through the bilinear sample weights.

inline double depth_loss_impl(const Field& depth, const SparseRangeMap& sup, Field* grad) {
    require_same_grid(depth, sup.depth, "depth_loss");
    const int W = depth.width, H = depth.height;
    const double n = static_cast<double>(W) * H;
    if (grad) *grad = Field(W, H, 1);
    double value = 0.0;
    bool any_valid = false;
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            if (sup.valid.at(u, v) == 0.0) continue;
            any_valid = true;
            const BilinearTap t = make_tap(depth, u, v);
            const double r = sup.depth.at(u, v) - sample_tap(depth, t, 0);
            value += std::abs(r);
            if (grad) scatter_tap(*grad, t, 0, -sgn(r) / n);
        }
    }
    if (!any_valid) {
        static bool warned = false;
        if (!warned) {
            warned = true;
            std::fprintf(stderr,
                         "flowlift: depth_loss: supervision map has no valid pixels\n");
        }
        return 0.0;
    }
    return value / n;
}

inline double depth_value(const Field& depth, const SparseRangeMap& sup) {
    return depth_loss_impl(depth, sup, nullptr);
}

inline TermGradient depth_loss(const Field& depth, const SparseRangeMap& sup) {
    TermGradient out;
    out.value = depth_loss_impl(depth, sup, &out.grad);
    return out;
}

// ---------------------------------------------------------------------------
// Static-scene depth consistency
//
// Masked mean of |D_t1 - D_t| over static pixels; zero (with zero gradients)
// when the mask is empty.

struct StaticLossResult {
    double value = 0.0;
    Field grad_d_t;
    Field grad_d_t1;
};

inline double static_value(const Field& d_t, const Field& d_t1, const Field& mask) {
    require_same_grid(d_t, d_t1, "static_loss");
    require_same_grid(d_t, mask, "static_loss");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < d_t.data.size(); ++i) {
        num += mask.data[i] * std::abs(d_t1.data[i] - d_t.data[i]);
        den += mask.data[i];
    }
    return den > 0.0 ? num / den : 0.0;
}

inline StaticLossResult static_loss(const Field& d_t, const Field& d_t1, const Field& mask) {
    require_same_grid(d_t, d_t1, "static_loss");
    require_same_grid(d_t, mask, "static_loss");
    StaticLossResult out;
    out.grad_d_t = Field(d_t.width, d_t.height, 1);
    out.grad_d_t1 = Field(d_t.width, d_t.height, 1);
    double den = 0.0;
    for (double m : mask.data) den += m;
    if (den == 0.0) return out;
    double num = 0.0;
    for (std::size_t i = 0; i < d_t.data.size(); ++i) {
        const double d = d_t1.data[i] - d_t.data[i];
        num += mask.data[i] * std::abs(d);
        const double s = mask.data[i] * sgn(d) / den;
        out.grad_d_t1.data[i] = s;
        out.grad_d_t.data[i] = -s;
    }
    out.value = num / den;
    return out;
}

// ---------------------------------------------------------------------------
// Cycle consistency
//
// mean_p |O_f(p) + omega(O_b, O_f)(p)|_1 over H*W*2. A perfectly inverse
// flow pair cancels exactly. Gradients flow through the direct term, the
// sample position (via O_f), and the sampled backward flow values.

struct CycleLossResult {
    double value = 0.0;
    Field grad_forward;
    Field grad_backward;
};

inline double cycle_value(const Field& flow_f, const Field& flow_b) {
    require_same_shape(flow_f, flow_b, "cycle_loss");
    if (flow_f.channels != 2) throw ShapeError("cycle_loss: flows must have 2 channels");
    const int W = flow_f.width, H = flow_f.height;
    double value = 0.0;
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            const BilinearTap t =
                make_tap(flow_b, u + flow_f.at(u, v, 0), v + flow_f.at(u, v, 1));
            for (int c = 0; c < 2; ++c)
                value += std::abs(flow_f.at(u, v, c) + sample_tap(flow_b, t, c));
        }
    }
    return value / (static_cast<double>(W) * H * 2.0);
}

inline CycleLossResult cycle_loss(const Field& flow_f, const Field& flow_b) {
    require_same_shape(flow_f, flow_b, "cycle_loss");
    if (flow_f.channels != 2) throw ShapeError("cycle_loss: flows must have 2 channels");
    const int W = flow_f.width, H = flow_f.height;
    const double n = static_cast<double>(W) * H * 2.0;
    CycleLossResult out;
    out.grad_forward = Field(W, H, 2);
    out.grad_backward = Field(W, H, 2);
    double value = 0.0;
    for (int v = 0; v < H; ++v) {
        for (int u = 0; u < W; ++u) {
            const BilinearTap t =
                make_tap(flow_b, u + flow_f.at(u, v, 0), v + flow_f.at(u, v, 1));
            for (int c = 0; c < 2; ++c) {
                const double r = flow_f.at(u, v, c) + sample_tap(flow_b, t, c);
                value += std::abs(r);
                const double s = sgn(r) / n;
                out.grad_forward.at(u, v, c) += s;          // direct term
                double du, dv;
                sample_tap_position_grad(flow_b, t, c, &du, &dv);
                out.grad_forward.at(u, v, 0) += s * du;     // sample position
                out.grad_forward.at(u, v, 1) += s * dv;
                scatter_tap(out.grad_backward, t, c, s);    // sampled values
            }
        }
    }
    out.value = value / n;
    return out;
}

// ---------------------------------------------------------------------------
// Total energy

struct LossWeights {
    double lambda_flow = 0.9;
    double lambda_depth = 0.1;
    double lambda_sm_flow = 0.15;
    double lambda_sm_depth = 0.1;
    double beta = 10.0;
    bool enable_static = true;
    bool enable_cycle = true;
};

/// Per-term breakdown. The identity
///   total = lambda_flow*(photo + lambda_sm_flow*smooth_flow)
///         + lambda_depth*(depth_l1 + lambda_sm_depth*smooth_depth)
///         + static_term + cycle
/// holds exactly: total is computed from the stored terms by that formula.
struct EnergyReport {
    double photo = 0.0;
    double smooth_flow = 0.0;
    double depth_l1 = 0.0;
    double smooth_depth = 0.0;
    double static_term = 0.0;
    double cycle = 0.0;
    double total = 0.0;
    LossWeights weights;
};

struct PairState {
    Field flow_f;   // forward flow, 2 channels [px]
    Field flow_b;   // backward flow, 2 channels [px]
    Field depth_t;  // depth at epoch t, 1 channel [m]
    Field depth_t1; // depth at epoch t+1, 1 channel [m]
};

struct PairObservations {
    Field image_t;
    Field image_t1;
    SparseRangeMap range_t;   // downsampled supervision for epoch t
    SparseRangeMap range_t1;  // downsampled supervision for epoch t+1
};

struct EnergyGradients {
    Field flow_f;
    Field flow_b;
    Field depth_t;
    Field depth_t1;
};

namespace detail {

inline void check_term(double v, const char* term) {
    if (!std::isfinite(v))
        throw NumericalError(std::string("total_energy: non-finite value in term ") + term);
}

inline void axpy(Field& acc, const Field& x, double a) {
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += a * x.data[i];
}

}  // namespace detail

/// Evaluates the full objective: photometric + smoothness in both flow
/// directions (averaged), depth terms for both frames (averaged), and the
/// static and cycle priors, both symmetrized so that swapping the frame
/// order exchanges the state fields exactly. `mask` is the static mask,
/// treated as a constant. Pass `grads = nullptr` for a value-only evaluation.
inline EnergyReport total_energy(const PairState& state, const PairObservations& obs,
                                 const Field& mask, const LossWeights& weights,
                                 EnergyGradients* grads) {
    EnergyReport rep;
    rep.weights = weights;

    if (grads) {
        grads->flow_f = Field(state.flow_f.width, state.flow_f.height, 2);
        grads->flow_b = Field(state.flow_b.width, state.flow_b.height, 2);
        grads->depth_t = Field(state.depth_t.width, state.depth_t.height, 1);
        grads->depth_t1 = Field(state.depth_t1.width, state.depth_t1.height, 1);
    }

    const double wf = weights.lambda_flow;
    const double wd = weights.lambda_depth;

    if (grads) {
        TermGradient pf = photometric_loss(obs.image_t, obs.image_t1, state.flow_f);
        TermGradient pb = photometric_loss(obs.image_t1, obs.image_t, state.flow_b);
        rep.photo = 0.5 * (pf.value + pb.value);
        detail::axpy(grads->flow_f, pf.grad, 0.5 * wf);
        detail::axpy(grads->flow_b, pb.grad, 0.5 * wf);

        TermGradient sf = smoothness_loss(state.flow_f, obs.image_t, weights.beta);
        TermGradient sb = smoothness_loss(state.flow_b, obs.image_t1, weights.beta);
        rep.smooth_flow = 0.5 * (sf.value + sb.value);
        detail::axpy(grads->flow_f, sf.grad, 0.5 * wf * weights.lambda_sm_flow);
        detail::axpy(grads->flow_b, sb.grad, 0.5 * wf * weights.lambda_sm_flow);

        TermGradient dt = depth_loss(state.depth_t, obs.range_t);
        TermGradient dt1 = depth_loss(state.depth_t1, obs.range_t1);
        rep.depth_l1 = 0.5 * (dt.value + dt1.value);
        detail::axpy(grads->depth_t, dt.grad, 0.5 * wd);
        detail::axpy(grads->depth_t1, dt1.grad, 0.5 * wd);

        TermGradient st = smoothness_loss(state.depth_t, obs.image_t, weights.beta);
        TermGradient st1 = smoothness_loss(state.depth_t1, obs.image_t1, weights.beta);
        rep.smooth_depth = 0.5 * (st.value + st1.value);
        detail::axpy(grads->depth_t, st.grad, 0.5 * wd * weights.lambda_sm_depth);
        detail::axpy(grads->depth_t1, st1.grad, 0.5 * wd * weights.lambda_sm_depth);

        if (weights.enable_static) {
            StaticLossResult s = static_loss(state.depth_t, state.depth_t1, mask);
            rep.static_term = s.value;
            detail::axpy(grads->depth_t, s.grad_d_t, 1.0);
            detail::axpy(grads->depth_t1, s.grad_d_t1, 1.0);
        }
        if (weights.enable_cycle) {
            CycleLossResult cf = cycle_loss(state.flow_f, state.flow_b);
            CycleLossResult cb = cycle_loss(state.flow_b, state.flow_f);
            rep.cycle = 0.5 * (cf.value + cb.value);
            // Each flow's two cycle contributions are summed pairwise before
            // accumulating so the arithmetic is invariant under swapping the
            // frame order.
            for (std::size_t i = 0; i < grads->flow_f.data.size(); ++i)
                grads->flow_f.data[i] +=
                    0.5 * (cf.grad_forward.data[i] + cb.grad_backward.data[i]);
            for (std::size_t i = 0; i < grads->flow_b.data.size(); ++i)
                grads->flow_b.data[i] +=
                    0.5 * (cb.grad_forward.data[i] + cf.grad_backward.data[i]);
        }
    } else {
        rep.photo = 0.5 * (photometric_value(obs.image_t, obs.image_t1, state.flow_f) +
                           photometric_value(obs.image_t1, obs.image_t, state.flow_b));
        rep.smooth_flow =
            0.5 * (smoothness_value(state.flow_f, obs.image_t, weights.beta) +
                   smoothness_value(state.flow_b, obs.image_t1, weights.beta));
        rep.depth_l1 = 0.5 * (depth_value(state.depth_t, obs.range_t) +
                              depth_value(state.depth_t1, obs.range_t1));
        rep.smooth_depth =
            0.5 * (smoothness_value(state.depth_t, obs.image_t, weights.beta) +
                   smoothness_value(state.depth_t1, obs.image_t1, weights.beta));
        if (weights.enable_static)
            rep.static_term = static_value(state.depth_t, state.depth_t1, mask);
        if (weights.enable_cycle)
            rep.cycle = 0.5 * (cycle_value(state.flow_f, state.flow_b) +
                               cycle_value(state.flow_b, state.flow_f));
    }

    detail::check_term(rep.photo, "photo");
    detail::check_term(rep.smooth_flow, "smooth_flow");
    detail::check_term(rep.depth_l1, "depth_l1");
    detail::check_term(rep.smooth_depth, "smooth_depth");
    detail::check_term(rep.static_term, "static");
    detail::check_term(rep.cycle, "cycle");

    rep.total = wf * (rep.photo + weights.lambda_sm_flow * rep.smooth_flow) +
                wd * (rep.depth_l1 + weights.lambda_sm_depth * rep.smooth_depth) +
                rep.static_term + rep.cycle;
    detail::check_term(rep.total, "total");
    return rep;
}

}  // namespace flowlift
