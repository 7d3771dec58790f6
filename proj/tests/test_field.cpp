#include "flowlift/field.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"

using namespace flowlift;

namespace {

/// Scalar interpolation oracle, independent of the tap machinery.
double bilinear_oracle(const Field& f, double u, double v, int c) {
    u = std::clamp(u, 0.0, static_cast<double>(f.width - 1));
    v = std::clamp(v, 0.0, static_cast<double>(f.height - 1));
    const int u0 = std::min(static_cast<int>(std::floor(u)), f.width - 1);
    const int v0 = std::min(static_cast<int>(std::floor(v)), f.height - 1);
    const int u1 = std::min(u0 + 1, f.width - 1);
    const int v1 = std::min(v0 + 1, f.height - 1);
    const double a = u - u0, b = v - v0;
    return (1 - a) * (1 - b) * f.at(u0, v0, c) + a * (1 - b) * f.at(u1, v0, c) +
           (1 - a) * b * f.at(u0, v1, c) + a * b * f.at(u1, v1, c);
}

TEST(BilinearSample, IntegerPositionsExact) {
    Rng rng(1);
    const Field f = testutil::random_field(rng, 9, 7, 3, -5.0, 5.0);
    for (int v = 0; v < f.height; ++v)
        for (int u = 0; u < f.width; ++u) {
            const auto s = bilinear_sample(f, u, v);
            for (int c = 0; c < 3; ++c) EXPECT_EQ(s[c], f.at(u, v, c));
        }
}

TEST(BilinearSample, Midpoint) {
    Field f(2, 1, 1);
    f.at(0, 0) = 2.0;
    f.at(1, 0) = 6.0;
    EXPECT_DOUBLE_EQ(bilinear_sample(f, 0.5, 0.0)[0], 4.0);
}

TEST(BilinearSample, MatchesScalarOracle) {
    Rng rng(2);
    const Field f = testutil::random_field(rng, 12, 9, 2, -3.0, 3.0);
    for (int i = 0; i < 256; ++i) {
        const double u = rng.uniform(-2.0, f.width + 1.0);
        const double v = rng.uniform(-2.0, f.height + 1.0);
        const auto s = bilinear_sample(f, u, v);
        for (int c = 0; c < 2; ++c)
            EXPECT_NEAR(s[c], bilinear_oracle(f, u, v, c), 1e-12);
    }
}

TEST(BilinearSample, ClampsToEdge) {
    Field f(3, 3, 1);
    for (int v = 0; v < 3; ++v)
        for (int u = 0; u < 3; ++u) f.at(u, v) = u + 10.0 * v;
    EXPECT_DOUBLE_EQ(bilinear_sample(f, -5.0, 1.0)[0], f.at(0, 1));
    EXPECT_DOUBLE_EQ(bilinear_sample(f, 7.0, 1.0)[0], f.at(2, 1));
    EXPECT_DOUBLE_EQ(bilinear_sample(f, 1.0, -3.0)[0], f.at(1, 0));
    EXPECT_DOUBLE_EQ(bilinear_sample(f, 1.0, 9.0)[0], f.at(1, 2));
}

TEST(BackwardWarp, ZeroFlowIsIdentity) {
    Rng rng(3);
    const Field f = testutil::random_field(rng, 10, 8, 2, -1.0, 1.0);
    const Field flow(10, 8, 2, 0.0);
    const Field out = backward_warp(f, flow);
    EXPECT_EQ(out.data, f.data);
}

TEST(BackwardWarp, UnitShiftOnRamp) {
    const int W = 8, H = 5;
    Field f(W, H, 1);
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) f.at(u, v) = u;
    Field flow(W, H, 2, 0.0);
    for (std::size_t i = 0; i < flow.data.size(); i += 2) flow.data[i] = 1.0;
    const Field out = backward_warp(f, flow);
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u)
            EXPECT_DOUBLE_EQ(out.at(u, v), std::min(u + 1, W - 1));
}

TEST(BackwardWarp, MatchesSamplingOracle) {
    Rng rng(4);
    const Field f = testutil::random_field(rng, 11, 7, 3, -2.0, 2.0);
    Field flow(11, 7, 2);
    for (double& d : flow.data) d = rng.uniform(-3.0, 3.0);
    const Field out = backward_warp(f, flow);
    for (int v = 0; v < 7; ++v)
        for (int u = 0; u < 11; ++u)
            for (int c = 0; c < 3; ++c)
                EXPECT_NEAR(out.at(u, v, c),
                            bilinear_oracle(f, u + flow.at(u, v, 0), v + flow.at(u, v, 1), c),
                            1e-12);
}

TEST(BackwardWarp, ShapeMismatchThrows) {
    const Field f(8, 8, 1);
    EXPECT_THROW(backward_warp(f, Field(4, 8, 2)), ShapeError);
    EXPECT_THROW(backward_warp(f, Field(8, 8, 1)), ShapeError);
}

TEST(Pyramid, ConstantStaysConstant) {
    const Field f(32, 16, 2, 3.25);
    const Pyramid p = build_pyramid(f, 5);
    ASSERT_EQ(p.levels.size(), 5u);
    for (const Field& level : p.levels)
        for (double d : level.data) EXPECT_EQ(d, 3.25);
}

TEST(Pyramid, FullFrameCropDimensions) {
    const Field f(1600, 960, 1, 0.0);
    const Pyramid p = build_pyramid(f, 5);
    const int expect_w[5] = {1600, 800, 400, 200, 100};
    const int expect_h[5] = {960, 480, 240, 120, 60};
    for (int k = 0; k < 5; ++k) {
        EXPECT_EQ(p.levels[k].width, expect_w[k]);
        EXPECT_EQ(p.levels[k].height, expect_h[k]);
    }
}

TEST(Pyramid, MatchesBruteForceAveraging) {
    Rng rng(5);
    const Field f = testutil::random_field(rng, 32, 32, 1);
    const Pyramid p = build_pyramid(f, 2);
    for (int v = 0; v < 16; ++v)
        for (int u = 0; u < 16; ++u) {
            const double mean = (f.at(2 * u, 2 * v) + f.at(2 * u + 1, 2 * v) +
                                 f.at(2 * u, 2 * v + 1) + f.at(2 * u + 1, 2 * v + 1)) /
                                4.0;
            EXPECT_NEAR(p.levels[1].at(u, v), mean, 1e-15);
        }
}

TEST(Pyramid, ConservesGlobalMean) {
    Rng rng(6);
    const Field f = testutil::random_field(rng, 64, 32, 3);
    const Pyramid p = build_pyramid(f, 5);
    const double mean0 = field_mean(p.levels[0]);
    for (const Field& level : p.levels) EXPECT_NEAR(field_mean(level), mean0, 1e-12);
}

TEST(Pyramid, IndivisibleDimensionsThrow) {
    EXPECT_THROW(build_pyramid(Field(33, 32, 1), 5), ShapeError);
    EXPECT_THROW(build_pyramid(Field(32, 20, 1), 5), ShapeError);
    EXPECT_NO_THROW(build_pyramid(Field(48, 16, 1), 5));
}

TEST(UpsampleFlow, ConstantDoubles) {
    Field f(4, 3, 2);
    for (std::size_t i = 0; i < f.data.size(); i += 2) {
        f.data[i] = 1.5;
        f.data[i + 1] = -0.25;
    }
    const Field out = upsample_flow(f);
    EXPECT_EQ(out.width, 8);
    EXPECT_EQ(out.height, 6);
    for (std::size_t i = 0; i < out.data.size(); i += 2) {
        EXPECT_DOUBLE_EQ(out.data[i], 3.0);
        EXPECT_DOUBLE_EQ(out.data[i + 1], -0.5);
    }
}

TEST(UpsampleFlow, ZeroStaysZero) {
    const Field out = upsample_flow(Field(5, 4, 2, 0.0));
    for (double d : out.data) EXPECT_EQ(d, 0.0);
}

TEST(UpsampleFlow, LinearRampClosedForm) {
    const int W = 8, H = 4;
    const double s = 0.37;
    Field f(W, H, 2, 0.0);
    for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) f.at(u, v, 0) = s * u;
    const Field out = upsample_flow(f);
    for (int v = 0; v < 2 * H; ++v)
        for (int u = 0; u < 2 * W; ++u) {
            const double src = std::clamp((u - 0.5) / 2.0, 0.0, W - 1.0);
            EXPECT_NEAR(out.at(u, v, 0), 2.0 * s * src, 1e-12);
            EXPECT_NEAR(out.at(u, v, 1), 0.0, 1e-15);
        }
}

TEST(Box3, AdjointIsTranspose) {
    // <box3(x), y> == <x, box3_adjoint(y)> for random x, y.
    Rng rng(7);
    const Field x = testutil::random_field(rng, 9, 6, 2, -1.0, 1.0);
    const Field y = testutil::random_field(rng, 9, 6, 2, -1.0, 1.0);
    const Field bx = box3(x);
    const Field aty = box3_adjoint(y);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        lhs += bx.data[i] * y.data[i];
        rhs += x.data[i] * aty.data[i];
    }
    EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Box3, ConstantFixedPoint) {
    const Field f(6, 5, 1, 2.5);
    const Field out = box3(f);
    for (double d : out.data) EXPECT_NEAR(d, 2.5, 1e-15);
}

}  // namespace
