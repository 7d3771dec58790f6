#pragma once

// Windowed correlation volume between two feature fields, kept as a verified
// matching-cost primitive, plus the zero-mean patch descriptor that stands in
// for learned features.

#include <cmath>

#include "flowlift/error.hpp"
#include "flowlift/field.hpp"

namespace flowlift {

/// H x W x l^2 stack of feature correlations over a centered l x l
/// displacement window.
struct CorrelationVolume {
    int width = 0;
    int height = 0;
    int window = 0;  // l, odd
    Field data;      // channels = l^2, displacement-major: (dv + r) * l + (du + r)

    double at(int u, int v, int du, int dv) const {
        const int r = window / 2;
        return data.at(u, v, (dv + r) * window + (du + r));
    }
};

/// Entry (p, d) is the channel-mean of the elementwise product of f1 at p and
/// f2 at p + d, with d in the centered l x l window and clamp-to-edge reads.
/// The default window (l = 9, search radius 4) follows common cost-volume
/// practice.
inline CorrelationVolume correlation_volume(const Field& f1, const Field& f2, int l = 9) {
    require_same_shape(f1, f2, "correlation_volume");
    if (l < 1 || l % 2 == 0) throw ConfigError("correlation_volume: window must be odd");
    const int r = l / 2;
    const int C = f1.channels;
    CorrelationVolume vol;
    vol.width = f1.width;
    vol.height = f1.height;
    vol.window = l;
    vol.data = Field(f1.width, f1.height, l * l);
    for (int v = 0; v < f1.height; ++v) {
        for (int u = 0; u < f1.width; ++u) {
            for (int dv = -r; dv <= r; ++dv) {
                const int v2 = std::clamp(v + dv, 0, f1.height - 1);
                for (int du = -r; du <= r; ++du) {
                    const int u2 = std::clamp(u + du, 0, f1.width - 1);
                    double s = 0.0;
                    for (int m = 0; m < C; ++m) s += f1.at(u, v, m) * f2.at(u2, v2, m);
                    vol.data.at(u, v, (dv + r) * l + (du + r)) = s / C;
                }
            }
        }
    }
    return vol;
}

/// Per-pixel descriptor: the 3x3 neighborhood intensities with their mean
/// removed, 9 output channels per input channel. Invariant to global
/// brightness shifts.
inline Field patch_descriptor(const Field& image) {
    Field out(image.width, image.height, 9 * image.channels);
    for (int v = 0; v < image.height; ++v) {
        for (int u = 0; u < image.width; ++u) {
            for (int c = 0; c < image.channels; ++c) {
                double patch[9];
                double mean = 0.0;
                int k = 0;
                for (int dv = -1; dv <= 1; ++dv) {
                    const int vv = std::clamp(v + dv, 0, image.height - 1);
                    for (int du = -1; du <= 1; ++du) {
                        patch[k] = image.at(std::clamp(u + du, 0, image.width - 1), vv, c);
                        mean += patch[k];
                        ++k;
                    }
                }
                mean /= 9.0;
                for (int i = 0; i < 9; ++i) out.at(u, v, c * 9 + i) = patch[i] - mean;
            }
        }
    }
    return out;
}

}  // namespace flowlift
