// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/core.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace uars {

inline constexpr int kTileSize = 16;
inline constexpr double kNearPlane = 0.01;
inline constexpr double kLowPassDilation = 0.3;
inline constexpr double kSigmaCutoff = 3.0;
inline constexpr double kTransmittanceStop = 1e-4;

/// exp(-kSigmaCutoff^2 / 2): value of the raw Gaussian on the cutoff ellipse.
inline const double kFalloffFloor = std::exp(-0.5 * kSigmaCutoff * kSigmaCutoff);

/// Raw Gaussian minus its tangent line (in d2) at the cutoff, before scaling.
inline double falloff_unscaled(double d2) {
    const double c2 = kSigmaCutoff * kSigmaCutoff;
    return std::exp(-0.5 * d2) - kFalloffFloor * (1.0 + 0.5 * (c2 - d2));
}

inline const double kFalloffNorm = falloff_unscaled(0.0);

/// Screen-space footprint weight at squared Mahalanobis distance d2.
///
/// The Gaussian is lowered by its tangent line at the 3-sigma ellipse and
/// rescaled, so it is 1 at the center and reaches 0 with zero slope on the
/// ellipse. A splat never touches a pixel outside its bounding tiles, and
/// the footprint is continuously differentiable in every parameter.
inline double splat_falloff(double d2) {
    if (!(d2 < kSigmaCutoff * kSigmaCutoff)) return 0.0;
    return falloff_unscaled(d2) / kFalloffNorm;
}

/// d splat_falloff / d d2 inside the support.
inline double splat_falloff_derivative(double d2) {
    if (!(d2 < kSigmaCutoff * kSigmaCutoff)) return 0.0;
    return -0.5 * (std::exp(-0.5 * d2) - kFalloffFloor) / kFalloffNorm;
}

/// A Gaussian projected into one camera.
struct SplatProjection {
    Vec2 mean_2d = Vec2::Zero();  // pixels
    Mat2 cov_2d = Mat2::Identity(); // pixels^2, low-pass dilation included
    Vec3 conic = Vec3::Zero();    // inverse of cov_2d as (xx, xy, yy)
    double depth = 0.0;           // camera-space z
    int radius = 0;               // ceil(3 sigma of the major axis), >= 1
    std::size_t gaussian_index = 0;
    double opacity = 0.0;         // activated
    Vec3 color = Vec3::Zero();
};

struct RasterSettings {
    Vec3 background = Vec3::Zero();
    bool compute_depth = false;
};

/// EWA projection of every Gaussian. Splats in front of the near plane and
/// whose 3-sigma box touches the viewport are kept, in scene order.
std::vector<SplatProjection> project(const GaussianScene& scene, const CameraView& cam);

/// Inclusive pixel rectangle a splat may touch; empty when x0 > x1 or y0 > y1.
struct PixelRect {
    int x0, y0, x1, y1;
};
PixelRect splat_pixel_rect(const SplatProjection& s, int width, int height);

/// Front-to-back compositing order: ascending depth, ties by gaussian_index.
std::vector<std::size_t> depth_order(const std::vector<SplatProjection>& splats);

struct RenderOutput {
    ImageBuffer color;             // 3 channels
    DenseMap alpha;                // accumulated opacity
    std::optional<DenseMap> depth; // sum of depth * weight, when requested
};

RenderOutput render(const GaussianScene& scene, const CameraView& cam,
                    const RasterSettings& settings = {});

/// Gradient of a scalar loss with respect to one Gaussian's parameters.
struct GaussianGradient {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Zero();
};

struct RenderGradients {
    std::vector<GaussianGradient> gaussians;
    /// dL/d mean_2d in pixels, zero for culled Gaussians.
    std::vector<Vec2> mean_2d;
    /// |dL/d mean_2d| per Gaussian; the densification statistic.
    std::vector<double> mean_2d_norm;
    /// 1 when the Gaussian survived culling for this camera.
    std::vector<std::uint8_t> visible;
};

/// Analytic adjoint of render(). `grad_color` is dL/d color (3 channels at the
/// camera resolution); `grad_alpha`, when given, is dL/d alpha. Per-tile
/// partial sums are reduced in tile order, so the result does not depend on
/// the worker count. The depth sort is treated as constant.
RenderGradients render_backward(const GaussianScene& scene, const CameraView& cam,
                                const ImageBuffer& grad_color,
                                const DenseMap* grad_alpha = nullptr,
                                const RasterSettings& settings = {});

} // namespace uars
