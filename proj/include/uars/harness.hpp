// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/core.hpp"
#include "uars/refine.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace uars {

/// Synthetic ground truth: random Gaussians in a cube seen by a ring of
/// cameras facing the origin.
struct SynthConfig {
    int gaussian_count = 500;
    double box_half_extent = 0.5; // positions uniform in [-h, h]^3
    double scale_min = 0.005;     // scales log-uniform in [min, max]
    double scale_max = 0.05;
    double opacity_min = 0.5;
    double opacity_max = 0.98;
    int camera_count = 12;
    double camera_radius = 2.5;
    double camera_elevation = 0.6; // height of the ring above the cube's center
    int holdout_count = 4;         // evenly spaced, starting at index 1
    int width = 384;
    int height = 256;
    double focal_scale = 1.5; // fx = fy = focal_scale * width
    Vec3 background = Vec3::Zero();
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthView {
    CameraView camera;
    ImageBuffer image;
};

struct SynthData {
    GaussianScene scene;
    std::vector<SynthView> views; // ring order
    std::vector<std::size_t> train;
    std::vector<std::size_t> holdout;
};

SynthData synth_scene(const SynthConfig& cfg);

/// Additive zero-mean Gaussian jitter on positions and colors (colors are
/// clamped to [0,1]). Scale snapshots are re-taken on the result.
GaussianScene perturb(const GaussianScene& scene, double position_sigma = 0.01,
                      double color_sigma = 0.05, std::uint64_t seed = 0);

/// Noise rectangles pasted into a subset of the supervision views.
struct CorruptionSpec {
    double fraction_of_views = 0.5;
    int rectangles_per_view = 3;
    double rectangle_area_fraction = 0.1; // each, same aspect as the image
    /// Emit two-class logits: uniform inside the rectangles, one-hot outside.
    bool mark_uncertain = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Overwrites `spec.rectangles_per_view` rectangles with uniform noise and
/// returns the matching logits (U = 1 inside, U = 0 outside).
DenseMap corrupt_view(ImageBuffer& image, const CorruptionSpec& spec, std::mt19937_64& rng);

/// Two-class logits with U == 0 everywhere.
DenseMap confident_logits(int width, int height);

/// Per-channel affine color cast, v' = clamp(gain * v + offset).
struct ColorCast {
    Vec3 gain = Vec3(1.1, 1.0, 0.85);
    Vec3 offset = Vec3(0.08, 0.03, -0.04);
};
ImageBuffer apply_color_cast(const ImageBuffer& image, const ColorCast& cast);

struct ExperimentConfig {
    SynthConfig synth;
    double position_sigma = 0.01;
    double color_sigma = 0.05;
    /// Supervision views get this cast before refinement; the input image
    /// (clean view 0) does not.
    std::optional<ColorCast> color_cast;
    RefineConfig refine = default_refine();
    std::uint64_t seed = 0;
    /// Forwarded to refine().
    StepObserver observer;

    /// Refinement defaults with FST off: oracle supervision has no style gap
    /// unless a color cast is requested.
    static RefineConfig default_refine();
};

struct ExperimentReport {
    double init_psnr = 0.0;  // perturbed scene on held-out views
    double final_psnr = 0.0; // refined scene on held-out views
    double delta = 0.0;
    RefineReport refine;
};

/// synth -> perturb -> optionally corrupt -> refine -> evaluate on the
/// held-out views. Every random draw derives from `cfg.seed`, so paired runs
/// that differ only in flags see identical data.
ExperimentReport run_recovery_experiment(const ExperimentConfig& cfg,
                                         const std::optional<CorruptionSpec>& corruption,
                                         bool use_uncertainty);

} // namespace uars
