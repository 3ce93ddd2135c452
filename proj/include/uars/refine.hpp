// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/core.hpp"
#include "uars/fst.hpp"
#include "uars/loss.hpp"
#include "uars/raster.hpp"
#include "uars/uncertainty.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace uars {

/// Adaptive densification and pruning schedule and thresholds.
struct AdpConfig {
    bool enabled = true;
    int densify_start = 100;
    int densify_end = 800;
    int densify_interval = 100;
    /// Threshold on the mean accumulated screen-space position gradient,
    /// measured in normalized device coordinates.
    double grad_threshold = 2e-4;
    /// Gaussians whose largest scale exceeds this fraction of the scene
    /// extent are split, smaller ones are cloned.
    double split_scale_fraction = 0.01;
    double prune_opacity = 0.005;
    int split_count = 2;
};

enum class ScaleBandMode {
    kAbsolute, // s0 +/- band, world units
    kRelative, // s0 * (1 +/- band)
};

struct RefineConfig {
    int steps = 1000;
    int batch_size = 2;
    double lr_position_start = 1e-3;
    double lr_position_end = 2e-5;
    double lr_rotation = 1e-3;
    double lr_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-3;
    double scale_band = 1e-2;
    ScaleBandMode scale_band_mode = ScaleBandMode::kAbsolute;
    AdpConfig adp;
    LossConfig loss;
    FstConfig fst;
    bool use_fst = true;
    /// When false, logits are ignored and every view is treated as U == 0.
    bool use_uncertainty = true;
    Vec3 background = Vec3::Zero();
    std::uint64_t seed = 0;

    void validate() const;
};

/// A supervision image with its camera and optional per-pixel class scores.
struct PseudoView {
    ImageBuffer image;
    CameraView camera;
    std::optional<DenseMap> logits;
    /// The scores are already probabilities; skip the softmax.
    bool logits_are_probs = false;
};

struct RefineReport {
    std::vector<double> loss;              // per step, averaged over the batch
    std::vector<std::size_t> gaussian_count; // per step, after the update
    std::vector<double> step_seconds;
    std::optional<double> final_psnr;      // mean over evaluation views
    std::optional<double> final_ssim;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
};

struct RefineResult {
    GaussianScene scene;
    RefineReport report;
};

/// Exponential interpolation lr_start (lr_end / lr_start)^(step / steps).
double lr_schedule(int step, const RefineConfig& cfg);

/// Keeps every scale within the configured band around its snapshot, with a
/// positive floor. Scales already inside the band are left bit-identical.
void clamp_scales(GaussianScene& scene, const RefineConfig& cfg);

struct AdpResult {
    GaussianScene scene;
    /// For each output Gaussian, the input index it continues, or nullopt
    /// for a newly created Gaussian.
    std::vector<std::optional<std::size_t>> source;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
};

/// One densification and pruning pass. `mean_grad` is the per-Gaussian
/// screen-space gradient statistic averaged since the previous pass.
AdpResult adp_step(const GaussianScene& scene, std::span<const double> mean_grad,
                   const AdpConfig& cfg, std::mt19937_64& rng);

/// Called after every step with the 1-based step count and current scene.
using StepObserver = std::function<void(int step, const GaussianScene& scene)>;

/// Iterative refinement against pseudo-views. Each view is FST-adapted to
/// `input_image` (when enabled) and paired with its uncertainty map once, up
/// front. Every step renders `batch_size` views from a seeded round-robin
/// shuffle, averages the gradients of the refinement loss, applies Adam per
/// parameter group, clamps scales and densifies on schedule. Results are
/// bit-reproducible for identical inputs and seed.
RefineResult refine(GaussianScene scene, const ImageBuffer& input_image,
                    std::span<const PseudoView> pseudo_views, std::span<const PseudoView> eval_views,
                    const RefineConfig& cfg, const StepObserver& observer = {});

/// Mean PSNR and SSIM of renders of `scene` against the views' images.
struct EvalMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
};
EvalMetrics evaluate(const GaussianScene& scene, std::span<const PseudoView> views,
                     const Vec3& background = Vec3::Zero());

} // namespace uars
