// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/core.hpp"
#include "uars/uncertainty.hpp"

#include <vector>

namespace uars {

struct LossConfig {
    double alpha = 0.2;       // weight of the structural term
    int ssim_window = 11;     // odd
    double ssim_sigma = 1.5;
    double dynamic_range = 1.0;
    /// Add +alpha * SSIM instead of alpha * (1 - SSIM) / 2. Only for
    /// investigating the sign of the structural term; it rewards dissimilarity.
    bool literal_ssim = false;

    void validate() const;
};

struct LossOutput {
    double value = 0.0;
    ImageBuffer grad_rendered;
};

/// Mean SSIM and its gradient with respect to the first image.
struct SsimOutput {
    double value = 0.0;
    ImageBuffer grad;
};

/// Statistics of a fixed SSIM target, computed once and reused across
/// evaluations against the same image.
class SsimReference {
public:
    SsimReference(const ImageBuffer& target, const LossConfig& cfg);

    const ImageBuffer& image() const { return image_; }

private:
    friend SsimOutput ssim(const ImageBuffer& a, const SsimReference& ref, bool with_gradient);

    ImageBuffer image_;
    LossConfig cfg_;
    std::vector<double> weights_;
    std::vector<double> norm_x_, norm_y_;
    std::vector<std::vector<double>> planes_, mean_, var_;
};

/// Mean over pixels and channels of the SSIM map, using a Gaussian window
/// clipped at the borders with renormalized weights. C1 = (0.01 L)^2 and
/// C2 = (0.03 L)^2.
SsimOutput ssim(const ImageBuffer& a, const ImageBuffer& b, const LossConfig& cfg,
                bool with_gradient = true);
SsimOutput ssim(const ImageBuffer& a, const SsimReference& ref, bool with_gradient = true);

/// Mean over pixels and channels of ((1 - U) (rendered - target))^2. U is
/// broadcast across channels; pixels with U == 1 get an exactly zero gradient.
LossOutput uw_l2(const ImageBuffer& rendered, const ImageBuffer& target, const UncertaintyMap& u);

/// uw_l2 + alpha * (1 - SSIM) / 2 against an FST-adapted pseudo-view.
LossOutput refine_loss(const ImageBuffer& rendered, const ImageBuffer& pseudo_fst,
                       const UncertaintyMap& u, const LossConfig& cfg);
LossOutput refine_loss(const ImageBuffer& rendered, const SsimReference& pseudo_fst,
                       const UncertaintyMap& u, const LossConfig& cfg);

/// 10 log10(1 / MSE) for unit dynamic range, capped at 100 dB when
/// MSE < 1e-10.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

} // namespace uars
