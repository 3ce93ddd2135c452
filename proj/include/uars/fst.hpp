// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/core.hpp"

#include <vector>

namespace uars {

struct FstConfig {
    /// Half-width of the swapped low-frequency window as a fraction of the
    /// shorter image side, in (0, 0.5].
    double beta = 0.01;

    void validate() const;
};

/// Unnormalized 2D DFT of one channel in polar form, row-major H x W in the
/// transform's native (uncentered) bin order.
struct Spectrum {
    int width = 0;
    int height = 0;
    std::vector<double> amplitude;
    std::vector<double> phase;
};

/// Forward transform of a single-channel grid.
Spectrum amplitude_phase_split(const DenseMap& channel);

/// Inverse transform (scaled by 1/(H W)); returns the real part.
DenseMap reconstruct(const Spectrum& spectrum);

/// floor(beta * min(H, W)).
int fst_window_half_width(double beta, int width, int height);

/// True when bin (kx, ky) lies in the centered square window of signed
/// frequencies |fx| <= half_width, |fy| <= half_width. The window is
/// symmetric under negation, so swapping inside it keeps real-image spectra
/// Hermitian.
bool in_fst_window(int kx, int ky, int width, int height, int half_width);

/// Content spectrum with its amplitude replaced by the style amplitude inside
/// the window. Phase is copied unchanged from the content.
Spectrum swap_low_frequency_amplitude(const Spectrum& content, const Spectrum& style,
                                      int half_width);

/// Fourier style transfer before the final clamp: per channel, swap the
/// low-frequency amplitude of `content` with that of `style`, keep the
/// content phase, invert.
ImageBuffer fst_transfer_unclamped(const ImageBuffer& content, const ImageBuffer& style,
                                   const FstConfig& cfg);

/// fst_transfer_unclamped clamped to [0,1].
ImageBuffer fst_transfer(const ImageBuffer& content, const ImageBuffer& style,
                         const FstConfig& cfg);

} // namespace uars
