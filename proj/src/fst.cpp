// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/fst.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>

namespace uars {

namespace {

// The FFTW planner is not thread-safe; executing a plan is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

class Dft2d {
public:
    Dft2d(int width, int height, int sign) : size_(static_cast<std::size_t>(width) * height) {
        in_ = fftw_alloc_complex(size_);
        out_ = fftw_alloc_complex(size_);
        std::lock_guard lock(planner_mutex());
        plan_ = fftw_plan_dft_2d(height, width, in_, out_, sign, FFTW_ESTIMATE);
    }
    ~Dft2d() {
        {
            std::lock_guard lock(planner_mutex());
            fftw_destroy_plan(plan_);
        }
        fftw_free(in_);
        fftw_free(out_);
    }
    Dft2d(const Dft2d&) = delete;
    Dft2d& operator=(const Dft2d&) = delete;

    fftw_complex* in() { return in_; }
    const fftw_complex* out() const { return out_; }
    std::size_t size() const { return size_; }
    void execute() { fftw_execute(plan_); }

private:
    std::size_t size_;
    fftw_complex* in_ = nullptr;
    fftw_complex* out_ = nullptr;
    fftw_plan plan_ = nullptr;
};

int signed_frequency(int k, int n) { return k <= n / 2 ? k : k - n; }

DenseMap channel_of(const ImageBuffer& img, int c) {
    DenseMap out(img.width(), img.height(), 1);
    for (std::size_t p = 0; p < img.pixel_count(); ++p)
        out.data()[p] = img.data()[p * img.channels() + c];
    return out;
}

} // namespace

void FstConfig::validate() const {
    if (!(beta > 0.0 && beta <= 0.5))
        throw Error(ErrorCode::kInvalidArgument, "fst beta must lie in (0, 0.5]");
}

Spectrum amplitude_phase_split(const DenseMap& channel) {
    if (channel.channels() != 1)
        throw Error(ErrorCode::kDimensionMismatch, "amplitude_phase_split expects one channel");
    Spectrum s{channel.width(), channel.height(), {}, {}};
    if (channel.pixel_count() == 0) return s;
    Dft2d dft(channel.width(), channel.height(), FFTW_FORWARD);
    for (std::size_t i = 0; i < dft.size(); ++i) {
        dft.in()[i][0] = channel.data()[i];
        dft.in()[i][1] = 0.0;
    }
    dft.execute();
    s.amplitude.resize(dft.size());
    s.phase.resize(dft.size());
    for (std::size_t i = 0; i < dft.size(); ++i) {
        s.amplitude[i] = std::hypot(dft.out()[i][0], dft.out()[i][1]);
        s.phase[i] = std::atan2(dft.out()[i][1], dft.out()[i][0]);
    }
    return s;
}

DenseMap reconstruct(const Spectrum& spectrum) {
    DenseMap out(spectrum.width, spectrum.height, 1);
    if (out.pixel_count() == 0) return out;
    Dft2d dft(spectrum.width, spectrum.height, FFTW_BACKWARD);
    for (std::size_t i = 0; i < dft.size(); ++i) {
        dft.in()[i][0] = spectrum.amplitude[i] * std::cos(spectrum.phase[i]);
        dft.in()[i][1] = spectrum.amplitude[i] * std::sin(spectrum.phase[i]);
    }
    dft.execute();
    const double scale = 1.0 / static_cast<double>(dft.size());
    for (std::size_t i = 0; i < dft.size(); ++i) out.data()[i] = dft.out()[i][0] * scale;
    return out;
}

int fst_window_half_width(double beta, int width, int height) {
    return static_cast<int>(std::floor(beta * std::min(width, height)));
}

bool in_fst_window(int kx, int ky, int width, int height, int half_width) {
    return std::abs(signed_frequency(kx, width)) <= half_width &&
           std::abs(signed_frequency(ky, height)) <= half_width;
}

Spectrum swap_low_frequency_amplitude(const Spectrum& content, const Spectrum& style,
                                      int half_width) {
    if (content.width != style.width || content.height != style.height)
        throw Error(ErrorCode::kDimensionMismatch, "content and style spectra differ in size");
    Spectrum out = content;
    for (int ky = 0; ky < content.height; ++ky)
        for (int kx = 0; kx < content.width; ++kx)
            if (in_fst_window(kx, ky, content.width, content.height, half_width)) {
                const std::size_t i = static_cast<std::size_t>(ky) * content.width + kx;
                out.amplitude[i] = style.amplitude[i];
            }
    return out;
}

ImageBuffer fst_transfer_unclamped(const ImageBuffer& content, const ImageBuffer& style,
                                   const FstConfig& cfg) {
    cfg.validate();
    if (!content.same_shape(style))
        throw Error(ErrorCode::kDimensionMismatch, "content and style images differ in size");
    if (content.channels() != 3)
        throw Error(ErrorCode::kDimensionMismatch, "fst expects 3-channel images");
    const int half = fst_window_half_width(cfg.beta, content.width(), content.height());
    ImageBuffer out(content.width(), content.height(), 3);
    for (int c = 0; c < 3; ++c) {
        const Spectrum swapped = swap_low_frequency_amplitude(
            amplitude_phase_split(channel_of(content, c)), amplitude_phase_split(channel_of(style, c)),
            half);
        const DenseMap channel = reconstruct(swapped);
        for (std::size_t p = 0; p < out.pixel_count(); ++p) out.data()[p * 3 + c] = channel.data()[p];
    }
    return out;
}

ImageBuffer fst_transfer(const ImageBuffer& content, const ImageBuffer& style, const FstConfig& cfg) {
    ImageBuffer out = fst_transfer_unclamped(content, style, cfg);
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

} // namespace uars
