// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/loss.hpp"

#include <cassert>
#include <cmath>

namespace uars {

namespace {

std::vector<double> window_weights(int size, double sigma) {
    const int r = size / 2;
    std::vector<double> g(size);
    for (int k = -r; k <= r; ++k) g[k + r] = std::exp(-0.5 * k * k / (sigma * sigma));
    return g;
}

// Sum of the window weights that fall inside [0, n) for each center.
std::vector<double> axis_norm(const std::vector<double>& g, int n) {
    const int r = static_cast<int>(g.size()) / 2;
    std::vector<double> norm(n, 0.0);
    for (int q = 0; q < n; ++q)
        for (int k = -r; k <= r; ++k)
            if (q + k >= 0 && q + k < n) norm[q] += g[k + r];
    return norm;
}

struct Window {
    const std::vector<double>& g;
    const std::vector<double>& norm_x;
    const std::vector<double>& norm_y;
    int width;
    int height;
};

// out(q) = sum_p w(q, p) in(p) with the border-renormalized separable window.
void filter(const Window& w, const std::vector<double>& in, std::vector<double>& out,
            std::vector<double>& tmp) {
    const int r = static_cast<int>(w.g.size()) / 2;
    tmp.assign(in.size(), 0.0);
    out.assign(in.size(), 0.0);
    for (int y = 0; y < w.height; ++y) {
        const double* row = in.data() + static_cast<std::size_t>(y) * w.width;
        double* dst = tmp.data() + static_cast<std::size_t>(y) * w.width;
        for (int x = 0; x < w.width; ++x) {
            double s = 0.0;
            const int k0 = std::max(-r, -x), k1 = std::min(r, w.width - 1 - x);
            for (int k = k0; k <= k1; ++k) s += w.g[k + r] * row[x + k];
            dst[x] = s / w.norm_x[x];
        }
    }
    for (int y = 0; y < w.height; ++y) {
        double* dst = out.data() + static_cast<std::size_t>(y) * w.width;
        const int k0 = std::max(-r, -y), k1 = std::min(r, w.height - 1 - y);
        for (int k = k0; k <= k1; ++k) {
            const double* src = tmp.data() + static_cast<std::size_t>(y + k) * w.width;
            const double gk = w.g[k + r];
            for (int x = 0; x < w.width; ++x) dst[x] += gk * src[x];
        }
        for (int x = 0; x < w.width; ++x) dst[x] /= w.norm_y[y];
    }
}

// Adjoint of filter(): out(p) = sum_q w(q, p) in(q).
void filter_transposed(const Window& w, const std::vector<double>& in, std::vector<double>& out,
                       std::vector<double>& tmp) {
    const int r = static_cast<int>(w.g.size()) / 2;
    std::vector<double> scaled(in.size());
    for (int y = 0; y < w.height; ++y)
        for (int x = 0; x < w.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w.width + x;
            scaled[i] = in[i] / w.norm_y[y];
        }
    tmp.assign(in.size(), 0.0);
    for (int y = 0; y < w.height; ++y) {
        double* dst = tmp.data() + static_cast<std::size_t>(y) * w.width;
        const int k0 = std::max(-r, -y), k1 = std::min(r, w.height - 1 - y);
        for (int k = k0; k <= k1; ++k) {
            const double* src = scaled.data() + static_cast<std::size_t>(y + k) * w.width;
            const double gk = w.g[k + r];
            for (int x = 0; x < w.width; ++x) dst[x] += gk * src[x];
        }
        for (int x = 0; x < w.width; ++x) dst[x] /= w.norm_x[x];
    }
    out.assign(in.size(), 0.0);
    for (int y = 0; y < w.height; ++y) {
        const double* row = tmp.data() + static_cast<std::size_t>(y) * w.width;
        double* dst = out.data() + static_cast<std::size_t>(y) * w.width;
        for (int x = 0; x < w.width; ++x) {
            double s = 0.0;
            const int k0 = std::max(-r, -x), k1 = std::min(r, w.width - 1 - x);
            for (int k = k0; k <= k1; ++k) s += w.g[k + r] * row[x + k];
            dst[x] = s;
        }
    }
}

std::vector<double> plane(const ImageBuffer& img, int c) {
    std::vector<double> out(img.pixel_count());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = img.data()[p * img.channels() + c];
    return out;
}

void check_rgb_pair(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_shape(b))
        throw Error(ErrorCode::kDimensionMismatch, "images differ in size or channel count");
    if (a.channels() != 3) throw Error(ErrorCode::kDimensionMismatch, "expected 3-channel images");
}

} // namespace

void LossConfig::validate() const {
    if (!(alpha >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "loss alpha must be >= 0");
    if (ssim_window < 1 || ssim_window % 2 == 0)
        throw Error(ErrorCode::kInvalidArgument, "ssim window must be a positive odd size");
    if (!(ssim_sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "ssim sigma must be positive");
    if (!(dynamic_range > 0.0))
        throw Error(ErrorCode::kInvalidArgument, "dynamic range must be positive");
}

SsimReference::SsimReference(const ImageBuffer& target, const LossConfig& cfg)
    : image_(target), cfg_(cfg) {
    cfg.validate();
    if (target.channels() != 3) throw Error(ErrorCode::kDimensionMismatch, "expected 3-channel images");
    weights_ = window_weights(cfg.ssim_window, cfg.ssim_sigma);
    norm_x_ = axis_norm(weights_, target.width());
    norm_y_ = axis_norm(weights_, target.height());
    const Window w{weights_, norm_x_, norm_y_, target.width(), target.height()};
    std::vector<double> tmp, sq, mean_sq;
    for (int c = 0; c < 3; ++c) {
        planes_.push_back(plane(target, c));
        const auto& b = planes_.back();
        mean_.emplace_back();
        filter(w, b, mean_.back(), tmp);
        sq.resize(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) sq[i] = b[i] * b[i];
        filter(w, sq, mean_sq, tmp);
        var_.emplace_back(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) var_.back()[i] = mean_sq[i] - mean_.back()[i] * mean_.back()[i];
    }
}

SsimOutput ssim(const ImageBuffer& a, const SsimReference& ref, bool with_gradient) {
    check_rgb_pair(a, ref.image_);
    const int width = a.width(), height = a.height();
    const std::size_t n = a.pixel_count();
    SsimOutput out{0.0, ImageBuffer(width, height, 3)};
    if (n == 0) {
        out.value = 1.0;
        return out;
    }
    const Window w{ref.weights_, ref.norm_x_, ref.norm_y_, width, height};
    const double c1 = std::pow(0.01 * ref.cfg_.dynamic_range, 2);
    const double c2 = std::pow(0.03 * ref.cfg_.dynamic_range, 2);
    const double inv_count = 1.0 / static_cast<double>(n * 3);

    std::vector<double> tmp, mu_a, mean_aa, mean_ab, prod(n);
    std::vector<double> m1(n), m2(n), m3(n), f1, f2, f3;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const std::vector<double> pa = plane(a, c);
        const auto& pb = ref.planes_[c];
        const auto& mu_b = ref.mean_[c];
        const auto& var_b = ref.var_[c];
        filter(w, pa, mu_a, tmp);
        for (std::size_t i = 0; i < n; ++i) prod[i] = pa[i] * pa[i];
        filter(w, prod, mean_aa, tmp);
        for (std::size_t i = 0; i < n; ++i) prod[i] = pa[i] * pb[i];
        filter(w, prod, mean_ab, tmp);

        double channel_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double var_a = mean_aa[i] - mu_a[i] * mu_a[i];
            const double cov = mean_ab[i] - mu_a[i] * mu_b[i];
            const double a1 = 2.0 * (mu_a[i] * mu_b[i]) + c1;
            const double a2 = 2.0 * cov + c2;
            const double b1 = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1;
            const double b2 = var_a + var_b[i] + c2;
            // Ratios first: for identical inputs they are exactly 1 and the
            // gradient terms below cancel exactly.
            const double r1 = a1 / b1;
            const double r2 = a2 / b2;
            const double s = r1 * r2;
            channel_sum += s;
            if (with_gradient) {
                const double d_mu = 2.0 * r2 / b1 * (mu_b[i] - mu_a[i] * r1);
                const double d_var = -s / b2;
                const double d_cov = 2.0 * r1 / b2;
                m2[i] = 2.0 * d_var;
                m3[i] = d_cov;
                m1[i] = d_mu - m2[i] * mu_a[i] - d_cov * mu_b[i];
            }
        }
        total += channel_sum;
        if (!with_gradient) continue;
        filter_transposed(w, m1, f1, tmp);
        filter_transposed(w, m2, f2, tmp);
        filter_transposed(w, m3, f3, tmp);
        for (std::size_t i = 0; i < n; ++i)
            out.grad.data()[i * 3 + c] = (f1[i] + pa[i] * f2[i] + pb[i] * f3[i]) * inv_count;
    }
    out.value = total * inv_count;
    return out;
}

SsimOutput ssim(const ImageBuffer& a, const ImageBuffer& b, const LossConfig& cfg, bool with_gradient) {
    check_rgb_pair(a, b);
    return ssim(a, SsimReference(b, cfg), with_gradient);
}

LossOutput uw_l2(const ImageBuffer& rendered, const ImageBuffer& target, const UncertaintyMap& u) {
    if (!rendered.same_shape(target))
        throw Error(ErrorCode::kDimensionMismatch, "rendered and target images differ in size");
    if (u.width() != rendered.width() || u.height() != rendered.height())
        throw Error(ErrorCode::kDimensionMismatch, "uncertainty map does not match the image size");
    const int channels = rendered.channels();
    LossOutput out{0.0, ImageBuffer(rendered.width(), rendered.height(), channels)};
    const std::size_t count = rendered.size();
    if (count == 0) return out;
    const double inv_count = 1.0 / static_cast<double>(count);
    double sum = 0.0;
    for (std::size_t p = 0; p < rendered.pixel_count(); ++p) {
        const double confidence = 1.0 - u.map.data()[p];
        const double weight = confidence * confidence;
        for (int c = 0; c < channels; ++c) {
            const std::size_t i = p * channels + c;
            const double residual = rendered.data()[i] - target.data()[i];
            sum += weight * residual * residual;
            out.grad_rendered.data()[i] = 2.0 * weight * residual * inv_count;
            assert(u.map.data()[p] != 1.0 || out.grad_rendered.data()[i] == 0.0);
        }
    }
    out.value = sum * inv_count;
    return out;
}

LossOutput refine_loss(const ImageBuffer& rendered, const SsimReference& pseudo_fst,
                       const UncertaintyMap& u, const LossConfig& cfg) {
    cfg.validate();
    LossOutput out = uw_l2(rendered, pseudo_fst.image(), u);
    if (cfg.alpha == 0.0) return out;
    const SsimOutput s = ssim(rendered, pseudo_fst, true);
    // d/dx of alpha (1 - s) / 2 is -alpha/2 ds/dx; the literal form is +alpha ds/dx.
    const double term = cfg.literal_ssim ? cfg.alpha * s.value : cfg.alpha * (1.0 - s.value) * 0.5;
    const double scale = cfg.literal_ssim ? cfg.alpha : -0.5 * cfg.alpha;
    out.value += term;
    for (std::size_t i = 0; i < out.grad_rendered.size(); ++i)
        out.grad_rendered.data()[i] += scale * s.grad.data()[i];
    return out;
}

LossOutput refine_loss(const ImageBuffer& rendered, const ImageBuffer& pseudo_fst,
                       const UncertaintyMap& u, const LossConfig& cfg) {
    return refine_loss(rendered, SsimReference(pseudo_fst, cfg), u, cfg);
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_shape(b)) throw Error(ErrorCode::kDimensionMismatch, "images differ in size");
    if (a.size() == 0) return 100.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

} // namespace uars
