// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/refine.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

namespace uars {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-15;
constexpr double kScaleFloor = 1e-7;
constexpr double kSplitScaleDivisor = 1.6;

// Parameter layout of one Gaussian inside the optimizer state.
constexpr int kParams = 14;
enum Group { kPosition, kRotation, kScale, kOpacity, kColor };
constexpr std::array<Group, kParams> kGroupOf = {
    kPosition, kPosition, kPosition, kRotation, kRotation, kRotation, kRotation,
    kScale,    kScale,    kScale,    kOpacity,  kColor,    kColor,    kColor};

void pack(const GaussianGradient& g, double* out) {
    for (int i = 0; i < 3; ++i) out[i] = g.position[i];
    for (int i = 0; i < 4; ++i) out[3 + i] = g.rotation[i];
    for (int i = 0; i < 3; ++i) out[7 + i] = g.log_scale[i];
    out[10] = g.opacity_logit;
    for (int i = 0; i < 3; ++i) out[11 + i] = g.color[i];
}

std::array<double*, kParams> fields(Gaussian3D& g) {
    return {&g.position[0],  &g.position[1],  &g.position[2],  &g.rotation[0], &g.rotation[1],
            &g.rotation[2],  &g.rotation[3],  &g.log_scale[0], &g.log_scale[1], &g.log_scale[2],
            &g.opacity_logit, &g.color[0],    &g.color[1],     &g.color[2]};
}

class Adam {
public:
    explicit Adam(std::size_t count) : m_(count * kParams, 0.0), v_(count * kParams, 0.0) {}

    void step(GaussianScene& scene, const std::vector<double>& grads,
              const std::array<double, 5>& lr) {
        ++t_;
        const double bias1 = 1.0 - std::pow(kAdamBeta1, t_);
        const double bias2 = 1.0 - std::pow(kAdamBeta2, t_);
        for (std::size_t i = 0; i < scene.size(); ++i) {
            auto params = fields(scene[i]);
            for (int k = 0; k < kParams; ++k) {
                const std::size_t j = i * kParams + k;
                const double g = grads[j];
                m_[j] = kAdamBeta1 * m_[j] + (1.0 - kAdamBeta1) * g;
                v_[j] = kAdamBeta2 * v_[j] + (1.0 - kAdamBeta2) * g * g;
                const double m_hat = m_[j] / bias1;
                const double v_hat = v_[j] / bias2;
                *params[k] -= lr[kGroupOf[k]] * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
            }
        }
    }

    /// Carries state along with surviving Gaussians; new ones start at zero.
    void remap(const std::vector<std::optional<std::size_t>>& source) {
        std::vector<double> m(source.size() * kParams, 0.0), v(source.size() * kParams, 0.0);
        for (std::size_t i = 0; i < source.size(); ++i) {
            if (!source[i]) continue;
            std::copy_n(m_.begin() + *source[i] * kParams, kParams, m.begin() + i * kParams);
            std::copy_n(v_.begin() + *source[i] * kParams, kParams, v.begin() + i * kParams);
        }
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    std::vector<double> m_, v_;
    int t_ = 0;
};

struct PreparedView {
    const CameraView* camera;
    std::unique_ptr<SsimReference> target;
    UncertaintyMap uncertainty;
};

void check_view_shapes(const PseudoView& view, std::size_t index) {
    view.camera.validate(1e-4);
    const auto where = "view " + std::to_string(index);
    if (!view.image.same_shape(view.camera.width, view.camera.height, 3))
        throw Error(ErrorCode::kImageResolution,
                    where + ": image size does not match its camera (" +
                        std::to_string(view.image.width()) + "x" + std::to_string(view.image.height()) +
                        " vs " + std::to_string(view.camera.width) + "x" +
                        std::to_string(view.camera.height) + ")");
    if (view.logits && (view.logits->width() != view.image.width() ||
                        view.logits->height() != view.image.height()))
        throw Error(ErrorCode::kLogitsResolution, where + ": logits resolution does not match the image");
}

std::vector<PreparedView> prepare_views(const ImageBuffer& input_image,
                                        std::span<const PseudoView> views, const RefineConfig& cfg) {
    std::vector<PreparedView> out;
    out.reserve(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
        const PseudoView& v = views[i];
        check_view_shapes(v, i);
        ImageBuffer target = v.image;
        if (cfg.use_fst) {
            if (!input_image.same_shape(v.image))
                throw Error(ErrorCode::kImageResolution,
                            "input image must match the pseudo-view resolution for FST");
            target = fst_transfer(v.image, input_image, cfg.fst);
        }
        UncertaintyMap u = UncertaintyMap::confident(v.image.width(), v.image.height());
        if (cfg.use_uncertainty && v.logits)
            u = v.logits_are_probs ? uncertainty_from_probs(*v.logits) : uncertainty_from_logits(*v.logits);
        out.push_back({&v.camera, std::make_unique<SsimReference>(target, cfg.loss), std::move(u)});
    }
    return out;
}

// Seeded shuffle of view indices, reshuffled each time it is exhausted.
class ViewSampler {
public:
    ViewSampler(std::size_t count, std::uint64_t seed) : order_(count), rng_(seed) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        shuffle();
    }
    std::size_t next() {
        if (cursor_ == order_.size()) shuffle();
        return order_[cursor_++];
    }

private:
    void shuffle() {
        // Fisher-Yates with an explicit draw so the order does not depend on
        // the standard library's shuffle.
        for (std::size_t i = order_.size(); i > 1; --i) {
            const std::size_t j = rng_() % i;
            std::swap(order_[i - 1], order_[j]);
        }
        cursor_ = 0;
    }
    std::vector<std::size_t> order_;
    std::mt19937_64 rng_;
    std::size_t cursor_ = 0;
};

Vec3 sample_unit_ball(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        const Vec3 p(u(rng), u(rng), u(rng));
        if (p.squaredNorm() <= 1.0) return p;
    }
}

} // namespace

void RefineConfig::validate() const {
    if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 1");
    if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
    // Both zero freezes positions; otherwise the decay needs a positive end.
    const bool frozen = lr_position_start == 0.0 && lr_position_end == 0.0;
    if (!frozen && !(lr_position_end > 0.0 && lr_position_end <= lr_position_start))
        throw Error(ErrorCode::kInvalidArgument, "need 0 < lr_position_end <= lr_position_start");
    for (double lr : {lr_rotation, lr_scale, lr_opacity, lr_color})
        if (!(lr >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rates must be >= 0");
    if (!(scale_band > 0.0)) throw Error(ErrorCode::kInvalidArgument, "scale_band must be positive");
    if (adp.enabled) {
        if (!(adp.densify_start <= adp.densify_end && adp.densify_end <= steps))
            throw Error(ErrorCode::kInvalidArgument, "need densify_start <= densify_end <= steps");
        if (adp.densify_interval < 1)
            throw Error(ErrorCode::kInvalidArgument, "densify_interval must be >= 1");
        if (adp.split_count < 1) throw Error(ErrorCode::kInvalidArgument, "split_count must be >= 1");
    }
    loss.validate();
    fst.validate();
}

double lr_schedule(int step, const RefineConfig& cfg) {
    const double t = std::clamp(static_cast<double>(step) / cfg.steps, 0.0, 1.0);
    if (cfg.lr_position_start == 0.0) return 0.0;
    if (t == 0.0) return cfg.lr_position_start;
    if (t == 1.0) return cfg.lr_position_end;
    return cfg.lr_position_start * std::pow(cfg.lr_position_end / cfg.lr_position_start, t);
}

void clamp_scales(GaussianScene& scene, const RefineConfig& cfg) {
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3& s0 = scene.initial_scale(i);
        Gaussian3D& g = scene[i];
        for (int k = 0; k < 3; ++k) {
            double lo, hi;
            if (cfg.scale_band_mode == ScaleBandMode::kAbsolute) {
                lo = s0[k] - cfg.scale_band;
                hi = s0[k] + cfg.scale_band;
            } else {
                lo = s0[k] * (1.0 - cfg.scale_band);
                hi = s0[k] * (1.0 + cfg.scale_band);
            }
            lo = std::max(lo, kScaleFloor);
            const double s = std::exp(g.log_scale[k]);
            if (s > hi) g.log_scale[k] = std::log(hi);
            else if (s < lo) g.log_scale[k] = std::log(lo);
        }
    }
}

AdpResult adp_step(const GaussianScene& scene, std::span<const double> mean_grad,
                   const AdpConfig& cfg, std::mt19937_64& rng) {
    if (mean_grad.size() != scene.size())
        throw Error(ErrorCode::kDimensionMismatch, "gradient statistic does not match the scene");

    std::vector<Gaussian3D> gaussians;
    std::vector<Vec3> snapshots;
    std::vector<std::uint64_t> ids;
    std::vector<std::optional<std::size_t>> source;
    std::uint64_t next_id = scene.next_id();
    AdpResult result;

    std::vector<std::size_t> clones, splits;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!(mean_grad[i] > cfg.grad_threshold)) continue;
        if (scene[i].scale().maxCoeff() <= cfg.split_scale_fraction * scene.scene_extent())
            clones.push_back(i);
        else
            splits.push_back(i);
    }

    std::vector<bool> removed(scene.size(), false);
    for (std::size_t i : splits) removed[i] = true;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (removed[i]) continue;
        gaussians.push_back(scene[i]);
        snapshots.push_back(scene.initial_scale(i));
        ids.push_back(scene.id(i));
        source.emplace_back(i);
    }
    auto append_new = [&](const Gaussian3D& g) {
        gaussians.push_back(g);
        snapshots.push_back(g.scale());
        ids.push_back(next_id++);
        source.emplace_back(std::nullopt);
    };

    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i : clones) {
        const Gaussian3D& parent = scene[i];
        const Mat3 axes = rotation_matrix(normalize_quaternion(parent.rotation)) *
                          parent.scale().asDiagonal();
        Gaussian3D copy = parent;
        copy.position += axes * sample_unit_ball(rng);
        append_new(copy);
        ++result.cloned;
    }
    for (std::size_t i : splits) {
        const Gaussian3D& parent = scene[i];
        const Mat3 axes = rotation_matrix(normalize_quaternion(parent.rotation)) *
                          parent.scale().asDiagonal();
        for (int c = 0; c < cfg.split_count; ++c) {
            Gaussian3D child = parent;
            const Vec3 n(normal(rng), normal(rng), normal(rng));
            child.position += axes * n;
            child.log_scale = parent.log_scale.array() - std::log(kSplitScaleDivisor);
            append_new(child);
        }
        ++result.split;
    }

    std::vector<Gaussian3D> kept_g;
    std::vector<Vec3> kept_s;
    std::vector<std::uint64_t> kept_ids;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        if (gaussians[i].opacity() < cfg.prune_opacity) {
            ++result.pruned;
            continue;
        }
        kept_g.push_back(gaussians[i]);
        kept_s.push_back(snapshots[i]);
        kept_ids.push_back(ids[i]);
        result.source.push_back(source[i]);
    }
    result.scene = GaussianScene(std::move(kept_g), std::move(kept_s), std::move(kept_ids),
                                 scene.scene_extent(), next_id);
    return result;
}

EvalMetrics evaluate(const GaussianScene& scene, std::span<const PseudoView> views,
                     const Vec3& background) {
    EvalMetrics m;
    if (views.empty()) return m;
    RasterSettings settings;
    settings.background = background;
    for (const auto& v : views) {
        const RenderOutput r = render(scene, v.camera, settings);
        m.psnr += psnr(r.color, v.image);
        m.ssim += ssim(r.color, v.image, LossConfig{}, false).value;
    }
    m.psnr /= static_cast<double>(views.size());
    m.ssim /= static_cast<double>(views.size());
    return m;
}

RefineResult refine(GaussianScene scene, const ImageBuffer& input_image,
                    std::span<const PseudoView> pseudo_views, std::span<const PseudoView> eval_views,
                    const RefineConfig& cfg, const StepObserver& observer) {
    cfg.validate();
    if (pseudo_views.empty()) throw Error(ErrorCode::kInvalidArgument, "no pseudo-views given");
    for (std::size_t i = 0; i < eval_views.size(); ++i) check_view_shapes(eval_views[i], i);

    const std::vector<PreparedView> views = prepare_views(input_image, pseudo_views, cfg);
    RasterSettings raster;
    raster.background = cfg.background;

    ViewSampler sampler(views.size(), cfg.seed);
    std::mt19937_64 adp_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    Adam adam(scene.size());
    std::vector<double> stat_sum(scene.size(), 0.0), grads;
    std::vector<int> stat_count(scene.size(), 0);

    RefineResult result;
    RefineReport& report = result.report;
    for (int step = 0; step < cfg.steps; ++step) {
        const auto started = std::chrono::steady_clock::now();
        const std::array<double, 5> lr = {lr_schedule(step, cfg), cfg.lr_rotation, cfg.lr_scale,
                                          cfg.lr_opacity, cfg.lr_color};
        grads.assign(scene.size() * kParams, 0.0);
        double loss_sum = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const PreparedView& view = views[sampler.next()];
            const CameraView& cam = *view.camera;
            const RenderOutput rendered = render(scene, cam, raster);
            const LossOutput loss = refine_loss(rendered.color, *view.target, view.uncertainty, cfg.loss);
            if (!std::isfinite(loss.value))
                throw Error(ErrorCode::kNumeric, "non-finite loss at step " + std::to_string(step));
            loss_sum += loss.value;
            const RenderGradients rg = render_backward(scene, cam, loss.grad_rendered, nullptr, raster);
            double packed[kParams];
            for (std::size_t i = 0; i < scene.size(); ++i) {
                pack(rg.gaussians[i], packed);
                for (int k = 0; k < kParams; ++k) grads[i * kParams + k] += packed[k];
                if (rg.visible[i]) {
                    const Vec2 ndc(rg.mean_2d[i].x() * 0.5 * cam.width, rg.mean_2d[i].y() * 0.5 * cam.height);
                    stat_sum[i] += ndc.norm();
                    ++stat_count[i];
                }
            }
        }
        const double inv_batch = 1.0 / cfg.batch_size;
        for (double& g : grads) g *= inv_batch;
        for (double g : grads)
            if (!std::isfinite(g))
                throw Error(ErrorCode::kNumeric, "non-finite gradient at step " + std::to_string(step));

        adam.step(scene, grads, lr);
        for (Gaussian3D& g : scene.gaussians())
            for (int c = 0; c < 3; ++c)
                if (g.color[c] < 0.0 || g.color[c] > 1.0) g.color[c] = std::clamp(g.color[c], 0.0, 1.0);
        clamp_scales(scene, cfg);

        const int done = step + 1;
        if (cfg.adp.enabled && done >= cfg.adp.densify_start && done <= cfg.adp.densify_end &&
            done % cfg.adp.densify_interval == 0) {
            std::vector<double> mean(scene.size(), 0.0);
            for (std::size_t i = 0; i < scene.size(); ++i)
                if (stat_count[i] > 0) mean[i] = stat_sum[i] / stat_count[i];
            AdpResult adp = adp_step(scene, mean, cfg.adp, adp_rng);
            scene = std::move(adp.scene);
            adam.remap(adp.source);
            stat_sum.assign(scene.size(), 0.0);
            stat_count.assign(scene.size(), 0);
            report.cloned += adp.cloned;
            report.split += adp.split;
            report.pruned += adp.pruned;
        }

        report.loss.push_back(loss_sum * inv_batch);
        report.gaussian_count.push_back(scene.size());
        report.step_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
        if (observer) observer(done, scene);
    }

    if (!eval_views.empty()) {
        const EvalMetrics m = evaluate(scene, eval_views, cfg.background);
        report.final_psnr = m.psnr;
        report.final_ssim = m.ssim;
    }
    result.scene = std::move(scene);
    return result;
}

} // namespace uars
