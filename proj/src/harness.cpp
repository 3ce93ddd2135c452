// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/harness.hpp"

#include "uars/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace uars {

namespace {

// Independent streams for each stage of an experiment.
enum class Stream : std::uint64_t { kPerturb = 1, kCorrupt = 2, kRefine = 3 };

std::uint64_t derive_seed(std::uint64_t seed, Stream s) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(s) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

void SynthConfig::validate() const {
    if (gaussian_count < 0) throw Error(ErrorCode::kInvalidArgument, "gaussian_count must be >= 0");
    if (!(box_half_extent > 0.0)) throw Error(ErrorCode::kInvalidArgument, "box_half_extent must be positive");
    if (!(scale_min > 0.0 && scale_min <= scale_max))
        throw Error(ErrorCode::kInvalidArgument, "need 0 < scale_min <= scale_max");
    if (!(opacity_min > 0.0 && opacity_min <= opacity_max && opacity_max < 1.0))
        throw Error(ErrorCode::kInvalidArgument, "need 0 < opacity_min <= opacity_max < 1");
    if (camera_count < 1) throw Error(ErrorCode::kInvalidArgument, "camera_count must be >= 1");
    if (holdout_count < 0 || holdout_count >= camera_count)
        throw Error(ErrorCode::kInvalidArgument, "holdout_count must be in [0, camera_count)");
    if (!(camera_radius > box_half_extent * std::sqrt(3.0)))
        throw Error(ErrorCode::kInvalidArgument, "cameras must lie outside the cube");
    if (width < 1 || height < 1 || !(focal_scale > 0.0))
        throw Error(ErrorCode::kInvalidArgument, "invalid image size or focal scale");
}

SynthData synth_scene(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<Gaussian3D> gaussians(static_cast<std::size_t>(cfg.gaussian_count));
    const double log_lo = std::log(cfg.scale_min), log_hi = std::log(cfg.scale_max);
    for (Gaussian3D& g : gaussians) {
        for (int k = 0; k < 3; ++k) g.position[k] = (2.0 * unit(rng) - 1.0) * cfg.box_half_extent;
        Vec4 q;
        do {
            q = Vec4(normal(rng), normal(rng), normal(rng), normal(rng));
        } while (q.norm() < 1e-6);
        g.rotation = q.normalized();
        for (int k = 0; k < 3; ++k) g.log_scale[k] = log_lo + (log_hi - log_lo) * unit(rng);
        g.opacity_logit = logit(cfg.opacity_min + (cfg.opacity_max - cfg.opacity_min) * unit(rng));
        for (int k = 0; k < 3; ++k) g.color[k] = unit(rng);
    }

    SynthData data{GaussianScene(std::move(gaussians)), {}, {}, {}};
    RasterSettings settings;
    settings.background = cfg.background;
    const double focal = cfg.focal_scale * cfg.width;
    for (int i = 0; i < cfg.camera_count; ++i) {
        const double theta = 2.0 * std::numbers::pi * i / cfg.camera_count;
        const Vec3 eye(cfg.camera_radius * std::cos(theta), cfg.camera_radius * std::sin(theta),
                       cfg.camera_elevation);
        const CameraView cam =
            CameraView::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), focal, focal, cfg.width, cfg.height);
        data.views.push_back({cam, render(data.scene, cam, settings).color});
    }

    std::vector<bool> held(cfg.camera_count, false);
    for (int k = 0; k < cfg.holdout_count; ++k)
        held[(1 + static_cast<long>(k) * cfg.camera_count / cfg.holdout_count) % cfg.camera_count] = true;
    for (int i = 0; i < cfg.camera_count; ++i) (held[i] ? data.holdout : data.train).push_back(i);
    return data;
}

GaussianScene perturb(const GaussianScene& scene, double position_sigma, double color_sigma,
                      std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Gaussian3D> out(scene.gaussians().begin(), scene.gaussians().end());
    for (Gaussian3D& g : out) {
        for (int k = 0; k < 3; ++k) g.position[k] += position_sigma * normal(rng);
        for (int k = 0; k < 3; ++k) g.color[k] = std::clamp(g.color[k] + color_sigma * normal(rng), 0.0, 1.0);
    }
    return GaussianScene(std::move(out));
}

void CorruptionSpec::validate() const {
    if (!(fraction_of_views >= 0.0 && fraction_of_views <= 1.0))
        throw Error(ErrorCode::kInvalidArgument, "fraction_of_views must be in [0,1]");
    if (rectangles_per_view < 0) throw Error(ErrorCode::kInvalidArgument, "rectangles_per_view must be >= 0");
    if (!(rectangle_area_fraction > 0.0 && rectangle_area_fraction < 1.0))
        throw Error(ErrorCode::kInvalidArgument, "rectangle_area_fraction must be in (0,1)");
}

DenseMap confident_logits(int width, int height) {
    DenseMap logits(width, height, 2, 0.0);
    for (std::size_t p = 0; p < logits.pixel_count(); ++p) logits.data()[2 * p] = 1000.0;
    return logits;
}

DenseMap corrupt_view(ImageBuffer& image, const CorruptionSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    const int w = image.width(), h = image.height();
    const double side = std::sqrt(spec.rectangle_area_fraction);
    const int rw = std::max(1, static_cast<int>(std::lround(side * w)));
    const int rh = std::max(1, static_cast<int>(std::lround(side * h)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    DenseMap logits = confident_logits(w, h);
    for (int r = 0; r < spec.rectangles_per_view; ++r) {
        const int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(w - rw + 1));
        const int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(h - rh + 1));
        for (int y = y0; y < y0 + rh; ++y)
            for (int x = x0; x < x0 + rw; ++x) {
                for (int c = 0; c < image.channels(); ++c) image.at(x, y, c) = unit(rng);
                logits.at(x, y, 0) = 0.0;
                logits.at(x, y, 1) = 0.0;
            }
    }
    return logits;
}

ImageBuffer apply_color_cast(const ImageBuffer& image, const ColorCast& cast) {
    if (image.channels() != 3) throw Error(ErrorCode::kDimensionMismatch, "color cast needs 3 channels");
    ImageBuffer out = image;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const int c = static_cast<int>(i % 3);
        d[i] = std::clamp(cast.gain[c] * d[i] + cast.offset[c], 0.0, 1.0);
    }
    return out;
}

RefineConfig ExperimentConfig::default_refine() {
    RefineConfig cfg;
    cfg.use_fst = false;
    return cfg;
}

ExperimentReport run_recovery_experiment(const ExperimentConfig& cfg,
                                         const std::optional<CorruptionSpec>& corruption,
                                         bool use_uncertainty) {
    SynthConfig synth_cfg = cfg.synth;
    synth_cfg.seed = cfg.seed;
    const SynthData data = synth_scene(synth_cfg);
    const GaussianScene start =
        perturb(data.scene, cfg.position_sigma, cfg.color_sigma, derive_seed(cfg.seed, Stream::kPerturb));

    std::vector<PseudoView> train, holdout;
    for (std::size_t i : data.holdout) holdout.push_back({data.views[i].image, data.views[i].camera, {}, false});
    for (std::size_t i : data.train) {
        PseudoView v{data.views[i].image, data.views[i].camera, {}, false};
        if (cfg.color_cast) v.image = apply_color_cast(v.image, *cfg.color_cast);
        train.push_back(std::move(v));
    }

    if (corruption) {
        corruption->validate();
        std::mt19937_64 rng(derive_seed(cfg.seed ^ corruption->seed, Stream::kCorrupt));
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        const auto corrupted =
            static_cast<std::size_t>(std::lround(corruption->fraction_of_views * static_cast<double>(train.size())));
        for (std::size_t k = 0; k < train.size(); ++k) {
            PseudoView& v = train[order[k]];
            if (k < corrupted) {
                DenseMap logits = corrupt_view(v.image, *corruption, rng);
                if (corruption->mark_uncertain) v.logits = std::move(logits);
            } else if (corruption->mark_uncertain) {
                v.logits = confident_logits(v.image.width(), v.image.height());
            }
        }
    }

    RefineConfig rcfg = cfg.refine;
    rcfg.use_uncertainty = use_uncertainty;
    rcfg.background = synth_cfg.background;
    rcfg.seed = derive_seed(cfg.seed, Stream::kRefine);

    // The input image is the clean first training view: the photo the
    // coarse scene was reconstructed from.
    const ImageBuffer& input = data.views[data.train.front()].image;

    ExperimentReport report;
    report.init_psnr = evaluate(start, holdout, synth_cfg.background).psnr;
    RefineResult result = refine(start, input, train, holdout, rcfg, cfg.observer);
    report.final_psnr = result.report.final_psnr.value_or(report.init_psnr);
    report.delta = report.final_psnr - report.init_psnr;
    report.refine = std::move(result.report);
    return report;
}

} // namespace uars
