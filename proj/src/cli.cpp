// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/cli.hpp"

#include "uars/fst.hpp"
#include "uars/harness.hpp"
#include "uars/io.hpp"
#include "uars/loss.hpp"
#include "uars/raster.hpp"
#include "uars/refine.hpp"
#include "uars/uncertainty.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace uars::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

bool is_png_path(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png";
}

void write_image(const ImageBuffer& image, const fs::path& path) {
    if (is_png_path(path))
        save_png(image, path);
    else
        save_tensor(grid_cast<MapTag>(image), path);
}

Vec3 to_vec3(const std::vector<double>& v) { return Vec3(v[0], v[1], v[2]); }

// CLI11 only reads config files for the top-level app. Keys outside any
// section are filed under the subcommand that named the file.
class SubcommandToml : public CLI::ConfigTOML {
public:
    explicit SubcommandToml(std::string section) : section_(std::move(section)) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        std::vector<CLI::ConfigItem> items = CLI::ConfigTOML::from_config(input);
        for (CLI::ConfigItem& item : items)
            if (item.parents.empty()) item.parents = {section_};
        return items;
    }

private:
    std::string section_;
};

// Finds `--config PATH` or `--config=PATH` after the subcommand name.
std::optional<std::pair<std::string, std::string>> find_config(const std::vector<std::string>& args,
                                                              const CLI::App& app) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (app.get_subcommand_no_throw(args[i]) == nullptr) continue;
        for (std::size_t j = i + 1; j < args.size(); ++j) {
            if (args[j] == "--config" && j + 1 < args.size()) return std::pair{args[i], args[j + 1]};
            if (args[j].rfind("--config=", 0) == 0) return std::pair{args[i], args[j].substr(9)};
        }
        break;
    }
    return std::nullopt;
}

void write_lines(const fs::path& path, const std::vector<json>& records) {
    std::string text;
    for (const json& r : records) text += r.dump() + "\n";
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------- refine

struct RefineArgs {
    std::string config;
    std::string scene, manifest, out, report;
    RefineConfig cfg;
    bool relative_band = false;
    bool no_adp = false;
    bool no_fst = false;
    bool no_uncertainty = false;
    bool probs = false;
    bool timings = false;
    std::vector<double> background = {0.0, 0.0, 0.0};
};

void add_refine(CLI::App& app, RefineArgs& a, std::function<void()>& action) {
    CLI::App* cmd = app.add_subcommand("refine", "Refine a Gaussian scene against posed pseudo-views");
    cmd->add_option("--config", a.config, "TOML file with option values; command-line flags take precedence");
    cmd->add_option("--scene", a.scene, "Input scene (binary PLY)")->required();
    cmd->add_option("--manifest", a.manifest, "View manifest (JSON)")->required();
    cmd->add_option("--out", a.out, "Refined scene output (PLY)")->required();
    cmd->add_option("--report", a.report, "Per-step report output (JSON lines)")->required();

    RefineConfig& c = a.cfg;
    cmd->add_option("--steps", c.steps, "Optimization steps");
    cmd->add_option("--batch-size", c.batch_size, "Views per step; gradients are averaged");
    cmd->add_option("--lr-position-start", c.lr_position_start, "Initial position learning rate");
    cmd->add_option("--lr-position-end", c.lr_position_end, "Final position learning rate (exponential decay)");
    cmd->add_option("--lr-rotation", c.lr_rotation, "Rotation learning rate");
    cmd->add_option("--lr-scale", c.lr_scale, "Log-scale learning rate");
    cmd->add_option("--lr-opacity", c.lr_opacity, "Opacity-logit learning rate");
    cmd->add_option("--lr-color", c.lr_color, "Color learning rate");
    cmd->add_option("--scale-band", c.scale_band, "Allowed scale deviation from the initial scale");
    cmd->add_flag("--relative-scale-band", a.relative_band, "Interpret --scale-band as a fraction of the initial scale");
    cmd->add_flag("--no-adp", a.no_adp, "Disable densification and pruning");
    cmd->add_option("--densify-start", c.adp.densify_start, "First step eligible for densification");
    cmd->add_option("--densify-end", c.adp.densify_end, "Last step eligible for densification");
    cmd->add_option("--densify-interval", c.adp.densify_interval, "Steps between densification passes");
    cmd->add_option("--grad-threshold", c.adp.grad_threshold, "Mean screen-space gradient (NDC) that triggers densification");
    cmd->add_option("--split-scale-fraction", c.adp.split_scale_fraction, "Split above this fraction of the scene extent, clone below");
    cmd->add_option("--prune-opacity", c.adp.prune_opacity, "Remove Gaussians with opacity below this value");
    cmd->add_option("--split-count", c.adp.split_count, "Children per split");
    cmd->add_option("--alpha", c.loss.alpha, "Weight of the structural (D-SSIM) term");
    cmd->add_option("--ssim-window", c.loss.ssim_window, "SSIM Gaussian window size (odd)");
    cmd->add_option("--ssim-sigma", c.loss.ssim_sigma, "SSIM Gaussian window sigma");
    cmd->add_flag("--literal-ssim", c.loss.literal_ssim, "Use +alpha*SSIM instead of alpha*(1-SSIM)/2");
    cmd->add_option("--beta", c.fst.beta, "FST low-frequency window size as a fraction of min(H, W)");
    cmd->add_flag("--no-fst", a.no_fst, "Skip Fourier style transfer of the pseudo-views");
    cmd->add_flag("--no-uncertainty", a.no_uncertainty, "Ignore logits and treat every pixel as confident");
    cmd->add_flag("--probs", a.probs, "Logits files already hold per-class probabilities");
    cmd->add_option("--background", a.background, "Background color R G B")->expected(3);
    cmd->add_option("--seed", c.seed, "Random seed for view order and densification");
    cmd->add_flag("--timings", a.timings, "Record wall-clock seconds per step (makes reports non-reproducible)");

    cmd->callback([&a, &action] {
        action = [&a] {
            RefineConfig cfg = a.cfg;
            cfg.scale_band_mode = a.relative_band ? ScaleBandMode::kRelative : ScaleBandMode::kAbsolute;
            cfg.adp.enabled = !a.no_adp;
            cfg.use_fst = !a.no_fst;
            cfg.use_uncertainty = !a.no_uncertainty;
            cfg.background = to_vec3(a.background);
            cfg.validate();

            const GaussianScene scene = load_ply(a.scene);
            const LoadedViews views = load_views(load_manifest(a.manifest), a.probs);
            const RefineResult result = refine(scene, views.input_image, views.views, views.eval_views, cfg);

            std::vector<json> records;
            const RefineReport& r = result.report;
            for (std::size_t i = 0; i < r.loss.size(); ++i) {
                json rec = {{"type", "step"}, {"step", i}, {"loss", r.loss[i]}, {"gaussians", r.gaussian_count[i]}};
                if (a.timings) rec["seconds"] = r.step_seconds[i];
                records.push_back(std::move(rec));
            }
            json summary = {{"type", "summary"},
                            {"steps", r.loss.size()},
                            {"final_loss", r.loss.back()},
                            {"gaussians", result.scene.size()},
                            {"cloned", r.cloned},
                            {"split", r.split},
                            {"pruned", r.pruned}};
            if (r.final_psnr) summary["final_psnr"] = *r.final_psnr;
            if (r.final_ssim) summary["final_ssim"] = *r.final_ssim;
            if (a.timings) {
                double total = 0.0;
                for (double s : r.step_seconds) total += s;
                summary["seconds"] = total;
            }
            records.push_back(std::move(summary));
            save_ply(result.scene, a.out);
            write_lines(a.report, records);
        };
    });
}

// ---------------------------------------------------------------- render

struct RenderArgs {
    std::string scene, camera, out;
    std::vector<double> background = {0.0, 0.0, 0.0};
};

void add_render(CLI::App& app, RenderArgs& a, std::function<void()>& action) {
    CLI::App* cmd = app.add_subcommand("render", "Render a scene from one camera");
    cmd->add_option("--scene", a.scene, "Scene (binary PLY)")->required();
    cmd->add_option("--camera", a.camera, "Camera (JSON)")->required();
    cmd->add_option("--out", a.out, "Output image; .png writes 8-bit, anything else a float tensor")->required();
    cmd->add_option("--background", a.background, "Background color R G B")->expected(3);
    cmd->callback([&a, &action] {
        action = [&a] {
            RasterSettings settings;
            settings.background = to_vec3(a.background);
            write_image(render(load_ply(a.scene), load_camera(a.camera), settings).color, a.out);
        };
    });
}

// ---------------------------------------------------------------- entropy

struct EntropyArgs {
    std::string logits, out;
    bool probs = false;
};

void add_entropy(CLI::App& app, EntropyArgs& a, std::function<void()>& action) {
    CLI::App* cmd = app.add_subcommand("entropy", "Normalized per-pixel entropy of class logits");
    cmd->add_option("--logits", a.logits, "Logits tensor [H, W, C]")->required();
    cmd->add_option("--out", a.out, "Output; .png writes 8-bit grayscale, anything else a [H, W] tensor")->required();
    cmd->add_flag("--probs", a.probs, "Input already holds per-class probabilities");
    cmd->callback([&a, &action] {
        action = [&a] {
            const DenseMap scores = load_tensor(a.logits);
            const UncertaintyMap u = a.probs ? uncertainty_from_probs(scores) : uncertainty_from_logits(scores);
            if (is_png_path(a.out))
                save_png(grid_cast<ImageTag>(u.map), a.out);
            else
                save_tensor(u.map, a.out, 2);
        };
    });
}

// ---------------------------------------------------------------- fst

struct FstArgs {
    std::string content, style, out;
    double beta = FstConfig{}.beta;
};

void add_fst(CLI::App& app, FstArgs& a, std::function<void()>& action) {
    CLI::App* cmd = app.add_subcommand("fst", "Fourier style transfer of low-frequency amplitude");
    cmd->add_option("--content", a.content, "Image whose phase and high frequencies are kept")->required();
    cmd->add_option("--style", a.style, "Image providing the low-frequency amplitude")->required();
    cmd->add_option("--beta", a.beta, "Window size as a fraction of min(H, W)");
    cmd->add_option("--out", a.out, "Output image; .png writes 8-bit, anything else a float tensor")->required();
    cmd->callback([&a, &action] {
        action = [&a] {
            FstConfig cfg;
            cfg.beta = a.beta;
            cfg.validate();
            write_image(fst_transfer(load_image(a.content), load_image(a.style), cfg), a.out);
        };
    });
}

// ---------------------------------------------------------------- metrics

struct MetricsArgs {
    std::string a, b;
};

void add_metrics(CLI::App& app, MetricsArgs& m, std::ostream& out, std::function<void()>& action) {
    CLI::App* cmd = app.add_subcommand("metrics", "PSNR and SSIM between two images");
    cmd->add_option("--a", m.a, "First image")->required();
    cmd->add_option("--b", m.b, "Second image")->required();
    cmd->callback([&m, &out, &action] {
        action = [&m, &out] {
            const ImageBuffer a = load_image(m.a), b = load_image(m.b);
            if (!a.same_shape(b)) throw Error(ErrorCode::kDimensionMismatch, "images differ in size");
            const json rec = {{"psnr", psnr(a, b)}, {"ssim", ssim(a, b, LossConfig{}, false).value}};
            out << rec.dump() << "\n";
        };
    });
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string config;
    std::string outdir;
    SynthConfig cfg;
    double position_sigma = 0.01;
    double color_sigma = 0.05;
    bool corrupt = false;
    CorruptionSpec corruption;
    bool color_cast = false;
    std::string image_format = "png";
    std::vector<double> background = {0.0, 0.0, 0.0};
};

void add_synth(CLI::App& app, SynthArgs& a, std::function<void()>& action) {
    CLI::App* cmd = app.add_subcommand("synth", "Write a synthetic ground-truth scene, a perturbed copy and its views");
    cmd->add_option("--config", a.config, "TOML file with option values; command-line flags take precedence");
    cmd->add_option("--outdir", a.outdir, "Output directory")->required();
    SynthConfig& c = a.cfg;
    cmd->add_option("--gaussians", c.gaussian_count, "Number of Gaussians");
    cmd->add_option("--scale-min", c.scale_min, "Smallest scale (log-uniform sampling)");
    cmd->add_option("--scale-max", c.scale_max, "Largest scale");
    cmd->add_option("--opacity-min", c.opacity_min, "Smallest opacity");
    cmd->add_option("--opacity-max", c.opacity_max, "Largest opacity");
    cmd->add_option("--cameras", c.camera_count, "Cameras on the ring");
    cmd->add_option("--radius", c.camera_radius, "Ring radius");
    cmd->add_option("--elevation", c.camera_elevation, "Ring height above the scene center");
    cmd->add_option("--holdout", c.holdout_count, "Cameras held out for evaluation");
    cmd->add_option("--width", c.width, "Image width");
    cmd->add_option("--height", c.height, "Image height");
    cmd->add_option("--focal-scale", c.focal_scale, "Focal length as a multiple of the width");
    cmd->add_option("--seed", c.seed, "Random seed");
    cmd->add_option("--position-sigma", a.position_sigma, "Position jitter of the initial scene");
    cmd->add_option("--color-sigma", a.color_sigma, "Color jitter of the initial scene");
    cmd->add_flag("--corrupt", a.corrupt, "Paste noise rectangles into some training views and write logits");
    cmd->add_option("--corrupt-fraction", a.corruption.fraction_of_views, "Fraction of training views to corrupt");
    cmd->add_option("--corrupt-rectangles", a.corruption.rectangles_per_view, "Rectangles per corrupted view");
    cmd->add_option("--corrupt-area", a.corruption.rectangle_area_fraction, "Area fraction of each rectangle");
    cmd->add_flag("--color-cast", a.color_cast, "Apply a per-channel affine color cast to the training views");
    cmd->add_option("--image-format", a.image_format, "View image format")->check(CLI::IsMember({"png", "tensor"}));
    cmd->add_option("--background", a.background, "Background color R G B")->expected(3);
    cmd->callback([&a, &action] {
        action = [&a] {
            SynthConfig cfg = a.cfg;
            cfg.background = to_vec3(a.background);
            const SynthData data = synth_scene(cfg);
            // Views are rendered from the scene as it will be read back, so
            // the stored views are exact renders of the stored scene.
            const GaussianScene truth = parse_ply(encode_ply(data.scene));
            const GaussianScene init = parse_ply(encode_ply(perturb(truth, a.position_sigma, a.color_sigma, cfg.seed + 1)));

            const fs::path dir(a.outdir);
            fs::create_directories(dir / "views");
            fs::create_directories(dir / "cameras");
            save_ply(truth, dir / "scene_gt.ply");
            save_ply(init, dir / "scene_init.ply");

            RasterSettings settings;
            settings.background = cfg.background;
            const std::string ext = a.image_format == "png" ? ".png" : ".uars";
            std::mt19937_64 rng(cfg.seed + 2);
            std::vector<bool> corrupted(data.views.size(), false);
            if (a.corrupt) {
                a.corruption.validate();
                std::vector<std::size_t> order = data.train;
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
                const auto n = static_cast<std::size_t>(
                    std::lround(a.corruption.fraction_of_views * static_cast<double>(order.size())));
                for (std::size_t k = 0; k < n; ++k) corrupted[order[k]] = true;
                fs::create_directories(dir / "logits");
            }

            json views = json::array(), eval_views = json::array();
            std::string input_image;
            for (std::size_t i = 0; i < data.views.size(); ++i) {
                const CameraView& cam = data.views[i].camera;
                std::ostringstream stem;
                stem << "view_" << std::setw(2) << std::setfill('0') << i;
                const ImageBuffer clean = render(truth, cam, settings).color;
                const std::string camera_text = camera_to_json(cam);
                write_file(dir / "cameras" / (stem.str() + ".json"),
                           std::span(reinterpret_cast<const std::uint8_t*>(camera_text.data()), camera_text.size()));
                json entry = {{"camera", json::parse(camera_text)}};
                const bool held = std::find(data.holdout.begin(), data.holdout.end(), i) != data.holdout.end();
                if (held) {
                    const std::string rel = "views/" + stem.str() + ext;
                    write_image(clean, dir / rel);
                    entry["image"] = rel;
                    eval_views.push_back(std::move(entry));
                    continue;
                }
                if (input_image.empty()) {
                    input_image = "views/" + stem.str() + "_input" + ext;
                    write_image(clean, dir / input_image);
                }
                ImageBuffer image = a.color_cast ? apply_color_cast(clean, ColorCast{}) : clean;
                if (a.corrupt) {
                    DenseMap logits = corrupted[i] ? corrupt_view(image, a.corruption, rng)
                                                   : confident_logits(image.width(), image.height());
                    const std::string rel = "logits/" + stem.str() + ".uars";
                    save_tensor(logits, dir / rel);
                    entry["logits"] = rel;
                }
                const std::string rel = "views/" + stem.str() + ext;
                write_image(image, dir / rel);
                entry["image"] = rel;
                views.push_back(std::move(entry));
            }
            const json manifest = {{"input_image", input_image}, {"views", views}, {"eval_views", eval_views}};
            const std::string text = manifest.dump(2) + "\n";
            write_file(dir / "manifest.json",
                       std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
        };
    });
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Uncertainty-aware refinement of Gaussian-splat scenes", "uars");
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Print help for every command");

    std::function<void()> action;
    RefineArgs refine_args;
    RenderArgs render_args;
    EntropyArgs entropy_args;
    FstArgs fst_args;
    MetricsArgs metrics_args;
    SynthArgs synth_args;
    add_refine(app, refine_args, action);
    add_render(app, render_args, action);
    add_entropy(app, entropy_args, action);
    add_fst(app, fst_args, action);
    add_metrics(app, metrics_args, out, action);
    add_synth(app, synth_args, action);

    if (const auto config = find_config(args, app)) {
        if (!fs::is_regular_file(config->second)) {
            err << "error: [io] config file not found: " << config->second << "\n";
            return kExitValidation;
        }
        CLI::Option* opt = app.set_config("--config-file", config->second, "", false);
        opt->group("");
        app.config_formatter(std::make_shared<SubcommandToml>(config->first));
        app.allow_config_extras(CLI::config_extras_mode::error);
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::string message = e.what();
        std::replace(message.begin(), message.end(), '\n', ' ');
        err << "error: " << message << "\n";
        return kExitValidation;
    }

    try {
        if (action) action();
        return kExitOk;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.is_validation() ? kExitValidation : kExitNumeric;
    } catch (const fs::filesystem_error& e) {
        err << "error: [io] " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace uars::cli
