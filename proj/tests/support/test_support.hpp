// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/core.hpp"
#include "uars/raster.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace uars::test {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Random Gaussians in front of a camera at the origin looking down +z.
inline GaussianScene random_scene(std::uint64_t seed, int count, double depth_lo = 2.0,
                                  double depth_hi = 4.0, double spread = 0.6,
                                  double scale_lo = 0.05, double scale_hi = 0.25) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Gaussian3D> gs(static_cast<std::size_t>(count));
    for (auto& g : gs) {
        const double z = depth_lo + (depth_hi - depth_lo) * u(rng);
        g.position = Vec3((2 * u(rng) - 1) * spread * z / 2, (2 * u(rng) - 1) * spread * z / 2, z);
        g.rotation = Vec4(n(rng), n(rng), n(rng), n(rng));
        for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(scale_lo + (scale_hi - scale_lo) * u(rng));
        g.opacity_logit = logit(0.2 + 0.7 * u(rng));
        for (int k = 0; k < 3; ++k) g.color[k] = u(rng);
    }
    return GaussianScene(std::move(gs));
}

inline CameraView axis_camera(int width, int height, double focal) {
    CameraView cam;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    return cam;
}

inline ImageBuffer random_image(std::uint64_t seed, int width, int height, int channels = 3) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageBuffer img(width, height, channels);
    for (double& v : img.data()) v = u(rng);
    return img;
}

/// Per-pixel compositor over every projected splat in depth order, with no
/// tiling. Mirrors the arithmetic of the renderer so results can be compared
/// bit for bit.
inline RenderOutput brute_force_render(const GaussianScene& scene, const CameraView& cam,
                                       const Vec3& background = Vec3::Zero()) {
    const auto splats = project(scene, cam);
    std::vector<std::size_t> order(splats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return splats[a].gaussian_index < splats[b].gaussian_index;
    });
    RenderOutput out{ImageBuffer(cam.width, cam.height, 3), DenseMap(cam.width, cam.height, 1), std::nullopt};
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            double t = 1.0, c0 = 0.0, c1 = 0.0, c2 = 0.0;
            for (std::size_t k : order) {
                const SplatProjection& s = splats[k];
                const double dx = px - s.mean_2d.x();
                const double dy = py - s.mean_2d.y();
                const double d2 = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                if (!(d2 < 9.0)) continue;
                const double g = (std::exp(-0.5 * d2) - std::exp(-4.5) * (1.0 + 0.5 * (9.0 - d2))) /
                                 (1.0 - std::exp(-4.5) * 5.5);
                if (g <= 0.0) continue;
                const double a = s.opacity * g;
                const double w = a * t;
                c0 += s.color[0] * w;
                c1 += s.color[1] * w;
                c2 += s.color[2] * w;
                t *= 1.0 - a;
                if (t < 1e-4) break;
            }
            out.color.at(x, y, 0) = c0 + t * background[0];
            out.color.at(x, y, 1) = c1 + t * background[1];
            out.color.at(x, y, 2) = c2 + t * background[2];
            out.alpha.at(x, y) = 1.0 - t;
        }
    }
    return out;
}

/// Naive O(N^2) 2D DFT, forward, unnormalized.
inline std::vector<std::complex<double>> naive_dft(const DenseMap& channel) {
    const int w = channel.width(), h = channel.height();
    std::vector<std::complex<double>> out(static_cast<std::size_t>(w) * h);
    for (int ky = 0; ky < h; ++ky)
        for (int kx = 0; kx < w; ++kx) {
            std::complex<double> acc = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double ang = -2.0 * M_PI * (static_cast<double>(kx) * x / w + static_cast<double>(ky) * y / h);
                    acc += channel.at(x, y) * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            out[static_cast<std::size_t>(ky) * w + kx] = acc;
        }
    return out;
}

/// Central difference of f around x for parameter *p.
inline double central_difference(double* p, double h, const std::function<double()>& f) {
    const double saved = *p;
    *p = saved + h;
    const double up = f();
    *p = saved - h;
    const double down = f();
    *p = saved;
    return (up - down) / (2.0 * h);
}

/// Pointers to the 14 scalar parameters of a Gaussian, in gradient order.
inline std::vector<double*> parameter_slots(Gaussian3D& g) {
    return {&g.position[0], &g.position[1], &g.position[2], &g.rotation[0], &g.rotation[1],
            &g.rotation[2], &g.rotation[3], &g.log_scale[0], &g.log_scale[1], &g.log_scale[2],
            &g.opacity_logit, &g.color[0], &g.color[1], &g.color[2]};
}

inline std::vector<double> gradient_values(const GaussianGradient& g) {
    return {g.position[0], g.position[1], g.position[2], g.rotation[0], g.rotation[1],
            g.rotation[2], g.rotation[3], g.log_scale[0], g.log_scale[1], g.log_scale[2],
            g.opacity_logit, g.color[0], g.color[1], g.color[2]};
}

inline const char* parameter_name(std::size_t k) {
    static const char* names[] = {"px", "py", "pz", "qw", "qx", "qy", "qz",
                                  "ls0", "ls1", "ls2", "opacity", "r", "g", "b"};
    return names[k];
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("uars_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace uars::test
