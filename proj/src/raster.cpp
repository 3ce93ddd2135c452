// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/raster.hpp"

#include "uars/parallel.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace uars {

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;

// Intermediate values of the projection of one Gaussian, kept so the
// backward pass can reuse them.
struct ProjectionTerms {
    Vec3 p_cam;
    Mat3 cam_rotation;
    Vec4 unit_q;
    double q_norm;
    Mat3 rq;
    Vec3 scale;
    Mat3 sigma_cam;
    Mat23 jacobian;
    double a, b, c; // cov_2d entries
};

bool compute_terms(const Gaussian3D& g, const CameraView& cam, ProjectionTerms& t) {
    t.cam_rotation = cam.rotation();
    t.p_cam = t.cam_rotation * g.position + cam.translation();
    const double z = t.p_cam.z();
    if (!(z >= kNearPlane)) return false;
    const double x = t.p_cam.x(), y = t.p_cam.y();

    t.q_norm = g.rotation.norm();
    if (!(t.q_norm > 0.0)) throw Error(ErrorCode::kDegenerateRotation, "degenerate rotation");
    t.unit_q = g.rotation / t.q_norm;
    t.rq = rotation_matrix(t.unit_q);
    t.scale = g.scale();
    const Mat3 m = t.rq * t.scale.asDiagonal();
    const Mat3 sigma = m * m.transpose();
    t.sigma_cam = t.cam_rotation * sigma * t.cam_rotation.transpose();

    t.jacobian << cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z);
    const Mat2 cov = t.jacobian * t.sigma_cam * t.jacobian.transpose();
    t.a = cov(0, 0) + kLowPassDilation;
    t.b = cov(0, 1);
    t.c = cov(1, 1) + kLowPassDilation;
    return true;
}

std::optional<SplatProjection> project_one(const GaussianScene& scene, std::size_t index,
                                           const CameraView& cam) {
    const Gaussian3D& g = scene[index];
    ProjectionTerms t;
    if (!compute_terms(g, cam, t)) return std::nullopt;
    const double det = t.a * t.c - t.b * t.b;
    if (!(det > 0.0)) return std::nullopt;

    SplatProjection s;
    s.mean_2d = Vec2(cam.fx * t.p_cam.x() / t.p_cam.z() + cam.cx,
                     cam.fy * t.p_cam.y() / t.p_cam.z() + cam.cy);
    s.cov_2d << t.a, t.b, t.b, t.c;
    s.conic = Vec3(t.c / det, -t.b / det, t.a / det);
    s.depth = t.p_cam.z();
    const double mid = 0.5 * (t.a + t.c);
    const double half_diff = 0.5 * (t.a - t.c);
    const double lambda_max = mid + std::sqrt(half_diff * half_diff + t.b * t.b);
    s.radius = std::max(1, static_cast<int>(std::ceil(kSigmaCutoff * std::sqrt(lambda_max))));
    s.gaussian_index = index;
    s.opacity = g.opacity();
    s.color = g.color;
    if (!s.mean_2d.allFinite()) return std::nullopt;

    const PixelRect r = splat_pixel_rect(s, cam.width, cam.height);
    if (r.x0 > r.x1 || r.y0 > r.y1) return std::nullopt;
    return s;
}

// Sorted splats binned into tiles: bins[offsets[t] .. offsets[t+1]) holds
// positions into `order` for tile t, front to back.
struct TileBins {
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::size_t> offsets;
    std::vector<std::uint32_t> entries;
};

TileBins bin_splats(const std::vector<SplatProjection>& splats,
                    const std::vector<std::size_t>& order, int width, int height) {
    TileBins bins;
    bins.tiles_x = (width + kTileSize - 1) / kTileSize;
    bins.tiles_y = (height + kTileSize - 1) / kTileSize;
    const std::size_t tile_count = static_cast<std::size_t>(bins.tiles_x) * bins.tiles_y;
    std::vector<std::size_t> counts(tile_count + 1, 0);

    auto for_each_tile = [&](const SplatProjection& s, auto&& fn) {
        const PixelRect r = splat_pixel_rect(s, width, height);
        for (int ty = r.y0 / kTileSize; ty <= r.y1 / kTileSize; ++ty)
            for (int tx = r.x0 / kTileSize; tx <= r.x1 / kTileSize; ++tx)
                fn(static_cast<std::size_t>(ty) * bins.tiles_x + tx);
    };

    for (std::size_t k = 0; k < order.size(); ++k)
        for_each_tile(splats[order[k]], [&](std::size_t tile) { ++counts[tile + 1]; });
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    bins.offsets = counts;
    bins.entries.resize(bins.offsets.back());
    std::vector<std::size_t> cursor(bins.offsets.begin(), bins.offsets.end() - 1);
    for (std::size_t k = 0; k < order.size(); ++k)
        for_each_tile(splats[order[k]], [&](std::size_t tile) {
            bins.entries[cursor[tile]++] = static_cast<std::uint32_t>(order[k]);
        });
    return bins;
}

struct Contribution {
    std::uint32_t entry; // position within the tile's entry list
    double falloff;
    double alpha;
    double transmittance; // before this splat
    double dx, dy, d2;
};

// Front-to-back compositing of one pixel. Appends each contributing splat to
// `trace` when it is non-null. Returns the final transmittance.
double composite_pixel(const std::vector<SplatProjection>& splats,
                       std::span<const std::uint32_t> list, double px, double py, Vec3& color,
                       double* depth, std::vector<Contribution>* trace) {
    double transmittance = 1.0;
    double c0 = 0.0, c1 = 0.0, c2 = 0.0, d = 0.0;
    for (std::size_t j = 0; j < list.size(); ++j) {
        const SplatProjection& s = splats[list[j]];
        const double dx = px - s.mean_2d.x();
        const double dy = py - s.mean_2d.y();
        const double d2 = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        const double g = splat_falloff(d2);
        if (g <= 0.0) continue;
        const double a = s.opacity * g;
        const double w = a * transmittance;
        c0 += s.color[0] * w;
        c1 += s.color[1] * w;
        c2 += s.color[2] * w;
        d += s.depth * w;
        if (trace) trace->push_back({static_cast<std::uint32_t>(j), g, a, transmittance, dx, dy, d2});
        transmittance *= 1.0 - a;
        if (transmittance < kTransmittanceStop) break;
    }
    color = Vec3(c0, c1, c2);
    if (depth) *depth = d;
    return transmittance;
}

// Per-(tile, entry) gradient record with respect to the 2D splat parameters.
struct SplatGrad2D {
    double mean[2] = {0.0, 0.0};
    double conic[3] = {0.0, 0.0, 0.0};
    double opacity = 0.0;
    double color[3] = {0.0, 0.0, 0.0};

    void add(const SplatGrad2D& o) {
        mean[0] += o.mean[0];
        mean[1] += o.mean[1];
        for (int i = 0; i < 3; ++i) {
            conic[i] += o.conic[i];
            color[i] += o.color[i];
        }
        opacity += o.opacity;
    }
};

// Derivatives of a unit quaternion's rotation matrix with respect to w, x, y, z.
std::array<Mat3, 4> rotation_jacobian(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    std::array<Mat3, 4> d;
    d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    return d;
}

GaussianGradient backward_one(const Gaussian3D& g, const CameraView& cam, const SplatGrad2D& g2d) {
    ProjectionTerms t;
    GaussianGradient out;
    if (!compute_terms(g, cam, t)) return out;

    // conic = inverse([[a, b], [b, c]]) as (c, -b, a) / det
    const double det = t.a * t.c - t.b * t.b;
    const double det2 = det * det;
    const double gxx = g2d.conic[0], gxy = g2d.conic[1], gyy = g2d.conic[2];
    const double da = gxx * (-t.c * t.c / det2) + gxy * (t.b * t.c / det2) + gyy * (-t.b * t.b / det2);
    const double db = gxx * (2.0 * t.b * t.c / det2) + gxy * (-(t.a * t.c + t.b * t.b) / det2) +
                      gyy * (2.0 * t.a * t.b / det2);
    const double dc = gxx * (-t.b * t.b / det2) + gxy * (t.a * t.b / det2) + gyy * (-t.a * t.a / det2);

    Mat2 g_cov;
    g_cov << da, 0.5 * db, 0.5 * db, dc;
    const Mat3 g_sigma_cam = t.jacobian.transpose() * g_cov * t.jacobian;
    const Mat23 g_jac = 2.0 * g_cov * t.jacobian * t.sigma_cam;

    const double x = t.p_cam.x(), y = t.p_cam.y(), z = t.p_cam.z();
    const double z2 = z * z, z3 = z2 * z;
    Vec3 g_pcam;
    g_pcam.x() = g2d.mean[0] * cam.fx / z + g_jac(0, 2) * (-cam.fx / z2);
    g_pcam.y() = g2d.mean[1] * cam.fy / z + g_jac(1, 2) * (-cam.fy / z2);
    g_pcam.z() = g2d.mean[0] * (-cam.fx * x / z2) + g2d.mean[1] * (-cam.fy * y / z2) +
                 g_jac(0, 0) * (-cam.fx / z2) + g_jac(0, 2) * (2.0 * cam.fx * x / z3) +
                 g_jac(1, 1) * (-cam.fy / z2) + g_jac(1, 2) * (2.0 * cam.fy * y / z3);
    out.position = t.cam_rotation.transpose() * g_pcam;

    const Mat3 g_sigma = t.cam_rotation.transpose() * g_sigma_cam * t.cam_rotation;
    const Mat3 m = t.rq * t.scale.asDiagonal();
    const Mat3 g_m = 2.0 * g_sigma * m;
    Mat3 g_rq;
    for (int j = 0; j < 3; ++j) {
        g_rq.col(j) = g_m.col(j) * t.scale[j];
        out.log_scale[j] = g_m.col(j).dot(t.rq.col(j)) * t.scale[j];
    }
    const auto dr = rotation_jacobian(t.unit_q);
    Vec4 g_unit;
    for (int k = 0; k < 4; ++k) g_unit[k] = (g_rq.array() * dr[k].array()).sum();
    out.rotation = (g_unit - t.unit_q * t.unit_q.dot(g_unit)) / t.q_norm;

    const double op = g.opacity();
    out.opacity_logit = g2d.opacity * op * (1.0 - op);
    out.color = Vec3(g2d.color[0], g2d.color[1], g2d.color[2]);
    return out;
}

} // namespace

PixelRect splat_pixel_rect(const SplatProjection& s, int width, int height) {
    const double r = static_cast<double>(s.radius);
    PixelRect rect;
    rect.x0 = static_cast<int>(std::max(0.0, std::floor(s.mean_2d.x() - r)));
    rect.y0 = static_cast<int>(std::max(0.0, std::floor(s.mean_2d.y() - r)));
    rect.x1 = static_cast<int>(std::min<double>(width - 1, std::ceil(s.mean_2d.x() + r)));
    rect.y1 = static_cast<int>(std::min<double>(height - 1, std::ceil(s.mean_2d.y() + r)));
    return rect;
}

std::vector<SplatProjection> project(const GaussianScene& scene, const CameraView& cam) {
    std::vector<std::optional<SplatProjection>> slots(scene.size());
    parallel_for(scene.size(), [&](std::size_t i) { slots[i] = project_one(scene, i, cam); });
    std::vector<SplatProjection> out;
    out.reserve(scene.size());
    for (auto& s : slots)
        if (s) out.push_back(*s);
    return out;
}

std::vector<std::size_t> depth_order(const std::vector<SplatProjection>& splats) {
    std::vector<std::size_t> order(splats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
        if (splats[l].depth != splats[r].depth) return splats[l].depth < splats[r].depth;
        return splats[l].gaussian_index < splats[r].gaussian_index;
    });
    return order;
}

RenderOutput render(const GaussianScene& scene, const CameraView& cam,
                    const RasterSettings& settings) {
    RenderOutput out{ImageBuffer(cam.width, cam.height, 3), DenseMap(cam.width, cam.height, 1),
                     std::nullopt};
    if (settings.compute_depth) out.depth = DenseMap(cam.width, cam.height, 1);

    const auto splats = project(scene, cam);
    const auto order = depth_order(splats);
    const TileBins bins = bin_splats(splats, order, cam.width, cam.height);

    parallel_for(bins.offsets.size() - 1, [&](std::size_t tile) {
        const int tx = static_cast<int>(tile % bins.tiles_x);
        const int ty = static_cast<int>(tile / bins.tiles_x);
        std::span<const std::uint32_t> list(bins.entries.data() + bins.offsets[tile],
                                            bins.offsets[tile + 1] - bins.offsets[tile]);
        const int x_end = std::min(cam.width, (tx + 1) * kTileSize);
        const int y_end = std::min(cam.height, (ty + 1) * kTileSize);
        for (int y = ty * kTileSize; y < y_end; ++y) {
            for (int x = tx * kTileSize; x < x_end; ++x) {
                Vec3 color;
                double depth = 0.0;
                const double t = composite_pixel(splats, list, x + 0.5, y + 0.5, color,
                                                 out.depth ? &depth : nullptr, nullptr);
                for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = color[c] + t * settings.background[c];
                out.alpha.at(x, y) = 1.0 - t;
                if (out.depth) out.depth->at(x, y) = depth;
            }
        }
    });
    return out;
}

RenderGradients render_backward(const GaussianScene& scene, const CameraView& cam,
                                const ImageBuffer& grad_color, const DenseMap* grad_alpha,
                                const RasterSettings& settings) {
    if (!grad_color.same_shape(cam.width, cam.height, 3))
        throw Error(ErrorCode::kDimensionMismatch, "grad_color does not match the camera resolution");
    if (grad_alpha && !grad_alpha->same_shape(cam.width, cam.height, 1))
        throw Error(ErrorCode::kDimensionMismatch, "grad_alpha does not match the camera resolution");

    RenderGradients out;
    out.gaussians.assign(scene.size(), GaussianGradient{});
    out.mean_2d.assign(scene.size(), Vec2::Zero());
    out.mean_2d_norm.assign(scene.size(), 0.0);
    out.visible.assign(scene.size(), 0);

    const auto splats = project(scene, cam);
    const auto order = depth_order(splats);
    const TileBins bins = bin_splats(splats, order, cam.width, cam.height);
    std::vector<SplatGrad2D> records(bins.entries.size());

    parallel_for(bins.offsets.size() - 1, [&](std::size_t tile) {
        const int tx = static_cast<int>(tile % bins.tiles_x);
        const int ty = static_cast<int>(tile / bins.tiles_x);
        const std::size_t offset = bins.offsets[tile];
        std::span<const std::uint32_t> list(bins.entries.data() + offset,
                                            bins.offsets[tile + 1] - offset);
        if (list.empty()) return;
        const int x_end = std::min(cam.width, (tx + 1) * kTileSize);
        const int y_end = std::min(cam.height, (ty + 1) * kTileSize);
        std::vector<Contribution> trace;
        for (int y = ty * kTileSize; y < y_end; ++y) {
            for (int x = tx * kTileSize; x < x_end; ++x) {
                const Vec3 g_color(grad_color.at(x, y, 0), grad_color.at(x, y, 1),
                                   grad_color.at(x, y, 2));
                const double g_alpha = grad_alpha ? grad_alpha->at(x, y) : 0.0;
                if (g_color.isZero(0.0) && g_alpha == 0.0) continue;

                trace.clear();
                Vec3 color;
                composite_pixel(splats, list, x + 0.5, y + 0.5, color, nullptr, &trace);

                // Walking back to front: `behind` is the normalized color seen
                // just behind the current splat, `through` the product of
                // (1 - a) over the splats behind it.
                Vec3 behind = settings.background;
                double through = 1.0;
                for (auto it = trace.rbegin(); it != trace.rend(); ++it) {
                    const SplatProjection& s = splats[list[it->entry]];
                    SplatGrad2D& rec = records[offset + it->entry];
                    const double w = it->alpha * it->transmittance;
                    for (int c = 0; c < 3; ++c) rec.color[c] += g_color[c] * w;

                    const double g_a = it->transmittance * g_color.dot(s.color - behind) +
                                       g_alpha * it->transmittance * through;
                    behind = s.color * it->alpha + (1.0 - it->alpha) * behind;
                    through *= 1.0 - it->alpha;

                    rec.opacity += g_a * it->falloff;
                    const double g_d2 = g_a * s.opacity * splat_falloff_derivative(it->d2);
                    rec.mean[0] += g_d2 * -2.0 * (s.conic[0] * it->dx + s.conic[1] * it->dy);
                    rec.mean[1] += g_d2 * -2.0 * (s.conic[1] * it->dx + s.conic[2] * it->dy);
                    rec.conic[0] += g_d2 * it->dx * it->dx;
                    rec.conic[1] += g_d2 * 2.0 * it->dx * it->dy;
                    rec.conic[2] += g_d2 * it->dy * it->dy;
                }
            }
        }
    });

    // Fixed-order reduction over tiles keeps the sums independent of threading.
    std::vector<SplatGrad2D> per_splat(splats.size());
    for (std::size_t e = 0; e < bins.entries.size(); ++e) per_splat[bins.entries[e]].add(records[e]);

    parallel_for(splats.size(), [&](std::size_t k) {
        const std::size_t gi = splats[k].gaussian_index;
        out.gaussians[gi] = backward_one(scene[gi], cam, per_splat[k]);
        out.mean_2d[gi] = Vec2(per_splat[k].mean[0], per_splat[k].mean[1]);
        out.mean_2d_norm[gi] = out.mean_2d[gi].norm();
        out.visible[gi] = 1;
    });
    return out;
}

} // namespace uars
