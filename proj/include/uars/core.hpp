// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace uars {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix<double, 4, 4, Eigen::RowMajor>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Returns q / |q|. Throws kDegenerateRotation for a zero vector.
Vec4 normalize_quaternion(const Vec4& q);

/// Rotation matrix of a unit quaternion stored as (w, x, y, z).
Mat3 rotation_matrix(const Vec4& unit_q);

/// One anisotropic primitive. Scale is stored as a log of the per-axis
/// standard deviation and opacity as a logit so every field is unconstrained.
struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0); // wxyz, not necessarily unit
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Constant(0.5); // RGB in [0,1], SH degree 0

    double opacity() const { return sigmoid(opacity_logit); }
    Vec3 scale() const { return log_scale.array().exp(); }
};

/// Sigma = R diag(s)^2 R^T, with the rotation normalized first.
Mat3 covariance_3d(const Gaussian3D& g);

/// Ordered set of Gaussians plus the per-Gaussian scale snapshot used to
/// bound scale updates during refinement.
class GaussianScene {
public:
    GaussianScene() = default;

    /// Snapshots initial scales and computes the extent from the positions.
    explicit GaussianScene(std::vector<Gaussian3D> gaussians);

    /// Explicit snapshots and lineage ids, used when densification rebuilds
    /// the set. `extent` is carried over unchanged.
    GaussianScene(std::vector<Gaussian3D> gaussians, std::vector<Vec3> initial_scale,
                  std::vector<std::uint64_t> ids, double extent, std::uint64_t next_id);

    std::size_t size() const { return gaussians_.size(); }
    bool empty() const { return gaussians_.empty(); }

    std::span<Gaussian3D> gaussians() { return gaussians_; }
    std::span<const Gaussian3D> gaussians() const { return gaussians_; }
    Gaussian3D& operator[](std::size_t i) { return gaussians_[i]; }
    const Gaussian3D& operator[](std::size_t i) const { return gaussians_[i]; }

    const Vec3& initial_scale(std::size_t i) const { return initial_scale_[i]; }
    std::span<const Vec3> initial_scales() const { return initial_scale_; }

    /// Stable identity of each Gaussian. Originals are numbered 0..N-1 at
    /// construction; Gaussians created later get fresh ids.
    std::uint64_t id(std::size_t i) const { return ids_[i]; }
    std::span<const std::uint64_t> ids() const { return ids_; }
    std::uint64_t next_id() const { return next_id_; }

    /// Radius of the bounding sphere of the positions around their centroid.
    double scene_extent() const { return extent_; }

private:
    std::vector<Gaussian3D> gaussians_;
    std::vector<Vec3> initial_scale_;
    std::vector<std::uint64_t> ids_;
    double extent_ = 0.0;
    std::uint64_t next_id_ = 0;
};

/// Pinhole camera. Convention: world-to-camera, +z forward, +x right,
/// +y down, pixel (i, j) covers [i, i+1) x [j, j+1) with its center at +0.5.
struct CameraView {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat4 world_to_camera = Mat4::Identity();
    int width = 1;
    int height = 1;

    Mat3 rotation() const { return world_to_camera.block<3, 3>(0, 0); }
    Vec3 translation() const { return world_to_camera.block<3, 1>(0, 3); }
    Vec3 center() const { return -rotation().transpose() * translation(); }

    /// Checks intrinsics, image size and that the rotation block is
    /// orthonormal within `tolerance`.
    void validate(double tolerance = 1e-6) const;

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear upwards in the image.
    static CameraView look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                              double fx, double fy, int width, int height);
};

/// Row-major H x W x C grid of doubles. Instantiated as ImageBuffer (colors,
/// nominally in [0,1]) and DenseMap (logits, probabilities, scalar maps);
/// the tags keep the two from mixing silently.
template <typename Tag>
class PixelGrid {
public:
    PixelGrid() = default;
    PixelGrid(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill) {
        if (width < 0 || height < 0 || channels < 1)
            throw Error(ErrorCode::kInvalidArgument, "invalid grid shape");
    }
    PixelGrid(int width, int height, int channels, std::vector<double> data)
        : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
        if (data_.size() != static_cast<std::size_t>(width) * height * channels)
            throw Error(ErrorCode::kDimensionMismatch, "grid data length does not match shape");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    std::size_t size() const { return data_.size(); }

    double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }
    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_shape(int width, int height, int channels) const {
        return width_ == width && height_ == height && channels_ == channels;
    }
    template <typename Other>
    bool same_shape(const PixelGrid<Other>& o) const {
        return same_shape(o.width(), o.height(), o.channels());
    }

    friend bool operator==(const PixelGrid&, const PixelGrid&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 1;
    std::vector<double> data_;
};

struct ImageTag {};
struct MapTag {};
using ImageBuffer = PixelGrid<ImageTag>;
using DenseMap = PixelGrid<MapTag>;

template <typename To, typename From>
PixelGrid<To> grid_cast(const PixelGrid<From>& g) {
    return PixelGrid<To>(g.width(), g.height(), g.channels(),
                         std::vector<double>(g.data().begin(), g.data().end()));
}

} // namespace uars
