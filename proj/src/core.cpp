// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/core.hpp"

#include <algorithm>
#include <string>

namespace uars {

std::string_view code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDegenerateRotation: return "degenerate_rotation";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kTooFewClasses: return "too_few_classes";
    case ErrorCode::kProbabilitySum: return "probability_sum";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kPlyNotBinary: return "ply.not_binary";
    case ErrorCode::kPlyBadHeader: return "ply.bad_header";
    case ErrorCode::kPlyMissingProperty: return "ply.missing_property";
    case ErrorCode::kPlyTruncated: return "ply.truncated";
    case ErrorCode::kTensorBadMagic: return "tensor.bad_magic";
    case ErrorCode::kTensorBadVersion: return "tensor.bad_version";
    case ErrorCode::kTensorBadRank: return "tensor.bad_rank";
    case ErrorCode::kTensorTruncated: return "tensor.truncated";
    case ErrorCode::kTensorNonFinite: return "tensor.non_finite";
    case ErrorCode::kImageDecode: return "image.decode";
    case ErrorCode::kImageResolution: return "image.resolution";
    case ErrorCode::kCameraIntrinsics: return "camera.intrinsics";
    case ErrorCode::kCameraNonOrthonormal: return "camera.non_orthonormal";
    case ErrorCode::kManifestSchema: return "manifest.schema";
    case ErrorCode::kManifestMissingFile: return "manifest.missing_file";
    case ErrorCode::kLogitsResolution: return "logits.resolution";
    case ErrorCode::kNumeric: return "numeric";
    }
    return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error("[" + std::string(code_name(code)) + "] " + message), code_(code) {}

Vec4 normalize_quaternion(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n))
        throw Error(ErrorCode::kDegenerateRotation, "degenerate rotation");
    return q / n;
}

Mat3 rotation_matrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Mat3 covariance_3d(const Gaussian3D& g) {
    const Mat3 r = rotation_matrix(normalize_quaternion(g.rotation));
    const Mat3 m = r * g.scale().asDiagonal();
    return m * m.transpose();
}

namespace {

double bounding_radius(std::span<const Gaussian3D> gaussians) {
    if (gaussians.empty()) return 0.0;
    Vec3 centroid = Vec3::Zero();
    for (const auto& g : gaussians) centroid += g.position;
    centroid /= static_cast<double>(gaussians.size());
    double radius = 0.0;
    for (const auto& g : gaussians) radius = std::max(radius, (g.position - centroid).norm());
    // A single point (or coincident points) still needs a positive extent.
    return std::max(radius, 1e-6);
}

} // namespace

GaussianScene::GaussianScene(std::vector<Gaussian3D> gaussians)
    : gaussians_(std::move(gaussians)) {
    initial_scale_.reserve(gaussians_.size());
    ids_.reserve(gaussians_.size());
    for (const auto& g : gaussians_) {
        initial_scale_.push_back(g.scale());
        ids_.push_back(next_id_++);
    }
    extent_ = bounding_radius(gaussians_);
}

GaussianScene::GaussianScene(std::vector<Gaussian3D> gaussians, std::vector<Vec3> initial_scale,
                             std::vector<std::uint64_t> ids, double extent, std::uint64_t next_id)
    : gaussians_(std::move(gaussians)), initial_scale_(std::move(initial_scale)),
      ids_(std::move(ids)), extent_(extent), next_id_(next_id) {
    if (initial_scale_.size() != gaussians_.size() || ids_.size() != gaussians_.size())
        throw Error(ErrorCode::kDimensionMismatch, "scene snapshot arrays do not match gaussian count");
}

void CameraView::validate(double tolerance) const {
    if (!(fx > 0.0) || !(fy > 0.0))
        throw Error(ErrorCode::kCameraIntrinsics, "focal lengths must be positive");
    if (width < 1 || height < 1)
        throw Error(ErrorCode::kCameraIntrinsics, "image size must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
        throw Error(ErrorCode::kCameraIntrinsics, "principal point outside the image");
    if (!world_to_camera.allFinite())
        throw Error(ErrorCode::kCameraNonOrthonormal, "world_to_camera has non-finite entries");
    const Mat3 r = rotation();
    const double err = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (err > tolerance)
        throw Error(ErrorCode::kCameraNonOrthonormal,
                    "rotation block of world_to_camera is not orthonormal (max error " +
                        std::to_string(err) + ")");
    const Eigen::RowVector4d bottom = world_to_camera.row(3);
    if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tolerance)
        throw Error(ErrorCode::kCameraNonOrthonormal, "world_to_camera bottom row must be 0 0 0 1");
}

CameraView CameraView::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx,
                               double fy, int width, int height) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 down = -(up - up.dot(forward) * forward).normalized();
    const Vec3 right = down.cross(forward);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    CameraView cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.block<3, 3>(0, 0) = r;
    cam.world_to_camera.block<3, 1>(0, 3) = -r * eye;
    return cam;
}

} // namespace uars
