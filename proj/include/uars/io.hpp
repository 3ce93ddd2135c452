// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/core.hpp"
#include "uars/refine.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uars {

/// Zeroth-order spherical harmonic basis value, 1 / (2 sqrt(pi)).
inline constexpr double kShC0 = 0.28209479177387814;

// Gaussian PLY, binary little-endian. See FORMATS.md for the byte layout.

GaussianScene parse_ply(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ply(const GaussianScene& scene);
GaussianScene load_ply(const std::filesystem::path& path);
void save_ply(const GaussianScene& scene, const std::filesystem::path& path);

// UARS tensor: "UARS", u32 version 1, u32 ndim (2 or 3), u32 dims, f32 payload.

DenseMap parse_tensor(std::span<const std::uint8_t> bytes);
/// `ndim` 2 is only valid for single-channel maps.
std::vector<std::uint8_t> encode_tensor(const DenseMap& map, int ndim = 3);
DenseMap load_tensor(const std::filesystem::path& path);
void save_tensor(const DenseMap& map, const std::filesystem::path& path, int ndim = 3);

// 8-bit PNG. Loading always yields 3 channels scaled by 1/255; saving writes
// grayscale for 1 channel and RGB for 3, rounding v * 255 after clamping.

ImageBuffer load_png(const std::filesystem::path& path);
void save_png(const ImageBuffer& image, const std::filesystem::path& path);

/// Loads a PNG or a UARS tensor of shape [H, W, 3], chosen by the file's
/// leading bytes. Tensors keep full precision.
ImageBuffer load_image(const std::filesystem::path& path);

CameraView parse_camera_json(const std::string& text);
std::string camera_to_json(const CameraView& camera);
CameraView load_camera(const std::filesystem::path& path);

struct ManifestView {
    std::filesystem::path image;
    CameraView camera;
    std::optional<std::filesystem::path> logits;
};

struct ViewManifest {
    std::filesystem::path input_image;
    std::vector<ManifestView> views;
    std::vector<ManifestView> eval_views;
};

/// Camera rotation blocks must be orthonormal within this tolerance.
inline constexpr double kManifestOrthonormalTolerance = 1e-4;

/// Parses and validates a JSON manifest. Relative paths resolve against the
/// manifest's directory and must exist. Schema errors name the field path.
ViewManifest load_manifest(const std::filesystem::path& path);

struct LoadedViews {
    ImageBuffer input_image;
    std::vector<PseudoView> views;
    std::vector<PseudoView> eval_views;
};

/// Reads every image and logits file referenced by the manifest. All view
/// images must share one resolution matching their cameras, and logits must
/// match their image's resolution.
LoadedViews load_views(const ViewManifest& manifest, bool logits_are_probs = false);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace uars
