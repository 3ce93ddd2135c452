// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uars {

/// Every failure the engine reports carries one of these codes. The CLI maps
/// them to exit codes: numeric failures exit 3, everything else is treated as
/// input validation and exits 2.
enum class ErrorCode {
    kInvalidArgument,
    kDegenerateRotation,
    kDimensionMismatch,
    kTooFewClasses,
    kProbabilitySum,
    kIo,
    kPlyNotBinary,
    kPlyBadHeader,
    kPlyMissingProperty,
    kPlyTruncated,
    kTensorBadMagic,
    kTensorBadVersion,
    kTensorBadRank,
    kTensorTruncated,
    kTensorNonFinite,
    kImageDecode,
    kImageResolution,
    kCameraIntrinsics,
    kCameraNonOrthonormal,
    kManifestSchema,
    kManifestMissingFile,
    kLogitsResolution,
    kNumeric,
};

std::string_view code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

    /// True for everything except numeric failures during optimization.
    bool is_validation() const noexcept { return code_ != ErrorCode::kNumeric; }

private:
    ErrorCode code_;
};

} // namespace uars
