// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "uars/core.hpp"

namespace uars {

/// Per-pixel uncertainty in [0,1]; 0 is fully confident.
struct UncertaintyMap {
    DenseMap map;

    UncertaintyMap() = default;
    /// Validates that every value lies in [0,1].
    explicit UncertaintyMap(DenseMap values);

    /// U == 0 everywhere.
    static UncertaintyMap confident(int width, int height);

    int width() const { return map.width(); }
    int height() const { return map.height(); }
    double at(int x, int y) const { return map.at(x, y); }
};

/// Max-subtracted softmax over the channel axis. Needs at least two classes.
DenseMap softmax_probs(const DenseMap& logits);

/// Shannon entropy (natural log, 0 log 0 = 0) of per-pixel class
/// distributions. With `normalize` the entropy is divided by ln C. The
/// result is a plain map so raw entropies above 1 can be inspected; use
/// uncertainty_from_probs for the validated form.
DenseMap entropy_map(const DenseMap& probs, bool normalize = true);

UncertaintyMap uncertainty_from_probs(const DenseMap& probs);
UncertaintyMap uncertainty_from_logits(const DenseMap& logits);

} // namespace uars
