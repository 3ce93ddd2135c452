// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace uars {

UncertaintyMap::UncertaintyMap(DenseMap values) : map(std::move(values)) {
    if (map.channels() != 1)
        throw Error(ErrorCode::kDimensionMismatch, "uncertainty map must have one channel");
    for (double v : map.data())
        if (!(v >= 0.0 && v <= 1.0))
            throw Error(ErrorCode::kInvalidArgument, "uncertainty values must lie in [0,1]");
}

UncertaintyMap UncertaintyMap::confident(int width, int height) {
    return UncertaintyMap(DenseMap(width, height, 1, 0.0));
}

DenseMap softmax_probs(const DenseMap& logits) {
    const int classes = logits.channels();
    if (classes < 2) throw Error(ErrorCode::kTooFewClasses, "need at least two classes");
    DenseMap probs(logits.width(), logits.height(), classes);
    auto in = logits.data();
    auto out = probs.data();
    for (std::size_t p = 0; p < logits.pixel_count(); ++p) {
        const double* l = in.data() + p * classes;
        double* o = out.data() + p * classes;
        const double peak = *std::max_element(l, l + classes);
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) {
            o[c] = std::exp(l[c] - peak);
            sum += o[c];
        }
        for (int c = 0; c < classes; ++c) o[c] /= sum;
    }
    return probs;
}

DenseMap entropy_map(const DenseMap& probs, bool normalize) {
    const int classes = probs.channels();
    if (classes < 2) throw Error(ErrorCode::kTooFewClasses, "need at least two classes");
    DenseMap out(probs.width(), probs.height(), 1);
    auto in = probs.data();

    double worst = 0.0;
    std::size_t worst_pixel = 0;
    for (std::size_t p = 0; p < probs.pixel_count(); ++p) {
        const double* pr = in.data() + p * classes;
        double sum = 0.0;
        bool negative = false;
        for (int c = 0; c < classes; ++c) {
            sum += pr[c];
            negative |= pr[c] < 0.0;
        }
        const double err = negative ? 1.0 + std::abs(sum - 1.0) : std::abs(sum - 1.0);
        if (!(err <= worst)) {
            worst = err;
            worst_pixel = p;
        }
    }
    if (!(worst <= 1e-4)) {
        std::ostringstream msg;
        msg << "class probabilities at pixel (" << worst_pixel % probs.width() << ", "
            << worst_pixel / probs.width() << ") do not form a distribution (sum error "
            << worst << ")";
        throw Error(ErrorCode::kProbabilitySum, msg.str());
    }

    const double norm = normalize ? std::log(static_cast<double>(classes)) : 1.0;
    std::vector<double> terms(classes);
    for (std::size_t p = 0; p < probs.pixel_count(); ++p) {
        const double* pr = in.data() + p * classes;
        for (int c = 0; c < classes; ++c) terms[c] = pr[c] > 0.0 ? pr[c] * std::log(pr[c]) : 0.0;
        // Summing in sorted order makes the result independent of class order.
        std::sort(terms.begin(), terms.end());
        double h = 0.0;
        for (double t : terms) h -= t;
        h /= norm;
        // Sums within 1e-4 of one can push the normalized value a hair past 1.
        out.data()[p] = normalize ? std::clamp(h, 0.0, 1.0) : std::max(h, 0.0);
    }
    return out;
}

UncertaintyMap uncertainty_from_probs(const DenseMap& probs) {
    return UncertaintyMap(entropy_map(probs, true));
}

UncertaintyMap uncertainty_from_logits(const DenseMap& logits) {
    return uncertainty_from_probs(softmax_probs(logits));
}

} // namespace uars
