// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/uncertainty.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace uars {
namespace {

DenseMap pixel(std::vector<double> values) {
    const int c = static_cast<int>(values.size());
    return DenseMap(1, 1, c, std::move(values));
}

TEST(Softmax, Examples) {
    const DenseMap half = softmax_probs(pixel({0, 0}));
    EXPECT_EQ(half.at(0, 0, 0), 0.5);
    EXPECT_EQ(half.at(0, 0, 1), 0.5);

    const DenseMap saturated = softmax_probs(pixel({1000, 0}));
    EXPECT_NEAR(saturated.at(0, 0, 0), 1.0, 1e-9);
    EXPECT_NEAR(saturated.at(0, 0, 1), 0.0, 1e-9);
    EXPECT_TRUE(std::isfinite(saturated.at(0, 0, 1)));

    // exp(k) / (e + e^2 + e^3) evaluated directly.
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    const DenseMap three = softmax_probs(pixel({1, 2, 3}));
    EXPECT_NEAR(three.at(0, 0, 0), 0.09003, 1e-4);
    EXPECT_NEAR(three.at(0, 0, 1), 0.24473, 1e-4);
    EXPECT_NEAR(three.at(0, 0, 2), 0.66524, 1e-4);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(three.at(0, 0, k), std::exp(k + 1.0) / z, 1e-15);
}

TEST(Softmax, NeedsTwoClasses) {
    try {
        softmax_probs(pixel({1.0}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kTooFewClasses);
        EXPECT_NE(std::string(e.what()).find("need at least two classes"), std::string::npos);
    }
}

TEST(Softmax, PropertySumsToOne) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 30.0);
    DenseMap logits(17, 9, 6);
    for (double& v : logits.data()) v = n(rng);
    const DenseMap p = softmax_probs(logits);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 17; ++x) {
            double s = 0;
            for (int c = 0; c < 6; ++c) {
                EXPECT_GE(p.at(x, y, c), 0.0);
                s += p.at(x, y, c);
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
}

TEST(Entropy, OneHotUniformAndBinary) {
    EXPECT_EQ(entropy_map(pixel({1, 0, 0, 0})).at(0, 0), 0.0);
    for (int c : {2, 5, 21}) {
        const DenseMap u = entropy_map(pixel(std::vector<double>(c, 1.0 / c)));
        EXPECT_NEAR(u.at(0, 0), 1.0, 1e-12) << c;
        const DenseMap raw = entropy_map(pixel(std::vector<double>(c, 1.0 / c)), false);
        EXPECT_NEAR(raw.at(0, 0), std::log(static_cast<double>(c)), 1e-12);
    }
    const double raw_oracle = -0.9 * std::log(0.9) - 0.1 * std::log(0.1);
    EXPECT_NEAR(raw_oracle, 0.3251, 1e-4);
    EXPECT_NEAR(entropy_map(pixel({0.9, 0.1}), false).at(0, 0), raw_oracle, 1e-12);
    EXPECT_NEAR(entropy_map(pixel({0.9, 0.1})).at(0, 0), 0.4690, 1e-3);
    EXPECT_NEAR(entropy_map(pixel({0.9, 0.1})).at(0, 0), raw_oracle / std::log(2.0), 1e-12);
}

TEST(Entropy, SumViolationNamesPixel) {
    DenseMap probs(3, 2, 2, 0.5);
    probs.at(2, 1, 0) = 0.7;
    try {
        entropy_map(probs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kProbabilitySum);
        const std::string what = e.what();
        EXPECT_NE(what.find("2"), std::string::npos);
        EXPECT_NE(what.find("1"), std::string::npos);
    }
    EXPECT_THROW(entropy_map(pixel({1.5, -0.5})), Error);
}

TEST(Entropy, PropertyPermutationInvariantAndBounded) {
    std::mt19937_64 rng(9);
    std::exponential_distribution<double> e(1.0);
    std::uniform_int_distribution<int> classes(2, 12);
    for (int trial = 0; trial < 500; ++trial) {
        const int c = classes(rng);
        std::vector<double> p(c);
        for (double& v : p) v = e(rng);
        const double s = std::accumulate(p.begin(), p.end(), 0.0);
        for (double& v : p) v /= s;
        const double u = entropy_map(pixel(p)).at(0, 0);
        ASSERT_GE(u, 0.0);
        ASSERT_LE(u, 1.0 + 1e-9);
        for (int k = 0; k < 3; ++k) {
            std::shuffle(p.begin(), p.end(), rng);
            ASSERT_EQ(entropy_map(pixel(p)).at(0, 0), u);
        }
    }
}

TEST(Entropy, ZeroOnlyForOneHot) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int trial = 0; trial < 200; ++trial) {
        const double a = u(rng);
        EXPECT_GT(entropy_map(pixel({a, 1.0 - a})).at(0, 0), 1e-6);
    }
    EXPECT_LT(uncertainty_from_logits(pixel({1000, 0, 0})).at(0, 0), 1e-6);
}

TEST(UncertaintyFromLogits, ConstantDominantAndCheckerboard) {
    const int w = 6, h = 4, c = 3;
    DenseMap constant(w, h, c, 2.5);
    const UncertaintyMap flat = uncertainty_from_logits(constant);
    for (double v : flat.map.data()) EXPECT_NEAR(v, 1.0, 1e-12);

    DenseMap dominant(w, h, c, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) dominant.at(x, y, 1) = 1000.0;
    const UncertaintyMap peaked = uncertainty_from_logits(dominant);
    for (double v : peaked.map.data()) EXPECT_LT(v, 1e-6);

    DenseMap checker(w, h, c, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((x + y) % 2) checker.at(x, y, 0) = 1000.0;
    const UncertaintyMap u = uncertainty_from_logits(checker);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) EXPECT_NEAR(u.at(x, y), (x + y) % 2 ? 0.0 : 1.0, 1e-6);
}

TEST(UncertaintyMap, RejectsOutOfRange) {
    EXPECT_THROW(UncertaintyMap(DenseMap(2, 2, 1, 1.5)), Error);
    EXPECT_THROW(UncertaintyMap(DenseMap(2, 2, 2, 0.5)), Error);
    const UncertaintyMap ok = UncertaintyMap::confident(3, 2);
    for (double v : ok.map.data()) EXPECT_EQ(v, 0.0);
}

} // namespace
} // namespace uars
