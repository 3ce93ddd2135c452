// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#include "uars/loss.hpp"

#include "support/test_support.hpp"

#include <gtest/gtest.h>

namespace uars {
namespace {

using test::random_image;

TEST(Ssim, IdenticalImagesGiveExactlyOne) {
    const ImageBuffer x = random_image(1, 23, 17);
    const SsimOutput s = ssim(x, x, LossConfig{});
    EXPECT_EQ(s.value, 1.0);
    for (double g : s.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Ssim, ZerosVersusOnes) {
    // Zero variances: the contrast-structure factor is C2 / C2 = 1, leaving
    // the luminance factor C1 / (1 + C1).
    const double c1 = 1e-4;
    const double oracle = c1 / (1.0 + c1);
    const SsimOutput s = ssim(ImageBuffer(16, 16, 3, 0.0), ImageBuffer(16, 16, 3, 1.0), LossConfig{}, false);
    EXPECT_NEAR(s.value, oracle, 1e-12);
    EXPECT_NEAR(s.value, 9.999e-5, 1e-8);
}

TEST(Ssim, ConstantImagesLuminanceOnly) {
    const double c1 = 1e-4;
    const double a = 0.3, b = 0.7;
    const SsimOutput s = ssim(ImageBuffer(12, 12, 3, a), ImageBuffer(12, 12, 3, b), LossConfig{}, false);
    EXPECT_NEAR(s.value, (2 * a * b + c1) / (a * a + b * b + c1), 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ImageBuffer a = random_image(seed, 19, 13), b = random_image(seed + 100, 19, 13);
        const double ab = ssim(a, b, LossConfig{}, false).value;
        const double ba = ssim(b, a, LossConfig{}, false).value;
        EXPECT_NEAR(ab, ba, 1e-7);
        EXPECT_GE(ab, -1.0);
        EXPECT_LE(ab, 1.0);
    }
}

TEST(Ssim, ReferenceFormMatchesPairForm) {
    const ImageBuffer a = random_image(3, 20, 20), b = random_image(4, 20, 20);
    const SsimReference ref(b, LossConfig{});
    const SsimOutput x = ssim(a, b, LossConfig{});
    const SsimOutput y = ssim(a, ref);
    EXPECT_EQ(x.value, y.value);
    EXPECT_EQ(x.grad, y.grad);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ImageBuffer a = random_image(10 + seed, 16, 16);
        const ImageBuffer b = random_image(20 + seed, 16, 16);
        const SsimOutput s = ssim(a, b, LossConfig{});
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double fd = test::central_difference(&a.data()[i], 1e-4,
                                                       [&] { return ssim(a, b, LossConfig{}, false).value; });
            ASSERT_LT(test::rel_err(s.grad.data()[i], fd), 1e-3) << "element " << i;
        }
    }
}

TEST(Ssim, RejectsMismatch) {
    EXPECT_THROW(ssim(ImageBuffer(4, 4, 3), ImageBuffer(4, 5, 3), LossConfig{}), Error);
    EXPECT_THROW(ssim(ImageBuffer(4, 4, 1), ImageBuffer(4, 4, 1), LossConfig{}), Error);
}

TEST(UwL2, Examples) {
    const ImageBuffer x = random_image(5, 9, 7);
    const LossOutput same = uw_l2(x, x, UncertaintyMap::confident(9, 7));
    EXPECT_EQ(same.value, 0.0);
    for (double g : same.grad_rendered.data()) EXPECT_EQ(g, 0.0);

    const LossOutput masked = uw_l2(x, random_image(6, 9, 7), UncertaintyMap(DenseMap(9, 7, 1, 1.0)));
    EXPECT_EQ(masked.value, 0.0);
    for (double g : masked.grad_rendered.data()) EXPECT_EQ(g, 0.0);

    const LossOutput half = uw_l2(ImageBuffer(5, 4, 3, 0.5), ImageBuffer(5, 4, 3, 0.0), UncertaintyMap::confident(5, 4));
    EXPECT_EQ(half.value, 0.25);
}

TEST(UwL2, GradientFormula) {
    const ImageBuffer r = random_image(7, 6, 5), t = random_image(8, 6, 5);
    DenseMap u(6, 5, 1);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& v : u.data()) v = unit(rng);
    const LossOutput out = uw_l2(r, t, UncertaintyMap(u));
    const double n = static_cast<double>(r.size());
    double value = 0;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x)
            for (int c = 0; c < 3; ++c) {
                const double w = 1.0 - u.at(x, y);
                const double d = r.at(x, y, c) - t.at(x, y, c);
                value += w * w * d * d;
                EXPECT_NEAR(out.grad_rendered.at(x, y, c), 2.0 * w * w * d / n, 1e-15);
            }
    EXPECT_NEAR(out.value, value / n, 1e-15);
}

TEST(UwL2, PropertyMaskedPixelsHaveZeroGradientAndMonotoneInU) {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int w = 1 + static_cast<int>(rng() % 6), h = 1 + static_cast<int>(rng() % 6);
        const ImageBuffer r = random_image(rng(), w, h), t = random_image(rng(), w, h);
        DenseMap u(w, h, 1);
        for (double& v : u.data()) v = unit(rng) < 0.3 ? 1.0 : unit(rng);
        const LossOutput base = uw_l2(r, t, UncertaintyMap(u));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (u.at(x, y) == 1.0) {
                    for (int c = 0; c < 3; ++c) ASSERT_EQ(base.grad_rendered.at(x, y, c), 0.0);
                }
        DenseMap raised = u;
        const std::size_t p = rng() % raised.size();
        raised.data()[p] = raised.data()[p] + (1.0 - raised.data()[p]) * unit(rng);
        ASSERT_LE(uw_l2(r, t, UncertaintyMap(raised)).value, base.value);
    }
}

TEST(RefineLoss, Examples) {
    const ImageBuffer x = random_image(9, 14, 11);
    const UncertaintyMap u = UncertaintyMap::confident(14, 11);
    const LossOutput zero = refine_loss(x, x, u, LossConfig{});
    EXPECT_EQ(zero.value, 0.0);
    for (double g : zero.grad_rendered.data()) EXPECT_EQ(g, 0.0);

    const ImageBuffer y = random_image(10, 14, 11);
    LossConfig no_ssim;
    no_ssim.alpha = 0.0;
    EXPECT_EQ(refine_loss(x, y, u, no_ssim).value, uw_l2(x, y, u).value);

    LossConfig cfg;
    const double expected = uw_l2(x, y, u).value + cfg.alpha * (1.0 - ssim(x, y, cfg, false).value) / 2.0;
    EXPECT_NEAR(refine_loss(x, y, u, cfg).value, expected, 1e-15);
    EXPECT_GE(refine_loss(x, y, u, cfg).value, 0.0);

    LossConfig literal;
    literal.literal_ssim = true;
    EXPECT_NEAR(refine_loss(x, y, u, literal).value,
                uw_l2(x, y, u).value + literal.alpha * ssim(x, y, literal, false).value, 1e-15);
}

TEST(RefineLoss, GradientMatchesFiniteDifferences) {
    for (bool literal : {false, true}) {
        ImageBuffer r = random_image(31, 16, 16);
        const ImageBuffer t = random_image(32, 16, 16);
        DenseMap um(16, 16, 1);
        for (std::size_t i = 0; i < um.size(); ++i) um.data()[i] = (i % 5) / 4.0;
        const UncertaintyMap u(um);
        LossConfig cfg;
        cfg.literal_ssim = literal;
        const LossOutput out = refine_loss(r, t, u, cfg);
        for (std::size_t i = 0; i < r.size(); ++i) {
            const double fd = test::central_difference(&r.data()[i], 1e-4,
                                                       [&] { return refine_loss(r, t, u, cfg).value; });
            ASSERT_LT(test::rel_err(out.grad_rendered.data()[i], fd), 1e-3) << "element " << i;
        }
    }
}

TEST(RefineLoss, GradientsVanishAtTarget) {
    const ImageBuffer x = random_image(40, 12, 12);
    DenseMap um(12, 12, 1, 0.4);
    const LossOutput out = refine_loss(x, x, UncertaintyMap(um), LossConfig{});
    for (double g : out.grad_rendered.data()) EXPECT_EQ(g, 0.0);
}

TEST(LossConfig, Validation) {
    LossConfig cfg;
    cfg.alpha = -0.1;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = LossConfig{};
    cfg.ssim_window = 10;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(Psnr, Examples) {
    const ImageBuffer x = random_image(1, 8, 8);
    EXPECT_EQ(psnr(x, x), 100.0);
    ImageBuffer a(10, 10, 3, 0.0), b(10, 10, 3, 0.1);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    EXPECT_NEAR(psnr(ImageBuffer(4, 4, 3, 0.0), ImageBuffer(4, 4, 3, 0.5)), 10 * std::log10(4.0), 1e-12);
    EXPECT_NEAR(10 * std::log10(4.0), 6.02, 1e-2);
    EXPECT_THROW(psnr(ImageBuffer(4, 4, 3), ImageBuffer(4, 3, 3)), Error);
}

TEST(Psnr, PropertySymmetricAndDecreasingInMse) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const ImageBuffer a = random_image(rng(), 7, 5), b = random_image(rng(), 7, 5);
        ASSERT_EQ(psnr(a, b), psnr(b, a));
        // Scaling the residual up strictly raises the MSE.
        ImageBuffer c = a;
        for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = a.data()[i] + 1.5 * (b.data()[i] - a.data()[i]);
        ASSERT_LT(psnr(a, c), psnr(a, b));
    }
}

} // namespace
} // namespace uars
