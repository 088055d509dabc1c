// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "derain/analysis.hpp"
#include "derain/block_study.hpp"
#include "derain/synthetic_rain.hpp"
#include "test_support.hpp"

using namespace derain;
using derain::testing::random_latent;
using derain::testing::randomized;
using derain::testing::short_schedule;
using derain::testing::tiny_config;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One-pixel-wide line through the centre at `angle_deg`.
Video<double> line_image(double angle_deg) {
    Video<double> v({1, 3, 17, 17}, 0.2);
    const double a = angle_deg * std::acos(-1.0) / 180.0;
    for (double r = -8; r <= 8; r += 0.05) {
        const auto x = static_cast<long>(std::lround(8 + r * std::cos(a)));
        const auto y = static_cast<long>(std::lround(8 + r * std::sin(a)));
        if (x >= 0 && y >= 0 && x < 17 && y < 17) {
            for (std::size_t c = 0; c < 3; ++c) {
                v.at(0, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 0.9;
            }
        }
    }
    return v;
}

}  // namespace

TEST(RainBand, PrefersStreakOrientation) {
    EXPECT_EQ(rain_band_energy(Video<double>({2, 3, 8, 8}, 0.4)), 0.0);
    const double along = rain_band_energy(line_image(kNominalStreakAngle));
    const double across = rain_band_energy(line_image(kNominalStreakAngle - 90));
    EXPECT_GT(along, 4 * across);
    EXPECT_THROW(rain_band_energy(Video<double>({1, 3, 2, 8})), std::invalid_argument);
}

TEST(RainBand, RainyFramesScoreHigherThanClean) {
    double rainy = 0, clean = 0;
    for (const SceneBundle& b : make_rainy_set(6, 11)) {
        rainy += rain_band_energy(b.rainy);
        clean += rain_band_energy(b.clean);
    }
    EXPECT_GT(rainy, 3 * clean);
}

TEST(BackgroundEnergy, ConstantAndStep) {
    EXPECT_NEAR(background_energy(Video<double>({1, 3, 8, 8}, 0.7)), 0.0, 1e-20);
    Video<double> step({1, 3, 8, 8}, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < 8; ++y) {
            for (std::size_t x = 4; x < 8; ++x) {
                step.at(0, c, y, x) = 1.0;
            }
        }
    }
    EXPECT_GT(background_energy(step), 0.05);
    // Thin lines barely move the blurred image.
    EXPECT_LT(background_energy(line_image(75)), background_energy(step));
}

TEST(Stats, SampleStatsAndWelch) {
    const SampleStats s = sample_stats({1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_EQ(sample_stats({}).n, 0u);
    // means 2 and 5, variances 1 and 1, n = 3: t = -3 / sqrt(2/3)
    EXPECT_NEAR(welch_t({1, 2, 3}, {4, 5, 6}), -3.0 / std::sqrt(2.0 / 3.0), 1e-12);
    EXPECT_EQ(welch_t({1, 1}, {1, 1}), 0.0);
    EXPECT_EQ(welch_t({2, 2}, {1, 1}), kInf);
    EXPECT_THROW(welch_t({1}, {1, 2}), std::invalid_argument);
}

TEST(Spread, HandlesInfinity) {
    EXPECT_EQ(spread({kInf, kInf, kInf}), 0.0);
    EXPECT_EQ(spread({}), 0.0);
    EXPECT_DOUBLE_EQ(spread({3.0, 1.0, 2.5}), 2.0);
    EXPECT_EQ(spread({1.0, kInf}), kInf);
}

TEST(Sweep, MethodNames) {
    for (InversionMethod m : {InversionMethod::sdedit, InversionMethod::ddim, InversionMethod::ddpm}) {
        EXPECT_EQ(parse_inversion_method(to_string(m)), m);
    }
    EXPECT_THROW(parse_inversion_method("ddrm"), std::invalid_argument);
}

// Edit-friendly inversion replays exactly from any start; the noise-adding
// baseline does not.
TEST(Sweep, DdpmIsExactAtEverySkip) {
    const auto model = randomized(tiny_config(), 111);
    const NoiseSchedule s = short_schedule(10);
    std::vector<Video<double>> videos;
    for (std::uint64_t i = 0; i < 2; ++i) {
        videos.push_back(to_pixels(random_latent<double>(tiny_config().video_shape(), 112 + i)));
    }
    const auto cells = inversion_sweep(model, videos, {0, 5, 10},
                                       {InversionMethod::sdedit, InversionMethod::ddim, InversionMethod::ddpm}, s, 3);
    ASSERT_EQ(cells.size(), 9u);
    for (const SweepCell& c : cells) {
        ASSERT_EQ(c.psnr_per_video.size(), 2u);
        if (c.method == InversionMethod::ddpm) {
            EXPECT_EQ(c.psnr, kInf) << "t_skip " << c.t_skip;
        }
        if (c.t_skip == 10) {
            EXPECT_EQ(c.psnr, kInf) << to_string(c.method);
        }
        if (c.method == InversionMethod::sdedit && c.t_skip == 0) {
            EXPECT_LT(c.psnr, 30.0);
        }
    }
    EXPECT_THROW(inversion_sweep(model, videos, {11}, {InversionMethod::ddpm}, s, 3), std::invalid_argument);
}

TEST(Probe, DeterministicPerSeed) {
    const auto model = randomized(tiny_config(), 121);
    const NoiseSchedule s = short_schedule(5);
    const TextCondition c = parse_prompt("scene heavy rain", 3);
    const ProbeReport a = prompt_probe(model, c, {1, 2}, s);
    const ProbeReport b = prompt_probe(model, c, {1, 2}, s);
    EXPECT_EQ(a.rain_per_seed, b.rain_per_seed);
    EXPECT_EQ(a.condition, "scene heavy rain");
    EXPECT_NEAR(a.rain_energy, 0.5 * (a.rain_per_seed[0] + a.rain_per_seed[1]), 1e-15);
}

TEST(BlockStudy, MedianSelection) {
    EXPECT_EQ(select_low_impact({10, 30, 20, 40}), (std::set<std::size_t>{1, 3}));
    EXPECT_EQ(select_low_impact({10, 30, 20}), (std::set<std::size_t>{1, 2}));
    EXPECT_EQ(select_low_impact({kInf, kInf, 5}), (std::set<std::size_t>{0, 1}));
    EXPECT_TRUE(select_low_impact({}).empty());
}

// A block whose attention output is zeroed cannot react to switched K/V, so
// the study must rank it highest.
TEST(BlockStudy, DeadBlockScoresHighest) {
    auto model = randomized(tiny_config(4), 131);
    auto& dead = model.mutable_params().blocks[2];
    std::fill(dead.wo.data.begin(), dead.wo.data.end(), 0.0);
    std::fill(dead.bo.data.begin(), dead.bo.data.end(), 0.0);
    // Mild noise levels keep generations inside the pixel range.
    const NoiseSchedule s = schedule_from_betas(std::vector<double>(5, 0.02));
    const std::vector<TextCondition> prompts = {parse_prompt("scene heavy rain", 3)};
    const BlockSelection sel = block_impact_study(model, prompts, {1, 2}, s);
    ASSERT_EQ(sel.impact_scores.size(), 4u);
    EXPECT_EQ(sel.impact_scores[2], kInf);
    for (std::size_t b : {0u, 1u, 3u}) {
        EXPECT_LT(sel.impact_scores[b], sel.impact_scores[2]);
    }
    EXPECT_TRUE(sel.selected.contains(2));
    const BlockSelection again = block_impact_study(model, prompts, {1, 2}, s);
    EXPECT_EQ(again.impact_scores, sel.impact_scores);
    EXPECT_THROW(block_impact_study(model, {}, {1}, s), std::invalid_argument);
}
