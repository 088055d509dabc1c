// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "derain/schedule.hpp"
#include "test_support.hpp"

using namespace derain;

TEST(Schedule, TwoStepHandOracle) {
    const NoiseSchedule s = schedule_from_betas({0.5, 0.5});
    ASSERT_EQ(s.num_steps, 2u);
    EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
    EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.5);
    EXPECT_DOUBLE_EQ(s.alpha_bar(2), 0.25);
    EXPECT_DOUBLE_EQ(s.sigma(1), 0.0);
    // beta_2 (1 - abar_1) / (1 - abar_2) = 0.5 * 0.5 / 0.75
    EXPECT_NEAR(s.sigma(2) * s.sigma(2), 1.0 / 3.0, 1e-15);

    Video<double> x({1, 1, 1, 1}, 1.0), eps({1, 1, 1, 1}, 0.0);
    EXPECT_NEAR(ddpm_mu(x, eps, 2, s).data[0], std::sqrt(2.0), 1e-15);
    eps.data[0] = 1.0;
    // (1 - 0.5 / sqrt(0.75)) / sqrt(0.5)
    EXPECT_NEAR(ddpm_mu(x, eps, 2, s).data[0], (1.0 - 0.5 / std::sqrt(0.75)) / std::sqrt(0.5), 1e-15);
}

TEST(Schedule, LinearEndpoints) {
    const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
    EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
    EXPECT_NEAR(s.beta(1000), 0.02, 1e-15);
    EXPECT_NEAR(s.beta(500), 1e-4 + (0.02 - 1e-4) * 499.0 / 999.0, 1e-15);
    for (std::size_t t = 2; t <= s.num_steps; ++t) {
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
}

// Reference values computed independently in higher-level tooling.
TEST(Schedule, CosineOracle) {
    const NoiseSchedule s = build_schedule(100, 1e-4, 0.02, ScheduleKind::cosine);
    EXPECT_NEAR(s.alpha_bars[0], 0.9993687184016583, 1e-12);
    EXPECT_NEAR(s.alpha_bars[49], 0.49384359044063775, 1e-12);
    EXPECT_NEAR(s.alpha_bars[99], 2.4285722793500615e-07, 1e-15);
}

TEST(Schedule, RespacedLevels) {
    const NoiseSchedule base = build_schedule(1000, 1e-4, 0.02);
    const NoiseSchedule s = respace(base, 100);
    ASSERT_EQ(s.num_steps, 100u);
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_DOUBLE_EQ(s.alpha_bars[i], base.alpha_bars[10 * i]);
    }
    EXPECT_EQ(s.sigma(1), 0.0);
    for (std::size_t t = 2; t <= 100; ++t) {
        EXPECT_GT(s.sigma(t), 0.0);
        EXPECT_NEAR(s.alpha(t) * s.alpha_bar(t - 1), s.alpha_bar(t), 1e-15);
    }
    ScheduleParams fine;
    fine.train_steps = 1000;
    EXPECT_DOUBLE_EQ(timestep_scale_for(fine), 10.0);
    EXPECT_EQ(make_schedule(fine).alpha_bars, s.alpha_bars);
}

// Cumulative products of 1 - linspace(1e-4, 0.02, 100), computed with numpy.
TEST(Schedule, DefaultLinearOracle) {
    const NoiseSchedule s = default_schedule();
    ASSERT_EQ(s.num_steps, 100u);
    EXPECT_NEAR(s.alpha_bars[0], 0.9999, 1e-15);
    EXPECT_NEAR(s.alpha_bars[49], 0.7771800826611795, 1e-12);
    EXPECT_NEAR(s.alpha_bars[99], 0.3635632480554922, 1e-12);
    EXPECT_DOUBLE_EQ(timestep_scale_for(ScheduleParams{}), 1.0);
}

TEST(Schedule, ForwardThenPredictRecoversClean) {
    const NoiseSchedule s = derain::testing::short_schedule(20);
    const auto x0 = derain::testing::random_latent<double>({2, 3, 4, 4}, 1);
    const auto eps = gaussian_video<double>(x0.shape, 2);
    for (std::size_t t : {1u, 7u, 20u}) {
        const auto xt = forward_noise(x0, t, eps, s);
        EXPECT_LT(max_abs_diff(predict_x0(xt, eps, t, s), x0), 1e-9);
    }
    EXPECT_EQ(forward_noise(x0, 0, eps, s), x0);
}

TEST(Schedule, DdimStepInvertsItsInverse) {
    const NoiseSchedule s = derain::testing::short_schedule(20);
    const auto x = derain::testing::random_latent<double>({2, 3, 4, 4}, 3);
    const auto eps = gaussian_video<double>(x.shape, 4);
    for (std::size_t t = 1; t <= 20; ++t) {
        const auto up = ddim_invert_step(x, eps, t, s);
        EXPECT_LT(max_abs_diff(ddim_step(up, eps, t, s), x), 1e-12);
    }
}

// Exact eps along a fixed clean latent puts every DDIM step on the same ray.
TEST(Schedule, DdimStepFollowsExactRay) {
    const NoiseSchedule s = derain::testing::short_schedule(10);
    const auto x0 = derain::testing::random_latent<double>({1, 3, 4, 4}, 5);
    const auto eps = gaussian_video<double>(x0.shape, 6);
    for (std::size_t t = 1; t <= 10; ++t) {
        const auto prev = ddim_step(forward_noise(x0, t, eps, s), eps, t, s);
        EXPECT_LT(max_abs_diff(prev, forward_noise(x0, t - 1, eps, s)), 1e-12);
    }
}

TEST(Schedule, RejectsBadParameters) {
    EXPECT_THROW(build_schedule(1, 1e-4, 0.02), std::invalid_argument);
    EXPECT_THROW(build_schedule(10, 0.0, 0.02), std::invalid_argument);
    EXPECT_THROW(build_schedule(10, 0.03, 0.02), std::invalid_argument);
    EXPECT_THROW(build_schedule(10, 1e-4, 1.0), std::invalid_argument);
    EXPECT_THROW(schedule_from_betas({0.5, 1.0}), std::invalid_argument);
    EXPECT_THROW(respace(build_schedule(10, 1e-4, 0.02), 11), std::invalid_argument);
    const NoiseSchedule s = derain::testing::short_schedule(10);
    EXPECT_THROW(s.check_step(0), std::out_of_range);
    EXPECT_THROW(s.check_step(11), std::out_of_range);
}
