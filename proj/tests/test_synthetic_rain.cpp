// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "derain/metrics.hpp"
#include "derain/synthetic_rain.hpp"

using namespace derain;

namespace {

RainSceneSpec translating_gradient(double vx, double vy) {
    RainSceneSpec s = random_scene(5, Intensity::none, 4, 16, 16);
    s.background = BackgroundKind::gradient;
    s.camera_vx = vx;
    s.camera_vy = vy;
    return s;
}

}  // namespace

// Affine backgrounds make bilinear warping exact, so the supplied flow aligns
// consecutive clean frames to rounding error.
TEST(SyntheticRain, FlowAlignsCleanFrames) {
    for (auto [vx, vy] : {std::pair{0.7, -0.4}, std::pair{-1.0, 0.25}, std::pair{0.0, 0.0}}) {
        const SceneBundle b = render(translating_gradient(vx, vy));
        EXPECT_NEAR(b.flow.at(0, 0, 3, 3), -vx, 0.0);
        EXPECT_NEAR(b.flow.at(2, 1, 7, 9), -vy, 0.0);
        EXPECT_LT(warp_error(b.clean, b.flow), 1e-12);
    }
}

// Independent oracle: pixel (x, y) of frame f+1 displaced by the flow shows
// the world point that pixel (x, y) of frame f shows.
TEST(SyntheticRain, FlowOracleOnShapes) {
    RainSceneSpec s = random_scene(9, Intensity::none, 3, 16, 16);
    s.background = BackgroundKind::shapes;
    s.camera_vx = 1.0;
    s.camera_vy = -1.0;
    const SceneBundle b = render(s);
    for (std::size_t y = 2; y < 14; ++y) {
        for (std::size_t x = 2; x < 14; ++x) {
            const auto sx = static_cast<std::size_t>(static_cast<double>(x) + b.flow.at(0, 0, y, x));
            const auto sy = static_cast<std::size_t>(static_cast<double>(y) + b.flow.at(0, 1, y, x));
            for (std::size_t c = 0; c < 3; ++c) {
                EXPECT_NEAR(b.clean.at(1, c, sy, sx), b.clean.at(0, c, y, x), 1e-12);
            }
        }
    }
}

TEST(SyntheticRain, Deterministic) {
    const SceneBundle a = render(random_scene(17, Intensity::heavy));
    const SceneBundle b = render(random_scene(17, Intensity::heavy));
    EXPECT_EQ(a.rainy, b.rainy);
    EXPECT_EQ(a.rain_mask, b.rain_mask);
    const SceneBundle c = render(random_scene(18, Intensity::heavy));
    EXPECT_NE(a.rainy, c.rainy);
    EXPECT_EQ(make_dataset(6, 3)[4].rainy, make_dataset(6, 3)[4].rainy);
}

TEST(SyntheticRain, LayersAreConsistent) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const SceneBundle b = render(random_scene(seed, seed % 2 ? Intensity::light : Intensity::heavy));
        for (std::size_t f = 0; f < 4; ++f) {
            for (std::size_t y = 0; y < 16; ++y) {
                for (std::size_t x = 0; x < 16; ++x) {
                    const double m = b.rain_mask.at(f, 0, y, x);
                    EXPECT_GE(m, 0.0);
                    EXPECT_LE(m, 1.0);
                    for (std::size_t c = 0; c < 3; ++c) {
                        EXPECT_EQ(b.rain_layer.at(f, c, y, x), b.rainy.at(f, c, y, x) - b.clean.at(f, c, y, x));
                        if (m == 0.0) {
                            EXPECT_EQ(b.rainy.at(f, c, y, x), b.clean.at(f, c, y, x));
                        }
                        EXPECT_GE(b.rainy.at(f, c, y, x), 0.0);
                        EXPECT_LE(b.rainy.at(f, c, y, x), 1.0);
                    }
                }
            }
        }
        EXPECT_GT(mean_energy(b.rain_layer), 0.0);
    }
}

TEST(SyntheticRain, IntensityClassesAndCaptions) {
    const SceneBundle none = render(random_scene(1, Intensity::none));
    EXPECT_EQ(mean_energy(none.rain_layer), 0.0);
    EXPECT_EQ(none.caption, (std::vector<int>{vocab::scene}));
    const SceneBundle light = render(random_scene(1, Intensity::light));
    EXPECT_EQ(light.caption, (std::vector<int>{vocab::scene, vocab::light, vocab::rain}));
    const SceneBundle snow = render(random_scene(1, Intensity::heavy, 4, 16, 16, Weather::snow));
    EXPECT_EQ(snow.caption, (std::vector<int>{vocab::scene, vocab::heavy, vocab::snow}));

    double light_e = 0, heavy_e = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        light_e += mean_energy(render(random_scene(s, Intensity::light)).rain_layer);
        heavy_e += mean_energy(render(random_scene(s, Intensity::heavy)).rain_layer);
    }
    EXPECT_GT(heavy_e, 2.0 * light_e);
}

TEST(SyntheticRain, DatasetBalance) {
    const auto d = make_dataset(9, 4);
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& b : d) {
        ++counts[static_cast<int>(b.spec.intensity)];
    }
    EXPECT_EQ(counts[0], 3u);
    EXPECT_EQ(counts[1], 3u);
    EXPECT_EQ(counts[2], 3u);
    for (const auto& b : make_rainy_set(4, 4)) {
        EXPECT_NE(b.spec.intensity, Intensity::none);
    }
    EXPECT_THROW(make_dataset(0, 1), std::invalid_argument);
}

TEST(SyntheticRain, StreaksFollowTheirAngle) {
    RainSceneSpec s = random_scene(3, Intensity::light);
    const auto h0 = streak_positions(s, 0), h1 = streak_positions(s, 1);
    const auto [dx, dy] = streak_direction(s);
    for (std::size_t i = 0; i < h0.size(); ++i) {
        const double mx = detail::wrap(h0[i].x + s.fall_speed * dx, 16.0);
        const double my = detail::wrap(h0[i].y + s.fall_speed * dy, 16.0);
        EXPECT_NEAR(h1[i].x, mx, 1e-9);
        EXPECT_NEAR(h1[i].y, my, 1e-9);
    }
}

TEST(SyntheticRain, RejectsInvalidSpecs) {
    RainSceneSpec s = random_scene(1, Intensity::light);
    s.streak_opacity = 1.5;
    EXPECT_THROW(render(s), std::invalid_argument);
    s = random_scene(1, Intensity::none);
    s.streak_count = 3;
    EXPECT_THROW(render(s), std::invalid_argument);
    s = random_scene(1, Intensity::light);
    s.frames = 1;
    EXPECT_THROW(render(s), std::invalid_argument);
}
