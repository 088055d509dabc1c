// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/tensor.hpp"
#include "derain/text.hpp"

namespace derain {

enum class BackgroundKind { gradient, shapes };
enum class Intensity { none, light, heavy };
enum class Weather { rain, snow };

inline std::string to_string(Intensity i) {
    switch (i) {
        case Intensity::none: return "none";
        case Intensity::light: return "light";
        case Intensity::heavy: return "heavy";
    }
    return "?";
}

struct Blob {
    double x = 0, y = 0, sigma = 4;
    std::array<double, 3> color{};
};

struct RainSceneSpec {
    std::uint64_t seed = 0;
    std::size_t frames = 4;
    std::size_t height = 16;
    std::size_t width = 16;
    BackgroundKind background = BackgroundKind::gradient;
    double camera_vx = 0.0;  // px / frame
    double camera_vy = 0.0;
    std::size_t streak_count = 0;
    double streak_angle_deg = 75.0;  // 90 = straight down, image y axis points down
    double streak_length = 4.0;      // px
    double streak_opacity = 0.5;
    double fall_speed = 3.0;  // px / frame along the streak axis
    Intensity intensity = Intensity::none;
    Weather weather = Weather::rain;

    void validate() const {
        if (frames < 2 || height < 4 || width < 4) {
            throw std::invalid_argument("scene needs at least 2 frames of 4x4 pixels");
        }
        if (!(streak_opacity >= 0.0 && streak_opacity <= 1.0)) {
            throw std::invalid_argument("streak opacity outside [0, 1]");
        }
        if (streak_length < 0.0 || fall_speed < 0.0) {
            throw std::invalid_argument("streak parameters must be nonnegative");
        }
        if ((intensity == Intensity::none) != (streak_count == 0)) {
            throw std::invalid_argument("intensity class 'none' requires zero streaks and vice versa");
        }
    }
};

inline constexpr std::array<double, 3> kStreakColor = {0.92, 0.94, 0.97};
inline constexpr double kStreakHalfWidth = 0.8;

struct SceneBundle {
    RainSceneSpec spec;
    Video<double> clean;
    Video<double> rainy;
    Video<double> rain_layer;  // rainy - clean
    Video<double> rain_mask;   // frames x 1 x H x W, coverage in [0, 1]
    Video<double> flow;        // (frames - 1) x 2 x H x W, backward flow (dx, dy)
    std::vector<int> caption;  // token ids, unpadded
};

namespace detail {

// Scene appearance in world coordinates. Gradients are affine so bilinear
// resampling is exact; blobs are wide Gaussians.
struct Backdrop {
    std::array<double, 3> base{};
    std::array<double, 3> grad_x{};
    std::array<double, 3> grad_y{};
    std::vector<Blob> blobs;

    std::array<double, 3> operator()(double x, double y) const {
        std::array<double, 3> c{};
        for (std::size_t k = 0; k < 3; ++k) {
            c[k] = base[k] + grad_x[k] * x + grad_y[k] * y;
        }
        for (const Blob& b : blobs) {
            const double dx = x - b.x, dy = y - b.y;
            const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            for (std::size_t k = 0; k < 3; ++k) {
                c[k] += w * b.color[k];
            }
        }
        return c;
    }
};

inline Backdrop make_backdrop(const RainSceneSpec& s) {
    Rng rng(derive_seed(s.seed, 1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Backdrop bd;
    const double span = static_cast<double>(std::max(s.width, s.height));
    for (std::size_t k = 0; k < 3; ++k) {
        bd.base[k] = 0.2 + 0.35 * u(rng);
        bd.grad_x[k] = (u(rng) - 0.5) * 0.25 / span;
        bd.grad_y[k] = (u(rng) - 0.5) * 0.25 / span;
    }
    if (s.background == BackgroundKind::shapes) {
        const int n = 2 + static_cast<int>(u(rng) * 2.0);
        for (int i = 0; i < n; ++i) {
            Blob b;
            b.x = u(rng) * static_cast<double>(s.width);
            b.y = u(rng) * static_cast<double>(s.height);
            b.sigma = 3.0 + 2.0 * u(rng);
            for (std::size_t k = 0; k < 3; ++k) {
                b.color[k] = (u(rng) - 0.5) * 0.4;
            }
            bd.blobs.push_back(b);
        }
    }
    return bd;
}

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

inline double wrap(double v, double period) {
    v = std::fmod(v, period);
    return v < 0 ? v + period : v;
}

}  // namespace detail

struct StreakHead {
    double x = 0;
    double y = 0;
};

inline std::array<double, 2> streak_direction(const RainSceneSpec& s) {
    const double a = s.streak_angle_deg * std::numbers::pi / 180.0;
    return {std::cos(a), std::sin(a)};
}

// Head positions of every streak at `frame`, wrapped into the frame.
inline std::vector<StreakHead> streak_positions(const RainSceneSpec& s, std::size_t frame) {
    Rng rng(derive_seed(s.seed, 2));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto [dx, dy] = streak_direction(s);
    const double W = static_cast<double>(s.width), H = static_cast<double>(s.height);
    std::vector<StreakHead> heads(s.streak_count);
    for (auto& h : heads) {
        const double x0 = u(rng) * W, y0 = u(rng) * H;
        const double travel = s.fall_speed * static_cast<double>(frame);
        h.x = detail::wrap(x0 + travel * dx, W);
        h.y = detail::wrap(y0 + travel * dy, H);
    }
    return heads;
}

// Coverage of the precipitation layer at one frame.
inline std::vector<double> precipitation_mask(const RainSceneSpec& s, std::size_t frame) {
    const std::size_t H = s.height, W = s.width;
    std::vector<double> mask(H * W, 0.0);
    const auto heads = streak_positions(s, frame);
    const auto [dx, dy] = streak_direction(s);
    const double Wd = static_cast<double>(W), Hd = static_cast<double>(H);
    for (const auto& h : heads) {
        for (int oy = -1; oy <= 1; ++oy) {
            for (int ox = -1; ox <= 1; ++ox) {
                const double ax = h.x + ox * Wd, ay = h.y + oy * Hd;
                for (std::size_t y = 0; y < H; ++y) {
                    for (std::size_t x = 0; x < W; ++x) {
                        const double px = static_cast<double>(x), py = static_cast<double>(y);
                        double cover;
                        if (s.weather == Weather::rain) {
                            const double d = detail::segment_distance(px, py, ax, ay, ax - s.streak_length * dx,
                                                                      ay - s.streak_length * dy);
                            cover = std::clamp(1.0 - d / kStreakHalfWidth, 0.0, 1.0);
                        } else {
                            const double r = std::hypot(px - ax, py - ay);
                            cover = std::clamp(1.5 - r, 0.0, 1.0);
                        }
                        double& m = mask[y * W + x];
                        m = std::max(m, cover);
                    }
                }
            }
        }
    }
    return mask;
}

inline SceneBundle render(const RainSceneSpec& spec) {
    spec.validate();
    const std::size_t F = spec.frames, H = spec.height, W = spec.width;
    const detail::Backdrop backdrop = detail::make_backdrop(spec);
    SceneBundle b;
    b.spec = spec;
    b.clean = Video<double>({F, 3, H, W});
    b.rainy = Video<double>({F, 3, H, W});
    b.rain_layer = Video<double>({F, 3, H, W});
    b.rain_mask = Video<double>({F, 1, H, W});
    b.flow = Video<double>({F - 1, 2, H, W});
    const double alpha = spec.streak_opacity;
    for (std::size_t f = 0; f < F; ++f) {
        const double ox = spec.camera_vx * static_cast<double>(f);
        const double oy = spec.camera_vy * static_cast<double>(f);
        const std::vector<double> mask = spec.streak_count ? precipitation_mask(spec, f) : std::vector<double>(H * W, 0.0);
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const auto c = backdrop(static_cast<double>(x) + ox, static_cast<double>(y) + oy);
                const double m = mask[y * W + x];
                b.rain_mask.at(f, 0, y, x) = m;
                for (std::size_t k = 0; k < 3; ++k) {
                    const double clean = std::clamp(c[k], 0.0, 1.0);
                    b.clean.at(f, k, y, x) = clean;
                    const double rainy =
                        m > 0 ? std::clamp(clean * (1.0 - alpha * m) + alpha * kStreakColor[k] * m, 0.0, 1.0) : clean;
                    b.rainy.at(f, k, y, x) = rainy;
                    b.rain_layer.at(f, k, y, x) = rainy - clean;
                }
            }
        }
    }
    for (std::size_t f = 0; f + 1 < F; ++f) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                b.flow.at(f, 0, y, x) = -spec.camera_vx;
                b.flow.at(f, 1, y, x) = -spec.camera_vy;
            }
        }
    }
    b.caption = {vocab::scene};
    if (spec.intensity != Intensity::none) {
        b.caption.push_back(spec.intensity == Intensity::light ? vocab::light : vocab::heavy);
        b.caption.push_back(spec.weather == Weather::rain ? vocab::rain : vocab::snow);
    }
    return b;
}

// Randomised scene of a given class. Streak statistics per class:
//   light: 4-6 streaks, opacity 0.35-0.5;  heavy: 10-14 streaks, opacity 0.55-0.75.
inline RainSceneSpec random_scene(std::uint64_t seed, Intensity intensity, std::size_t frames = 4,
                                  std::size_t height = 16, std::size_t width = 16, Weather weather = Weather::rain) {
    Rng rng(derive_seed(seed, 0));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RainSceneSpec s;
    s.seed = seed;
    s.frames = frames;
    s.height = height;
    s.width = width;
    s.weather = weather;
    s.intensity = intensity;
    s.background = u(rng) < 0.5 ? BackgroundKind::gradient : BackgroundKind::shapes;
    s.camera_vx = (u(rng) - 0.5) * 2.0;
    s.camera_vy = (u(rng) - 0.5) * 2.0;
    s.streak_angle_deg = 70.0 + 10.0 * u(rng);
    s.fall_speed = 2.0 + 2.0 * u(rng);
    switch (intensity) {
        case Intensity::none:
            s.streak_count = 0;
            s.streak_opacity = 0.0;
            s.streak_length = 0.0;
            break;
        case Intensity::light:
            s.streak_count = 4 + static_cast<std::size_t>(u(rng) * 3.0);
            s.streak_opacity = 0.35 + 0.15 * u(rng);
            s.streak_length = 3.0 + 2.0 * u(rng);
            break;
        case Intensity::heavy:
            s.streak_count = 10 + static_cast<std::size_t>(u(rng) * 5.0);
            s.streak_opacity = 0.55 + 0.2 * u(rng);
            s.streak_length = 4.0 + 2.0 * u(rng);
            break;
    }
    return s;
}

// Classes cycle none, light, heavy, so any n is balanced to within one.
inline std::vector<SceneBundle> make_dataset(std::size_t n, std::uint64_t seed, std::size_t frames = 4,
                                             std::size_t height = 16, std::size_t width = 16) {
    if (n == 0) {
        throw std::invalid_argument("make_dataset: n must be positive");
    }
    static constexpr Intensity classes[3] = {Intensity::none, Intensity::light, Intensity::heavy};
    std::vector<SceneBundle> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(render(random_scene(derive_seed(seed, 1000 + i), classes[i % 3], frames, height, width)));
    }
    return out;
}

// Rainy scenes only, alternating light and heavy.
inline std::vector<SceneBundle> make_rainy_set(std::size_t n, std::uint64_t seed, std::size_t frames = 4,
                                               std::size_t height = 16, std::size_t width = 16) {
    std::vector<SceneBundle> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Intensity cls = i % 2 == 0 ? Intensity::light : Intensity::heavy;
        out.push_back(render(random_scene(derive_seed(seed, 5000 + i), cls, frames, height, width)));
    }
    return out;
}

inline double mean_energy(const Video<double>& v) {
    double s = 0;
    for (double x : v.data) {
        s += x * x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace derain
