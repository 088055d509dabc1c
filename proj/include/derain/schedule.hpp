// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/tensor.hpp"

namespace derain {

enum class ScheduleKind { linear, cosine };

// Discrete noise schedule. Arrays are indexed by step - 1: step t in [1, T]
// reads betas[t - 1]. Step 0 denotes the clean latent (alpha_bar = 1).
struct NoiseSchedule {
    std::size_t num_steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> posterior_sigmas;

    double alpha_bar(std::size_t t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }
    double alpha(std::size_t t) const { return alphas.at(t - 1); }
    double beta(std::size_t t) const { return betas.at(t - 1); }
    double sigma(std::size_t t) const { return posterior_sigmas.at(t - 1); }

    void check_step(std::size_t t) const {
        if (t < 1 || t > num_steps) {
            throw std::out_of_range("step " + std::to_string(t) + " outside [1, " + std::to_string(num_steps) + "]");
        }
    }
};

namespace detail {

inline NoiseSchedule schedule_from_alpha_bars(std::vector<double> alpha_bars) {
    NoiseSchedule s;
    s.num_steps = alpha_bars.size();
    s.alpha_bars = std::move(alpha_bars);
    s.betas.resize(s.num_steps);
    s.alphas.resize(s.num_steps);
    s.posterior_sigmas.resize(s.num_steps);
    double prev = 1.0;
    for (std::size_t i = 0; i < s.num_steps; ++i) {
        s.alphas[i] = s.alpha_bars[i] / prev;
        s.betas[i] = 1.0 - s.alphas[i];
        // Posterior variance of q(x_{t-1} | x_t, x_0). Zero at the first step.
        s.posterior_sigmas[i] = std::sqrt(s.betas[i] * (1.0 - prev) / (1.0 - s.alpha_bars[i]));
        prev = s.alpha_bars[i];
    }
    return s;
}

}  // namespace detail

inline NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
    if (betas.size() < 2) {
        throw std::invalid_argument("schedule needs at least 2 steps");
    }
    std::vector<double> alpha_bars(betas.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0)) {
            throw std::invalid_argument("beta outside (0, 1) at index " + std::to_string(i));
        }
        prod *= 1.0 - betas[i];
        alpha_bars[i] = prod;
    }
    NoiseSchedule s = detail::schedule_from_alpha_bars(std::move(alpha_bars));
    s.betas = betas;  // keep the exact inputs
    for (std::size_t i = 0; i < betas.size(); ++i) {
        s.alphas[i] = 1.0 - betas[i];
    }
    return s;
}

inline NoiseSchedule build_schedule(std::size_t steps, double beta_start, double beta_end,
                                    ScheduleKind kind = ScheduleKind::linear) {
    if (steps < 2) {
        throw std::invalid_argument("schedule needs at least 2 steps");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("require 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(steps);
    if (kind == ScheduleKind::linear) {
        for (std::size_t i = 0; i < steps; ++i) {
            betas[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
        }
    } else {
        // Squared-cosine alpha_bar with offset s = 0.008, betas capped at 0.999.
        constexpr double offset = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / static_cast<double>(steps) + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
            return c * c;
        };
        for (std::size_t i = 0; i < steps; ++i) {
            const double b = 1.0 - f(static_cast<double>(i + 1)) / f(static_cast<double>(i));
            betas[i] = std::min(b, 0.999);
        }
    }
    return schedule_from_betas(betas);
}

// Sub-samples a fine schedule at `steps` evenly strided levels (1, 1 + k, ...),
// e.g. running a 100-level trained model with 10 inference steps.
inline NoiseSchedule respace(const NoiseSchedule& base, std::size_t steps) {
    if (steps < 2 || steps > base.num_steps) {
        throw std::invalid_argument("respace: steps must lie in [2, base steps]");
    }
    std::vector<double> alpha_bars(steps);
    const double stride = static_cast<double>(base.num_steps) / static_cast<double>(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const auto level = static_cast<std::size_t>(std::floor(static_cast<double>(i) * stride));
        alpha_bars[i] = base.alpha_bars[level];
    }
    return detail::schedule_from_alpha_bars(std::move(alpha_bars));
}

struct ScheduleParams {
    std::size_t train_steps = 100;
    std::size_t steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    ScheduleKind kind = ScheduleKind::linear;

    bool operator==(const ScheduleParams&) const = default;
};

inline NoiseSchedule make_schedule(const ScheduleParams& p) {
    NoiseSchedule base = build_schedule(p.train_steps, p.beta_start, p.beta_end, p.kind);
    return p.steps == p.train_steps ? base : respace(base, p.steps);
}

inline NoiseSchedule default_schedule() { return make_schedule(ScheduleParams{}); }

// Model time input per inference step: the respacing stride, so step t of
// a respaced schedule maps to training level t * train_steps / steps.
inline double timestep_scale_for(const ScheduleParams& p) {
    return static_cast<double>(p.train_steps) / static_cast<double>(p.steps);
}

// ---------------------------------------------------------------------------
// Per-step transforms.

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. t = 0 returns x0.
template <class T>
Video<T> forward_noise(const Video<T>& x0, std::size_t t, const Video<T>& eps, const NoiseSchedule& s) {
    require_same_shape(x0, eps, "forward_noise");
    if (t > s.num_steps) {
        s.check_step(t);
    }
    const double ab = s.alpha_bar(t);
    return axpby(static_cast<T>(std::sqrt(ab)), x0, static_cast<T>(std::sqrt(1.0 - ab)), eps);
}

// Predicted clean latent implied by eps_hat at step t.
template <class T>
Video<T> predict_x0(const Video<T>& x_t, const Video<T>& eps_hat, std::size_t t, const NoiseSchedule& s) {
    s.check_step(t);
    require_same_shape(x_t, eps_hat, "predict_x0");
    const double ab = s.alpha_bar(t);
    return axpby(static_cast<T>(1.0 / std::sqrt(ab)), x_t, static_cast<T>(-std::sqrt(1.0 - ab) / std::sqrt(ab)), eps_hat);
}

// Ancestral posterior mean: (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t).
template <class T>
Video<T> ddpm_mu(const Video<T>& x_t, const Video<T>& eps_hat, std::size_t t, const NoiseSchedule& s) {
    s.check_step(t);
    require_same_shape(x_t, eps_hat, "ddpm_mu");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
    const double eps_coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    return axpby(static_cast<T>(inv_sqrt_alpha), x_t, static_cast<T>(-inv_sqrt_alpha * eps_coef), eps_hat);
}

template <class T>
Video<T> ddpm_step(const Video<T>& x_t, const Video<T>& eps_hat, std::size_t t, const Video<T>& z,
                   const NoiseSchedule& s) {
    require_same_shape(x_t, z, "ddpm_step");
    Video<T> mu = ddpm_mu(x_t, eps_hat, t, s);
    const T sigma = static_cast<T>(s.sigma(t));
    for (std::size_t i = 0; i < mu.size(); ++i) {
        mu.data[i] += sigma * z.data[i];
    }
    return mu;
}

// Deterministic (eta = 0) update x_t -> x_{t-1}.
template <class T>
Video<T> ddim_step(const Video<T>& x_t, const Video<T>& eps_hat, std::size_t t, const NoiseSchedule& s) {
    s.check_step(t);
    require_same_shape(x_t, eps_hat, "ddim_step");
    const double ab = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t - 1);
    const double sa = std::sqrt(ab_prev) / std::sqrt(ab);
    const double se = std::sqrt(1.0 - ab_prev) - sa * std::sqrt(1.0 - ab);
    return axpby(static_cast<T>(sa), x_t, static_cast<T>(se), eps_hat);
}

// Rearranged DDIM update x_{t-1} -> x_t at fixed eps_hat.
template <class T>
Video<T> ddim_invert_step(const Video<T>& x_prev, const Video<T>& eps_hat, std::size_t t, const NoiseSchedule& s) {
    s.check_step(t);
    require_same_shape(x_prev, eps_hat, "ddim_invert_step");
    const double ab = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t - 1);
    const double sa = std::sqrt(ab) / std::sqrt(ab_prev);
    const double se = std::sqrt(1.0 - ab) - sa * std::sqrt(1.0 - ab_prev);
    return axpby(static_cast<T>(sa), x_prev, static_cast<T>(se), eps_hat);
}

}  // namespace derain
