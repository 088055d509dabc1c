// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/attention_control.hpp"
#include "derain/denoiser.hpp"
#include "derain/guidance.hpp"
#include "derain/schedule.hpp"
#include "derain/tensor.hpp"

namespace derain {

// Output of DDPM inversion. noise_maps[t - 1] holds z_t for t = 1..T. The
// first step has sigma = 0, so noise_maps[0] stores the additive residual
// x_0 - mu_1(x_1) instead of a scaled map. latents[t] holds x_t (t = 0..T)
// when retained.
template <class T>
struct InversionRecord {
    Video<T> x_T;
    std::vector<Video<T>> noise_maps;
    std::vector<Video<T>> latents;
    TextCondition condition_used;
    std::vector<double> schedule_alpha_bars;

    std::size_t steps() const { return noise_maps.size(); }

    void check_schedule(const NoiseSchedule& s) const {
        if (schedule_alpha_bars != s.alpha_bars || noise_maps.size() != s.num_steps) {
            throw std::invalid_argument("inversion record was built with a different schedule");
        }
    }
};

// Noise model at step t for the given condition.
template <class T>
using EpsFn = std::function<Video<T>(const Video<T>&, std::size_t)>;

// ---------------------------------------------------------------------------
// SDEdit: noise to `t_start` and denoise with fresh noise.

template <class T>
Video<T> sdedit_invert(const Video<T>& x0, std::size_t t_start, std::uint64_t seed, const NoiseSchedule& s) {
    if (x0.empty()) {
        throw std::invalid_argument("sdedit_invert: empty video");
    }
    if (t_start > s.num_steps) {
        s.check_step(t_start);
    }
    return forward_noise(x0, t_start, gaussian_video<T>(x0.shape, seed), s);
}

// Ancestral DDPM sampling from x at step `t_start` down to a clean latent.
template <class T>
Video<T> ddpm_sample_from(Video<T> x, std::size_t t_start, const TextCondition& cond, const Denoiser<T>& model,
                          const NoiseSchedule& s, std::uint64_t seed, AttentionControl<T>* control = nullptr) {
    Rng rng(seed);
    for (std::size_t t = t_start; t >= 1; --t) {
        Video<T> eps;
        if (control && control->mode() == AttnMode::switch_kv) {
            // Capture the null pass for this step, then run the switched pass.
            control->clear();
            control->set_mode(AttnMode::capture);
            model.predict_eps(x, t, null_condition(model.config().text_len), control);
            control->set_mode(AttnMode::switch_kv);
            eps = model.predict_eps(x, t, cond, control);
        } else {
            eps = model.predict_eps(x, t, cond, control);
        }
        const Video<T> z = gaussian_video<T>(x.shape, rng);
        x = ddpm_step(x, eps, t, z, s);
    }
    return x;
}

// Generation from pure noise.
template <class T>
Video<T> generate(const Denoiser<T>& model, const TextCondition& cond, std::uint64_t seed, const NoiseSchedule& s,
                  AttentionControl<T>* control = nullptr) {
    const Video<T> x_T = gaussian_video<T>(model.config().video_shape(), derive_seed(seed, 11));
    return ddpm_sample_from(x_T, s.num_steps, cond, model, s, derive_seed(seed, 12), control);
}

// ---------------------------------------------------------------------------
// DDIM inversion: the noise estimate is taken at x_{t-1} instead of x_t.
// Returns x_0 .. x_{t_end}.

template <class T>
std::vector<Video<T>> ddim_invert(const Video<T>& x0, const TextCondition& cond, const Denoiser<T>& model,
                                  const NoiseSchedule& s, std::optional<std::size_t> t_end = std::nullopt) {
    if (x0.empty()) {
        throw std::invalid_argument("ddim_invert: empty video");
    }
    const std::size_t end = t_end.value_or(s.num_steps);
    if (end > s.num_steps) {
        s.check_step(end);
    }
    std::vector<Video<T>> traj{x0};
    for (std::size_t t = 1; t <= end; ++t) {
        const Video<T> eps = model.predict_eps(traj.back(), t, cond);
        traj.push_back(ddim_invert_step(traj.back(), eps, t, s));
    }
    return traj;
}

template <class T>
Video<T> ddim_reconstruct(Video<T> x, std::size_t t_start, const TextCondition& cond, const Denoiser<T>& model,
                          const NoiseSchedule& s) {
    for (std::size_t t = t_start; t >= 1; --t) {
        x = ddim_step(x, model.predict_eps(x, t, cond), t, s);
    }
    return x;
}

// Same pair of procedures driven by an arbitrary noise model.
template <class T>
std::vector<Video<T>> ddim_invert_with(const Video<T>& x0, const EpsFn<T>& eps_fn, const NoiseSchedule& s) {
    std::vector<Video<T>> traj{x0};
    for (std::size_t t = 1; t <= s.num_steps; ++t) {
        traj.push_back(ddim_invert_step(traj.back(), eps_fn(traj.back(), t), t, s));
    }
    return traj;
}

template <class T>
Video<T> ddim_reconstruct_with(Video<T> x, const EpsFn<T>& eps_fn, const NoiseSchedule& s) {
    for (std::size_t t = s.num_steps; t >= 1; --t) {
        x = ddim_step(x, eps_fn(x, t), t, s);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Edit-friendly DDPM inversion.

template <class T>
InversionRecord<T> ddpm_invert_with(const Video<T>& x0, const EpsFn<T>& eps_fn, const NoiseSchedule& s,
                                    std::uint64_t seed, bool keep_latents = true) {
    if (x0.empty()) {
        throw std::invalid_argument("ddpm_invert: empty video");
    }
    const std::size_t T_steps = s.num_steps;
    for (std::size_t t = 2; t <= T_steps; ++t) {
        if (!(s.sigma(t) > 0.0)) {
            throw std::invalid_argument("posterior sigma is zero at non-final step " + std::to_string(t));
        }
    }
    // Independent noisy latents x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps_t.
    Rng rng(seed);
    std::vector<Video<T>> xs{x0};
    for (std::size_t t = 1; t <= T_steps; ++t) {
        xs.push_back(forward_noise(x0, t, gaussian_video<T>(x0.shape, rng), s));
    }
    InversionRecord<T> rec;
    rec.x_T = xs[T_steps];
    rec.noise_maps.resize(T_steps);
    rec.schedule_alpha_bars = s.alpha_bars;
    for (std::size_t t = T_steps; t >= 1; --t) {
        const Video<T> mu = ddpm_mu(xs[t], eps_fn(xs[t], t), t, s);
        Video<T> z(x0.shape);
        const double sigma = s.sigma(t);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const T r = xs[t - 1].data[i] - mu.data[i];
            z.data[i] = sigma > 0.0 ? static_cast<T>(r / sigma) : r;
        }
        rec.noise_maps[t - 1] = std::move(z);
    }
    if (keep_latents) {
        rec.latents = std::move(xs);
    }
    return rec;
}

template <class T>
InversionRecord<T> ddpm_invert(const Video<T>& x0, const TextCondition& cond, const Denoiser<T>& model,
                               const NoiseSchedule& s, std::uint64_t seed, bool keep_latents = true) {
    EpsFn<T> fn = [&](const Video<T>& x, std::size_t t) { return model.predict_eps(x, t, cond); };
    InversionRecord<T> rec = ddpm_invert_with(x0, fn, s, seed, keep_latents);
    rec.condition_used = cond;
    return rec;
}

// One reconstruction step with a stored map: mu + sigma z, or mu + residual
// at the sigma = 0 step.
template <class T>
Video<T> replay_step(const Video<T>& x_t, const Video<T>& eps, std::size_t t, const Video<T>& map,
                     const NoiseSchedule& s) {
    if (s.sigma(t) > 0.0) {
        return ddpm_step(x_t, eps, t, map, s);
    }
    Video<T> mu = ddpm_mu(x_t, eps, t, s);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        mu.data[i] += map.data[i];
    }
    return mu;
}

template <class T>
Video<T> reconstruct_with(const InversionRecord<T>& rec, const EpsFn<T>& eps_fn, const NoiseSchedule& s) {
    rec.check_schedule(s);
    Video<T> x = rec.x_T;
    for (std::size_t t = s.num_steps; t >= 1; --t) {
        x = replay_step(x, eps_fn(x, t), t, rec.noise_maps[t - 1], s);
    }
    return x;
}

// Replays the record from step `t_start` (default: x_T). Without guidance
// every step uses `cond`; with guidance, steps inside the skip window use the
// null condition and later steps use the dual-pass estimate.
template <class T>
Video<T> reconstruct(const InversionRecord<T>& rec, const TextCondition& cond, const Denoiser<T>& model,
                     const NoiseSchedule& s, const GuidanceSpec* guidance = nullptr,
                     AttentionControl<T>* control = nullptr, std::optional<std::size_t> t_start = std::nullopt) {
    rec.check_schedule(s);
    const std::size_t start = t_start.value_or(s.num_steps);
    Video<T> x;
    if (start == s.num_steps) {
        x = rec.x_T;
    } else {
        if (rec.latents.size() != s.num_steps + 1) {
            throw std::invalid_argument("reconstruct: intermediate latents were not retained");
        }
        x = rec.latents.at(start);
    }
    if (guidance) {
        guidance->validate();
        if (guidance->steps != s.num_steps) {
            throw std::invalid_argument("guidance steps do not match the schedule");
        }
    }
    for (std::size_t t = start; t >= 1; --t) {
        const Video<T> eps = guidance ? dual_pass(x, t, *guidance, model, control) : model.predict_eps(x, t, cond);
        x = replay_step(x, eps, t, rec.noise_maps[t - 1], s);
    }
    return x;
}

}  // namespace derain
