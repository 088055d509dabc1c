// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/denoiser.hpp"
#include "derain/schedule.hpp"
#include "derain/synthetic_rain.hpp"

namespace derain {

// Noise-prediction loss: mean over elements of (eps - eps_theta(x_t, t, c))^2.
// Returns the loss; when `grad` is given, accumulates scale * d(loss)/d(params).
template <class T>
double denoising_loss(const Denoiser<T>& model, const Video<T>& x0, std::size_t t, const Video<T>& eps,
                      const TextCondition& cond, const NoiseSchedule& s, DenoiserParams<T>* grad = nullptr,
                      double scale = 1.0) {
    if (!cond.embedding_overrides.empty()) {
        throw std::invalid_argument("training does not support embedding overrides");
    }
    const Video<T> x_t = forward_noise(x0, t, eps, s);
    ForwardCache<T> cache;
    const Video<T> pred = model.forward_train(x_t, t, cond, cache);
    double loss = 0;
    Video<T> d_pred(pred.shape);
    const double n = static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(eps.data[i]);
        loss += d * d;
        d_pred.data[i] = static_cast<T>(2.0 * d / n * scale);
    }
    if (grad) {
        model.backward(d_pred, cache, *grad);
    }
    return loss / n;
}

struct TrainOptions {
    std::size_t steps = 6000;
    std::size_t batch = 8;
    double learning_rate = 2e-3;
    double min_learning_rate = 1e-4;
    std::size_t warmup = 200;
    double condition_dropout = 0.1;
    // Per-word drop probability for the remaining captions, so partial
    // prompts such as "light rain" are seen in training.
    double word_dropout = 0.3;
    double grad_clip = 1.0;
    double ema_decay = 0.999;
    double loss_ema = 0.98;
    std::uint64_t seed = 0;
    ScheduleParams schedule;
};

struct TrainReport {
    std::vector<double> loss;      // per optimizer step
    std::vector<double> loss_ema;  // exponential moving average of `loss`
    double initial_loss_ema() const { return loss_ema.empty() ? 0.0 : loss_ema.front(); }
    double final_loss_ema() const { return loss_ema.empty() ? 0.0 : loss_ema.back(); }
};

using TrainCallback = std::function<void(std::size_t step, double loss, double loss_ema)>;

namespace detail {

template <class T>
std::vector<Matrix<T>*> flat_tensors(DenoiserParams<T>& p) {
    std::vector<Matrix<T>*> out;
    p.visit([&](const std::string&, Matrix<T>& m) { out.push_back(&m); });
    return out;
}

}  // namespace detail

// Trains a fresh model on the rainy videos of `data` with their captions.
// Returns the exponential moving average of the weights (the raw
// initialization when steps == 0).
inline Denoiser<float> train_toy(const std::vector<SceneBundle>& data, const DenoiserConfig& config,
                                 const TrainOptions& opt, TrainReport* report = nullptr,
                                 const TrainCallback& callback = {}) {
    if (data.empty()) {
        throw std::invalid_argument("train_toy: empty dataset");
    }
    if (opt.batch == 0) {
        throw std::invalid_argument("train_toy: batch must be positive");
    }
    const NoiseSchedule schedule = make_schedule(opt.schedule);
    DenoiserConfig cfg = config;
    cfg.timestep_scale = timestep_scale_for(opt.schedule);
    Denoiser<float> model = Denoiser<float>::initialized(cfg, derive_seed(opt.seed, 1));
    if (opt.steps == 0) {
        return model;
    }

    std::vector<Video<float>> latents;
    std::vector<std::vector<int>> captions;
    latents.reserve(data.size());
    for (const SceneBundle& b : data) {
        if (!(b.rainy.shape == cfg.video_shape())) {
            throw std::invalid_argument("dataset video shape does not match the model");
        }
        latents.push_back(to_latent(b.rainy).cast<float>());
        captions.push_back(b.caption);
    }
    const TextCondition null_cond = null_condition(cfg.text_len);

    DenoiserParams<float> ema = model.params();
    DenoiserParams<float> grad = DenoiserParams<float>::zeros(cfg);
    DenoiserParams<float> m1 = grad, m2 = grad;
    auto params = detail::flat_tensors(model.mutable_params());
    auto grads = detail::flat_tensors(grad);
    auto first = detail::flat_tensors(m1);
    auto second = detail::flat_tensors(m2);
    auto emas = detail::flat_tensors(ema);

    Rng rng(derive_seed(opt.seed, 2));
    std::uniform_int_distribution<std::size_t> pick(0, latents.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_t(1, schedule.num_steps);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    double loss_ema = 0;
    for (std::size_t step = 0; step < opt.steps; ++step) {
        for (Matrix<float>* g : grads) {
            g->zero();
        }
        double loss = 0;
        for (std::size_t i = 0; i < opt.batch; ++i) {
            const std::size_t idx = pick(rng);
            const std::size_t t = pick_t(rng);
            const bool drop = unit(rng) < opt.condition_dropout;
            std::vector<int> words;
            for (int w : captions[idx]) {
                if (opt.word_dropout == 0.0 || unit(rng) >= opt.word_dropout) {
                    words.push_back(w);
                }
            }
            const TextCondition cond = drop ? null_cond : make_condition(words, cfg.text_len);
            const Video<float> eps = gaussian_video<float>(cfg.video_shape(), rng);
            loss += denoising_loss(model, latents[idx], t, eps, cond, schedule, &grad,
                                   1.0 / static_cast<double>(opt.batch));
        }
        loss /= static_cast<double>(opt.batch);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("non-finite training loss at step " + std::to_string(step));
        }
        loss_ema = step == 0 ? loss : opt.loss_ema * loss_ema + (1.0 - opt.loss_ema) * loss;
        if (report) {
            report->loss.push_back(loss);
            report->loss_ema.push_back(loss_ema);
        }

        double norm2 = 0;
        for (const Matrix<float>* g : grads) {
            for (float v : g->data) {
                norm2 += static_cast<double>(v) * v;
            }
        }
        const double clip = opt.grad_clip > 0 ? std::min(1.0, opt.grad_clip / (std::sqrt(norm2) + 1e-12)) : 1.0;

        double lr = opt.learning_rate;
        if (step < opt.warmup) {
            lr *= static_cast<double>(step + 1) / static_cast<double>(opt.warmup);
        } else {
            const double progress =
                static_cast<double>(step - opt.warmup) / static_cast<double>(std::max<std::size_t>(1, opt.steps - opt.warmup));
            lr = opt.min_learning_rate +
                 0.5 * (opt.learning_rate - opt.min_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
        }
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step + 1));
        const double decay = std::min(opt.ema_decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k]->data;
            const auto& g = grads[k]->data;
            auto& a = first[k]->data;
            auto& b = second[k]->data;
            auto& e = emas[k]->data;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = static_cast<double>(g[i]) * clip;
                a[i] = static_cast<float>(beta1 * a[i] + (1.0 - beta1) * gi);
                b[i] = static_cast<float>(beta2 * b[i] + (1.0 - beta2) * gi * gi);
                p[i] -= static_cast<float>(lr * (a[i] / bc1) / (std::sqrt(b[i] / bc2) + adam_eps));
                e[i] = static_cast<float>(decay * e[i] + (1.0 - decay) * p[i]);
            }
        }
        if (callback) {
            callback(step, loss, loss_ema);
        }
    }
    if (!ema.all_finite()) {
        throw std::runtime_error("training produced non-finite weights");
    }
    return Denoiser<float>(cfg, std::move(ema));
}

}  // namespace derain
