// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/denoiser.hpp"
#include "derain/inversion.hpp"
#include "derain/metrics.hpp"
#include "derain/schedule.hpp"
#include "derain/tensor.hpp"

namespace derain {

// Mean streak angle of the synthetic generator, degrees from the +x axis.
inline constexpr double kNominalStreakAngle = 75.0;

namespace detail {

inline double luma(const Video<double>& v, std::size_t f, std::size_t y, std::size_t x) {
    double s = 0;
    for (std::size_t c = 0; c < v.shape.channels; ++c) {
        s += v.at(f, c, y, x);
    }
    return s / static_cast<double>(v.shape.channels);
}

}  // namespace detail

// Directional high-frequency energy of thin structures along `angle_deg`:
// mean over interior pixels of max(0, g_across^2 - g_along^2), where g is the
// central-difference gradient of the channel mean.
inline double rain_band_energy(const Video<double>& pixels, double angle_deg = kNominalStreakAngle) {
    const VideoShape& s = pixels.shape;
    if (s.height < 3 || s.width < 3) {
        throw std::invalid_argument("rain_band_energy: frames must be at least 3x3");
    }
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double dx = std::cos(a), dy = std::sin(a);
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t f = 0; f < s.frames; ++f) {
        for (std::size_t y = 1; y + 1 < s.height; ++y) {
            for (std::size_t x = 1; x + 1 < s.width; ++x) {
                const double gx = 0.5 * (detail::luma(pixels, f, y, x + 1) - detail::luma(pixels, f, y, x - 1));
                const double gy = 0.5 * (detail::luma(pixels, f, y + 1, x) - detail::luma(pixels, f, y - 1, x));
                const double along = gx * dx + gy * dy;
                const double across = -gx * dy + gy * dx;
                acc += std::max(0.0, across * across - along * along);
                ++n;
            }
        }
    }
    return acc / static_cast<double>(n);
}

// Variance of the 5x5 box-filtered channel mean: low-frequency scene content.
inline double background_energy(const Video<double>& pixels) {
    const VideoShape& s = pixels.shape;
    double acc = 0;
    for (std::size_t f = 0; f < s.frames; ++f) {
        std::vector<double> blur(s.height * s.width);
        for (std::size_t y = 0; y < s.height; ++y) {
            for (std::size_t x = 0; x < s.width; ++x) {
                double sum = 0;
                int cnt = 0;
                for (int oy = -2; oy <= 2; ++oy) {
                    for (int ox = -2; ox <= 2; ++ox) {
                        const auto yy = static_cast<long>(y) + oy, xx = static_cast<long>(x) + ox;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(s.height) || xx >= static_cast<long>(s.width)) {
                            continue;
                        }
                        sum += detail::luma(pixels, f, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                        ++cnt;
                    }
                }
                blur[y * s.width + x] = sum / cnt;
            }
        }
        double mean = 0;
        for (double v : blur) {
            mean += v;
        }
        mean /= static_cast<double>(blur.size());
        double var = 0;
        for (double v : blur) {
            var += (v - mean) * (v - mean);
        }
        acc += var / static_cast<double>(blur.size());
    }
    return acc / static_cast<double>(s.frames);
}

struct SampleStats {
    double mean = 0;
    double stddev = 0;  // sample standard deviation
    std::size_t n = 0;
};

inline SampleStats sample_stats(const std::vector<double>& v) {
    SampleStats st;
    st.n = v.size();
    if (v.empty()) {
        return st;
    }
    for (double x : v) {
        st.mean += x;
    }
    st.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0;
        for (double x : v) {
            ss += (x - st.mean) * (x - st.mean);
        }
        st.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return st;
}

// Welch's t statistic for mean(a) - mean(b).
inline double welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    const SampleStats sa = sample_stats(a), sb = sample_stats(b);
    if (sa.n < 2 || sb.n < 2) {
        throw std::invalid_argument("welch_t: need at least two samples per group");
    }
    const double se = std::sqrt(sa.stddev * sa.stddev / static_cast<double>(sa.n) +
                                sb.stddev * sb.stddev / static_cast<double>(sb.n));
    if (se == 0.0) {
        return sa.mean == sb.mean ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), sa.mean - sb.mean);
    }
    return (sa.mean - sb.mean) / se;
}

struct ProbeReport {
    std::string condition;
    double rain_energy = 0;
    double background_energy = 0;
    std::vector<double> rain_per_seed;
    std::vector<double> background_per_seed;
};

// Generates from pure noise under `cond` once per seed and measures the
// rain-band and background energy of each sample.
template <class T>
ProbeReport prompt_probe(const Denoiser<T>& model, const TextCondition& cond, const std::vector<std::uint64_t>& seeds,
                         const NoiseSchedule& s) {
    if (seeds.empty()) {
        throw std::invalid_argument("prompt_probe: no seeds");
    }
    ProbeReport r;
    r.condition = cond.embedding_overrides.empty() ? cond.text() : "<emb>";
    if (r.condition.empty()) {
        r.condition = "<null>";
    }
    for (std::uint64_t seed : seeds) {
        const Video<double> px = to_pixels(generate(model, cond, seed, s).template cast<double>());
        r.rain_per_seed.push_back(rain_band_energy(px));
        r.background_per_seed.push_back(background_energy(px));
    }
    r.rain_energy = sample_stats(r.rain_per_seed).mean;
    r.background_energy = sample_stats(r.background_per_seed).mean;
    return r;
}

enum class InversionMethod { sdedit, ddim, ddpm };

inline std::string to_string(InversionMethod m) {
    switch (m) {
        case InversionMethod::sdedit: return "sdedit";
        case InversionMethod::ddim: return "ddim";
        case InversionMethod::ddpm: return "ddpm";
    }
    return "?";
}

inline InversionMethod parse_inversion_method(const std::string& s) {
    if (s == "sdedit") return InversionMethod::sdedit;
    if (s == "ddim") return InversionMethod::ddim;
    if (s == "ddpm") return InversionMethod::ddpm;
    throw std::invalid_argument("unknown inversion method '" + s + "'");
}

struct SweepCell {
    InversionMethod method = InversionMethod::ddpm;
    std::size_t t_skip = 0;
    double psnr = 0;  // mean over videos; +inf when every reconstruction is exact
    std::vector<double> psnr_per_video;
};

// Display-space comparison: both videos quantized to 8 bits, frame-averaged PSNR.
inline double display_psnr(const Video<double>& a_pixels, const Video<double>& b_pixels) {
    return frame_averaged_psnr(quantize_8bit(a_pixels), quantize_8bit(b_pixels));
}

// Inverts each video and reconstructs it starting t_skip steps into the
// denoising trajectory, all under the null condition.
//   sdedit: forward-noise to the start step, then ancestral sampling with fresh noise.
//   ddim:   deterministic inversion to the start step and back.
//   ddpm:   edit-friendly inversion, replayed from the stored intermediate latent.
template <class T>
std::vector<SweepCell> inversion_sweep(const Denoiser<T>& model, const std::vector<Video<double>>& pixel_videos,
                                       const std::vector<std::size_t>& t_skips,
                                       const std::vector<InversionMethod>& methods, const NoiseSchedule& s,
                                       std::uint64_t seed) {
    for (std::size_t ts : t_skips) {
        if (ts > s.num_steps) {
            throw std::invalid_argument("t_skip " + std::to_string(ts) + " exceeds " + std::to_string(s.num_steps));
        }
    }
    const TextCondition null_cond = null_condition(model.config().text_len);
    std::vector<Video<double>> sources;
    for (const auto& v : pixel_videos) {
        sources.push_back(quantize_8bit(v));
    }
    std::vector<SweepCell> cells;
    for (InversionMethod m : methods) {
        for (std::size_t ts : t_skips) {
            SweepCell c;
            c.method = m;
            c.t_skip = ts;
            cells.push_back(c);
        }
    }
    for (std::size_t vi = 0; vi < sources.size(); ++vi) {
        const Video<T> x0 = to_latent(sources[vi]).template cast<T>();
        const std::uint64_t vseed = derive_seed(seed, vi);
        std::optional<InversionRecord<T>> ddpm_rec;
        std::vector<Video<T>> ddim_traj;
        for (SweepCell& c : cells) {
            const std::size_t start = s.num_steps - c.t_skip;
            Video<T> out;
            switch (c.method) {
                case InversionMethod::sdedit: {
                    const Video<T> xt = start ? sdedit_invert(x0, start, derive_seed(vseed, 1), s) : x0;
                    out = ddpm_sample_from(xt, start, null_cond, model, s, derive_seed(vseed, 2));
                    break;
                }
                case InversionMethod::ddim:
                    if (ddim_traj.empty()) {
                        ddim_traj = ddim_invert(x0, null_cond, model, s);
                    }
                    out = ddim_reconstruct(ddim_traj[start], start, null_cond, model, s);
                    break;
                case InversionMethod::ddpm:
                    if (!ddpm_rec) {
                        ddpm_rec = ddpm_invert(x0, null_cond, model, s, derive_seed(vseed, 3));
                    }
                    out = reconstruct(*ddpm_rec, null_cond, model, s, static_cast<const GuidanceSpec*>(nullptr),
                                      static_cast<AttentionControl<T>*>(nullptr), start);
                    break;
            }
            c.psnr_per_video.push_back(display_psnr(to_pixels(out.template cast<double>()), sources[vi]));
        }
    }
    for (SweepCell& c : cells) {
        c.psnr = sample_stats(c.psnr_per_video).mean;
    }
    return cells;
}

// max - min over finite-or-infinite values; 0 when all values are equal
// (including all +inf).
inline double spread(const std::vector<double>& v) {
    if (v.empty()) {
        return 0.0;
    }
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*lo == *hi) {
        return 0.0;
    }
    return *hi - *lo;
}

}  // namespace derain
