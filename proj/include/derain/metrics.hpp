// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <vector>

#include "derain/tensor.hpp"

namespace derain {

inline double psnr_from_mse(double mse, double peak) {
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(peak * peak / mse);
}

template <class T>
double mse(const Video<T>& a, const Video<T>& b) {
    require_same_shape(a, b, "mse");
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return a.size() ? acc / static_cast<double>(a.size()) : 0.0;
}

template <class T>
double psnr(const Video<T>& a, const Video<T>& b, double peak = 1.0) {
    return psnr_from_mse(mse(a, b), peak);
}

template <class T>
std::vector<double> psnr_per_frame(const Video<T>& a, const Video<T>& b, double peak = 1.0) {
    require_same_shape(a, b, "psnr_per_frame");
    const std::size_t per = a.shape.frame_size();
    std::vector<double> out;
    for (std::size_t f = 0; f < a.shape.frames; ++f) {
        double acc = 0;
        for (std::size_t i = f * per; i < (f + 1) * per; ++i) {
            const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
            acc += d * d;
        }
        out.push_back(psnr_from_mse(acc / static_cast<double>(per), peak));
    }
    return out;
}

// Mean of per-frame PSNR; +inf only when every frame is identical.
template <class T>
double frame_averaged_psnr(const Video<T>& a, const Video<T>& b, double peak = 1.0) {
    const std::vector<double> v = psnr_per_frame(a, b, peak);
    double acc = 0;
    for (double p : v) {
        acc += p;
    }
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// Bilinear sample of channel c of frame f at fractional (x, y), clamped to the frame.
template <class T>
double bilinear(const Video<T>& v, std::size_t f, std::size_t c, double x, double y) {
    const double mx = static_cast<double>(v.shape.width - 1), my = static_cast<double>(v.shape.height - 1);
    x = std::clamp(x, 0.0, mx);
    y = std::clamp(y, 0.0, my);
    const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x1 = std::min(x0 + 1, v.shape.width - 1), y1 = std::min(y0 + 1, v.shape.height - 1);
    const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    const double top = (1 - fx) * v.at(f, c, y0, x0) + fx * v.at(f, c, y0, x1);
    const double bot = (1 - fx) * v.at(f, c, y1, x0) + fx * v.at(f, c, y1, x1);
    return (1 - fy) * top + fy * bot;
}

struct WarpErrorDetail {
    double mean = 0;
    std::vector<double> per_pair;
    std::size_t border = 0;
};

// flow[f] is (dx, dy) per pixel of frame f; frame f+1 sampled at p + flow
// aligns with frame f. Averages |frame_f - warped frame_{f+1}| over an
// interior that excludes a border of ceil(max |flow|) pixels.
template <class T, class U>
WarpErrorDetail warp_error_detail(const Video<T>& video, const Video<U>& flow) {
    const VideoShape& s = video.shape;
    if (s.frames < 2) {
        throw std::invalid_argument("warp_error: need at least two frames");
    }
    if (flow.shape.frames != s.frames - 1 || flow.shape.channels != 2 || flow.shape.height != s.height ||
        flow.shape.width != s.width) {
        throw std::invalid_argument("warp_error: flow " + to_string(flow.shape) + " does not match video " +
                                    to_string(s));
    }
    double max_mag = 0;
    for (std::size_t f = 0; f + 1 < s.frames; ++f) {
        for (std::size_t y = 0; y < s.height; ++y) {
            for (std::size_t x = 0; x < s.width; ++x) {
                const double dx = flow.at(f, 0, y, x), dy = flow.at(f, 1, y, x);
                max_mag = std::max(max_mag, std::sqrt(dx * dx + dy * dy));
            }
        }
    }
    WarpErrorDetail out;
    out.border = static_cast<std::size_t>(std::ceil(max_mag));
    if (2 * out.border >= s.height || 2 * out.border >= s.width) {
        throw std::invalid_argument("warp_error: flow magnitude leaves no interior pixels");
    }
    double total = 0;
    for (std::size_t f = 0; f + 1 < s.frames; ++f) {
        double acc = 0;
        std::size_t n = 0;
        for (std::size_t y = out.border; y < s.height - out.border; ++y) {
            for (std::size_t x = out.border; x < s.width - out.border; ++x) {
                const double sx = static_cast<double>(x) + flow.at(f, 0, y, x);
                const double sy = static_cast<double>(y) + flow.at(f, 1, y, x);
                for (std::size_t c = 0; c < s.channels; ++c) {
                    acc += std::abs(static_cast<double>(video.at(f, c, y, x)) - bilinear(video, f + 1, c, sx, sy));
                    ++n;
                }
            }
        }
        out.per_pair.push_back(acc / static_cast<double>(n));
        total += out.per_pair.back();
    }
    out.mean = total / static_cast<double>(out.per_pair.size());
    return out;
}

template <class T, class U>
double warp_error(const Video<T>& video, const Video<U>& flow) {
    return warp_error_detail(video, flow).mean;
}

// Mean of (output - clean)^2 over pixels whose mask is positive, all
// channels. An empty mask yields 0.
template <class T, class U>
double rain_residual(const Video<T>& output, const Video<T>& clean, const Video<U>& mask, bool warn = true) {
    require_same_shape(output, clean, "rain_residual");
    const VideoShape& s = output.shape;
    if (mask.shape.frames != s.frames || mask.shape.channels != 1 || mask.shape.height != s.height ||
        mask.shape.width != s.width) {
        throw std::invalid_argument("rain_residual: mask " + to_string(mask.shape) + " does not match " +
                                    to_string(s));
    }
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t f = 0; f < s.frames; ++f) {
        for (std::size_t y = 0; y < s.height; ++y) {
            for (std::size_t x = 0; x < s.width; ++x) {
                if (!(mask.at(f, 0, y, x) > 0)) {
                    continue;
                }
                for (std::size_t c = 0; c < s.channels; ++c) {
                    const double d = static_cast<double>(output.at(f, c, y, x)) - static_cast<double>(clean.at(f, c, y, x));
                    acc += d * d;
                    ++n;
                }
            }
        }
    }
    if (n == 0) {
        if (warn) {
            std::cerr << "warning: rain_residual called with an empty mask\n";
        }
        return 0.0;
    }
    return acc / static_cast<double>(n);
}

struct MetricsReport {
    double psnr_vs_clean = 0;
    double warp_error = 0;
    double rain_residual = 0;
    std::vector<double> psnr_per_frame;
    std::vector<double> warp_error_per_pair;
};

// Output, clean reference, rain mask and ground-truth flow in pixel space [0, 1].
inline MetricsReport evaluate_video(const Video<double>& output, const Video<double>& clean,
                                    const Video<double>& mask, const Video<double>& flow) {
    MetricsReport r;
    r.psnr_per_frame = psnr_per_frame(output, clean);
    r.psnr_vs_clean = psnr(output, clean);
    const WarpErrorDetail w = warp_error_detail(output, flow);
    r.warp_error = w.mean;
    r.warp_error_per_pair = w.per_pair;
    r.rain_residual = rain_residual(output, clean, mask);
    return r;
}

}  // namespace derain
