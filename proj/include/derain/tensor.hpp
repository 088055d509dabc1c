// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace derain {

// Dense row-major matrix. Used for hidden states (tokens x dim) and weights.
template <class T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    template <class U>
    Matrix<U> cast() const {
        Matrix<U> out(rows, cols);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    bool operator==(const Matrix&) const = default;
};

// Copies rows [begin, end) into a new matrix.
template <class T>
Matrix<T> slice_rows(const Matrix<T>& m, std::size_t begin, std::size_t end) {
    Matrix<T> out(end - begin, m.cols);
    std::copy(m.row(begin), m.row(begin) + out.size(), out.data.begin());
    return out;
}

template <class T>
Matrix<T> concat_rows(const Matrix<T>& top, const Matrix<T>& bottom) {
    if (top.cols != bottom.cols) {
        throw std::invalid_argument("concat_rows: column mismatch");
    }
    Matrix<T> out(top.rows + bottom.rows, top.cols);
    std::copy(top.data.begin(), top.data.end(), out.data.begin());
    std::copy(bottom.data.begin(), bottom.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(top.size()));
    return out;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& m) {
    Matrix<T> out(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            out(c, r) = m(r, c);
        }
    }
    return out;
}

// out = a * b (or out += a * b). Inner loop runs over contiguous output columns
// so every output row is produced by the same instruction sequence regardless
// of which other rows are present.
template <class T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimension mismatch");
    }
    if (out.rows != a.rows || out.cols != b.cols) {
        out = Matrix<T>(a.rows, b.cols);
    } else if (!accumulate) {
        out.zero();
    }
    const std::size_t n = a.rows, k = a.cols, m = b.cols;
    for (std::size_t i = 0; i < n; ++i) {
        T* __restrict o = out.row(i);
        const T* ai = a.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* __restrict bp = b.row(p);
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += av * bp[j];
            }
        }
    }
}

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    Matrix<T> out(a.rows, b.cols);
    matmul(a, b, out, true);
    return out;
}

// out += a^T * b, with a: n x k, b: n x m, out: k x m.
template <class T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
    if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols) {
        throw std::invalid_argument("matmul_tn_acc: shape mismatch");
    }
    const std::size_t n = a.rows, k = a.cols, m = b.cols;
    for (std::size_t p = 0; p < n; ++p) {
        const T* ap = a.row(p);
        const T* __restrict bp = b.row(p);
        for (std::size_t i = 0; i < k; ++i) {
            const T av = ap[i];
            T* __restrict o = out.row(i);
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += av * bp[j];
            }
        }
    }
}

template <class T>
void add_row_vector(Matrix<T>& m, const Matrix<T>& bias) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        T* o = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) {
            o[c] += bias.data[c];
        }
    }
}

// Column sums accumulated into a 1 x cols matrix (bias gradients).
template <class T>
void add_column_sums(const Matrix<T>& m, Matrix<T>& acc) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const T* s = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) {
            acc.data[c] += s[c];
        }
    }
}

struct VideoShape {
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t numel() const { return frames * channels * height * width; }
    std::size_t frame_size() const { return channels * height * width; }
    bool operator==(const VideoShape&) const = default;
};

inline std::string to_string(const VideoShape& s) {
    return std::to_string(s.frames) + "x" + std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
           std::to_string(s.width);
}

// A frames x channels x height x width block. Pixel-space videos live in
// [0, 1]; latents are the same block mapped to [-1, 1].
template <class T>
struct Video {
    VideoShape shape;
    std::vector<T> data;

    Video() = default;
    explicit Video(VideoShape s, T fill = T(0)) : shape(s), data(s.numel(), fill) {}

    std::size_t index(std::size_t f, std::size_t c, std::size_t y, std::size_t x) const {
        return ((f * shape.channels + c) * shape.height + y) * shape.width + x;
    }
    T& at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) { return data[index(f, c, y, x)]; }
    const T& at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) const { return data[index(f, c, y, x)]; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    template <class U>
    Video<U> cast() const {
        Video<U> out(shape);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    bool operator==(const Video&) const = default;
};

template <class T>
using LatentVideo = Video<T>;

template <class T>
void require_same_shape(const Video<T>& a, const Video<T>& b, const char* what) {
    if (!(a.shape == b.shape)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + to_string(a.shape) + " vs " +
                                    to_string(b.shape) + ")");
    }
}

// out = alpha * a + beta * b
template <class T>
Video<T> axpby(T alpha, const Video<T>& a, T beta, const Video<T>& b) {
    require_same_shape(a, b, "axpby");
    Video<T> out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data[i] = alpha * a.data[i] + beta * b.data[i];
    }
    return out;
}

template <class T>
T max_abs_diff(const Video<T>& a, const Video<T>& b) {
    require_same_shape(a, b, "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    }
    return m;
}

template <class T>
double l2_distance(const Video<T>& a, const Video<T>& b) {
    require_same_shape(a, b, "l2_distance");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

// Pixel [0,1] <-> latent [-1,1]. The toy pipeline has no learned autoencoder.
template <class T>
Video<T> to_latent(const Video<T>& pixels) {
    Video<T> out(pixels.shape);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        out.data[i] = T(2) * pixels.data[i] - T(1);
    }
    return out;
}

template <class T>
Video<T> to_pixels(const Video<T>& latent, bool clamp = true) {
    Video<T> out(latent.shape);
    for (std::size_t i = 0; i < latent.size(); ++i) {
        T v = (latent.data[i] + T(1)) / T(2);
        out.data[i] = clamp ? std::clamp(v, T(0), T(1)) : v;
    }
    return out;
}

// Rounds pixel values to the 8-bit grid used for exported frames.
template <class T>
Video<T> quantize_8bit(const Video<T>& pixels) {
    Video<T> out(pixels.shape);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        out.data[i] = std::round(std::clamp(pixels.data[i], T(0), T(1)) * T(255)) / T(255);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Randomness. All stochastic operations take explicit seeds; sub-streams are
// derived with splitmix64 so they do not depend on call order elsewhere.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

template <class T>
Video<T> gaussian_video(VideoShape shape, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Video<T> out(shape);
    for (auto& v : out.data) {
        v = static_cast<T>(normal(rng));
    }
    return out;
}

template <class T>
Video<T> gaussian_video(VideoShape shape, std::uint64_t seed) {
    Rng rng(seed);
    return gaussian_video<T>(shape, rng);
}

}  // namespace derain
