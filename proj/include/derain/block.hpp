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
#include "derain/text.hpp"

namespace derain {

struct DenoiserConfig {
    std::size_t num_blocks = 8;
    std::size_t dim = 32;
    std::size_t heads = 4;
    std::size_t text_len = 4;
    std::size_t patch = 4;
    std::size_t frames = 4;
    std::size_t channels = 3;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t mlp_ratio = 4;
    std::size_t time_dim = 32;
    // Step index is multiplied by this before the sinusoidal embedding;
    // respaced inference maps back to the training levels through it.
    double timestep_scale = 1.0;

    std::size_t head_dim() const { return dim / heads; }
    std::size_t hidden_dim() const { return dim * mlp_ratio; }
    std::size_t grid_h() const { return height / patch; }
    std::size_t grid_w() const { return width / patch; }
    std::size_t img_tokens() const { return frames * grid_h() * grid_w(); }
    std::size_t tokens() const { return text_len + img_tokens(); }
    std::size_t patch_dim() const { return channels * patch * patch; }
    VideoShape video_shape() const { return {frames, channels, height, width}; }

    void validate() const {
        if (num_blocks == 0 || num_blocks > 64) {
            throw std::invalid_argument("num_blocks must be in [1, 64]");
        }
        if (dim == 0 || heads == 0 || dim % heads != 0) {
            throw std::invalid_argument("dim must be a positive multiple of heads");
        }
        if (text_len == 0 || patch == 0 || frames == 0 || channels == 0) {
            throw std::invalid_argument("text_len, patch, frames, channels must be positive");
        }
        if (height == 0 || width == 0 || height % patch != 0 || width % patch != 0) {
            throw std::invalid_argument("height and width must be positive multiples of patch");
        }
        if (time_dim == 0 || time_dim % 2 != 0 || mlp_ratio == 0) {
            throw std::invalid_argument("time_dim must be even and mlp_ratio positive");
        }
    }

    bool operator==(const DenoiserConfig&) const = default;
};

// h = h_text | h_img, text rows first.
template <class T>
struct HiddenState {
    Matrix<T> text_part;
    Matrix<T> img_part;

    Matrix<T> combined() const { return concat_rows(text_part, img_part); }

    static HiddenState split(const Matrix<T>& h, std::size_t text_len) {
        if (text_len > h.rows) {
            throw std::invalid_argument("HiddenState::split: text_len exceeds rows");
        }
        return {slice_rows(h, 0, text_len), slice_rows(h, text_len, h.rows)};
    }

    bool operator==(const HiddenState&) const = default;
};

template <class T>
struct BlockParams {
    Matrix<T> time_w, time_b;
    Matrix<T> ln1_g, ln1_b;
    Matrix<T> wq, bq, wk, bk, wv, bv;
    Matrix<T> wo, bo;
    Matrix<T> ln2_g, ln2_b;
    Matrix<T> w1, b1, w2, b2;

    // Zero weights with unit norm gains: the starting point for initialization.
    static BlockParams identity(const DenoiserConfig& c) {
        const std::size_t d = c.dim, hd = c.hidden_dim();
        BlockParams p;
        p.time_w = Matrix<T>(c.time_dim, d);
        p.time_b = Matrix<T>(1, d);
        p.ln1_g = Matrix<T>(1, d, T(1));
        p.ln1_b = Matrix<T>(1, d);
        for (Matrix<T>* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
            *w = Matrix<T>(d, d);
        }
        for (Matrix<T>* b : {&p.bq, &p.bk, &p.bv, &p.bo, &p.b2}) {
            *b = Matrix<T>(1, d);
        }
        p.ln2_g = Matrix<T>(1, d, T(1));
        p.ln2_b = Matrix<T>(1, d);
        p.w1 = Matrix<T>(d, hd);
        p.b1 = Matrix<T>(1, hd);
        p.w2 = Matrix<T>(hd, d);
        return p;
    }

    // All zeros, for gradient and optimizer-moment buffers.
    static BlockParams zeros(const DenoiserConfig& c) {
        BlockParams p = identity(c);
        p.visit([](const char*, Matrix<T>& m) { m.zero(); });
        return p;
    }

    template <class F>
    void visit(F&& f) {
        f("time_w", time_w), f("time_b", time_b), f("ln1_g", ln1_g), f("ln1_b", ln1_b);
        f("wq", wq), f("bq", bq), f("wk", wk), f("bk", bk), f("wv", wv), f("bv", bv);
        f("wo", wo), f("bo", bo), f("ln2_g", ln2_g), f("ln2_b", ln2_b);
        f("w1", w1), f("b1", b1), f("w2", w2), f("b2", b2);
    }
    template <class F>
    void visit(F&& f) const {
        const_cast<BlockParams*>(this)->visit([&](const char* n, Matrix<T>& m) { f(n, static_cast<const Matrix<T>&>(m)); });
    }
};

// ---------------------------------------------------------------------------
// Elementary pieces.

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
struct LayerNormCache {
    Matrix<T> xhat;
    std::vector<T> rstd;
};

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& g, const Matrix<T>& b, LayerNormCache<T>* cache = nullptr) {
    Matrix<T> y(x.rows, x.cols);
    if (cache) {
        cache->xhat = Matrix<T>(x.rows, x.cols);
        cache->rstd.assign(x.rows, T(0));
    }
    const auto n = static_cast<T>(x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const T* xr = x.row(r);
        T mean = 0;
        for (std::size_t c = 0; c < x.cols; ++c) {
            mean += xr[c];
        }
        mean /= n;
        T var = 0;
        for (std::size_t c = 0; c < x.cols; ++c) {
            const T d = xr[c] - mean;
            var += d * d;
        }
        var /= n;
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        T* yr = y.row(r);
        for (std::size_t c = 0; c < x.cols; ++c) {
            const T xh = (xr[c] - mean) * rstd;
            yr[c] = xh * g.data[c] + b.data[c];
            if (cache) {
                cache->xhat(r, c) = xh;
            }
        }
        if (cache) {
            cache->rstd[r] = rstd;
        }
    }
    return y;
}

template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const LayerNormCache<T>& cache, const Matrix<T>& g, Matrix<T>& dg,
                              Matrix<T>& db) {
    Matrix<T> dx(dy.rows, dy.cols);
    const auto n = static_cast<T>(dy.cols);
    for (std::size_t r = 0; r < dy.rows; ++r) {
        const T* dyr = dy.row(r);
        const T* xh = cache.xhat.row(r);
        T sum_dxh = 0, sum_dxh_xh = 0;
        for (std::size_t c = 0; c < dy.cols; ++c) {
            const T dxh = dyr[c] * g.data[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
            dg.data[c] += dyr[c] * xh[c];
            db.data[c] += dyr[c];
        }
        T* dxr = dx.row(r);
        const T k = cache.rstd[r] / n;
        for (std::size_t c = 0; c < dy.cols; ++c) {
            const T dxh = dyr[c] * g.data[c];
            dxr[c] = k * (n * dxh - sum_dxh - xh[c] * sum_dxh_xh);
        }
    }
    return dx;
}

template <class T>
T gelu(T z) {
    constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
    return T(0.5) * z * (T(1) + std::tanh(k * (z + T(0.044715) * z * z * z)));
}

template <class T>
T gelu_grad(T z) {
    constexpr T k = static_cast<T>(0.7978845608028654);
    const T inner = k * (z + T(0.044715) * z * z * z);
    const T th = std::tanh(inner);
    return T(0.5) * (T(1) + th) + T(0.5) * z * (T(1) - th * th) * k * (T(1) + T(3) * T(0.044715) * z * z);
}

template <class T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
    Matrix<T> y(x.rows, w.cols);
    matmul(x, w, y, true);
    add_row_vector(y, b);
    return y;
}

// Sinusoidal features of a (scaled) step index, 1 x dim.
template <class T>
Matrix<T> timestep_features(double t, std::size_t dim) {
    Matrix<T> out(1, dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out.data[i] = static_cast<T>(std::sin(t * freq));
        out.data[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return out;
}

template <class T>
Matrix<T> head_slice(const Matrix<T>& m, std::size_t head, std::size_t head_dim) {
    Matrix<T> out(m.rows, head_dim);
    for (std::size_t r = 0; r < m.rows; ++r) {
        std::copy(m.row(r) + head * head_dim, m.row(r) + (head + 1) * head_dim, out.row(r));
    }
    return out;
}

template <class T>
void softmax_rows(Matrix<T>& s) {
    for (std::size_t r = 0; r < s.rows; ++r) {
        T* row = s.row(r);
        T mx = row[0];
        for (std::size_t c = 1; c < s.cols; ++c) {
            mx = std::max(mx, row[c]);
        }
        T sum = 0;
        for (std::size_t c = 0; c < s.cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        const T inv = T(1) / sum;
        for (std::size_t c = 0; c < s.cols; ++c) {
            row[c] *= inv;
        }
    }
}

// Multi-head scaled dot-product attention. Heads occupy contiguous column
// groups of Q/K/V. `probs`, when given, receives one row-stochastic matrix per
// head.
template <class T>
Matrix<T> multi_head_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, std::size_t heads,
                               std::vector<Matrix<T>>* probs = nullptr) {
    if (q.cols != k.cols || k.rows != v.rows || v.cols != q.cols || q.cols % heads != 0) {
        throw std::invalid_argument("multi_head_attention: shape mismatch");
    }
    const std::size_t hd = q.cols / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    Matrix<T> out(q.rows, q.cols);
    if (probs) {
        probs->assign(heads, Matrix<T>());
    }
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix<T> qh = head_slice(q, h, hd);
        for (auto& x : qh.data) {
            x *= scale;
        }
        const Matrix<T> kt = transpose(head_slice(k, h, hd));
        Matrix<T> s = matmul(qh, kt);
        softmax_rows(s);
        const Matrix<T> oh = matmul(s, head_slice(v, h, hd));
        for (std::size_t r = 0; r < out.rows; ++r) {
            std::copy(oh.row(r), oh.row(r) + hd, out.row(r) + h * hd);
        }
        if (probs) {
            (*probs)[h] = std::move(s);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// One pre-norm joint-attention block over text | image tokens.

template <class T>
struct BlockCache {
    Matrix<T> temb;  // 1 x time_dim
    LayerNormCache<T> ln1;
    Matrix<T> a, q, k, v, o;
    std::vector<Matrix<T>> probs;
    LayerNormCache<T> ln2;
    Matrix<T> m, z, g;
};

// Normalised block input a = LN1(h + time_bias).
template <class T>
Matrix<T> block_attention_input(const Matrix<T>& h, const Matrix<T>& time_bias, const BlockParams<T>& p,
                                LayerNormCache<T>* cache = nullptr) {
    Matrix<T> u = h;
    add_row_vector(u, time_bias);
    return layer_norm(u, p.ln1_g, p.ln1_b, cache);
}

template <class T>
Matrix<T> block_time_bias(const Matrix<T>& temb, const BlockParams<T>& p) {
    return linear(temb, p.time_w, p.time_b);
}

// K and V for the joint sequence. With `text_source` the first text_len rows
// come from those hidden features instead of the text rows of `h`; every row
// is projected independently, so the image rows are untouched by the swap.
template <class T>
std::pair<Matrix<T>, Matrix<T>> block_kv(const Matrix<T>& a, const Matrix<T>& time_bias, const BlockParams<T>& p,
                                         const Matrix<T>* text_source) {
    if (!text_source) {
        return {linear(a, p.wk, p.bk), linear(a, p.wv, p.bv)};
    }
    const Matrix<T> a_text = block_attention_input(*text_source, time_bias, p);
    Matrix<T> a_kv = a;
    if (a_text.cols != a.cols || a_text.rows > a.rows) {
        throw std::invalid_argument("block_kv: text source shape mismatch");
    }
    std::copy(a_text.data.begin(), a_text.data.end(), a_kv.data.begin());
    return {linear(a_kv, p.wk, p.bk), linear(a_kv, p.wv, p.bv)};
}

// Attention sub-layer output (attn @ Wo + bo), before the residual add.
template <class T>
Matrix<T> attention_sublayer(const Matrix<T>& a, const Matrix<T>& time_bias, const BlockParams<T>& p,
                             std::size_t heads, const Matrix<T>* text_source, BlockCache<T>* cache = nullptr) {
    Matrix<T> q = linear(a, p.wq, p.bq);
    auto [k, v] = block_kv(a, time_bias, p, text_source);
    Matrix<T> o = multi_head_attention(q, k, v, heads, cache ? &cache->probs : nullptr);
    Matrix<T> out = linear(o, p.wo, p.bo);
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->o = std::move(o);
    }
    return out;
}

template <class T>
Matrix<T> block_forward(const Matrix<T>& h, const Matrix<T>& temb, const BlockParams<T>& p, std::size_t heads,
                        const Matrix<T>* text_source = nullptr, BlockCache<T>* cache = nullptr) {
    const Matrix<T> tb = block_time_bias(temb, p);
    Matrix<T> u = h;
    add_row_vector(u, tb);
    Matrix<T> a = layer_norm(u, p.ln1_g, p.ln1_b, cache ? &cache->ln1 : nullptr);
    const Matrix<T> attn = attention_sublayer(a, tb, p, heads, text_source, cache);
    Matrix<T> h1 = std::move(u);
    for (std::size_t i = 0; i < h1.size(); ++i) {
        h1.data[i] += attn.data[i];
    }
    Matrix<T> m = layer_norm(h1, p.ln2_g, p.ln2_b, cache ? &cache->ln2 : nullptr);
    Matrix<T> z = linear(m, p.w1, p.b1);
    Matrix<T> g(z.rows, z.cols);
    for (std::size_t i = 0; i < z.size(); ++i) {
        g.data[i] = gelu(z.data[i]);
    }
    const Matrix<T> f = linear(g, p.w2, p.b2);
    for (std::size_t i = 0; i < h1.size(); ++i) {
        h1.data[i] += f.data[i];
    }
    if (cache) {
        cache->temb = temb;
        cache->a = std::move(a);
        cache->m = std::move(m);
        cache->z = std::move(z);
        cache->g = std::move(g);
    }
    return h1;
}

// Gradient of a hook-free block. Accumulates parameter gradients into `grad`
// and returns d(loss)/d(h).
template <class T>
Matrix<T> block_backward(const Matrix<T>& dout, const BlockCache<T>& c, const BlockParams<T>& p, BlockParams<T>& grad,
                         std::size_t heads) {
    // MLP branch.
    matmul_tn_acc(c.g, dout, grad.w2);
    add_column_sums(dout, grad.b2);
    Matrix<T> dz = matmul(dout, transpose(p.w2));
    for (std::size_t i = 0; i < dz.size(); ++i) {
        dz.data[i] *= gelu_grad(c.z.data[i]);
    }
    matmul_tn_acc(c.m, dz, grad.w1);
    add_column_sums(dz, grad.b1);
    const Matrix<T> dm = matmul(dz, transpose(p.w1));
    Matrix<T> dh1 = layer_norm_backward(dm, c.ln2, p.ln2_g, grad.ln2_g, grad.ln2_b);
    for (std::size_t i = 0; i < dh1.size(); ++i) {
        dh1.data[i] += dout.data[i];
    }

    // Attention branch.
    matmul_tn_acc(c.o, dh1, grad.wo);
    add_column_sums(dh1, grad.bo);
    const Matrix<T> d_o = matmul(dh1, transpose(p.wo));
    const std::size_t hd = c.q.cols / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    Matrix<T> dq(c.q.rows, c.q.cols), dk(c.k.rows, c.k.cols), dv(c.v.rows, c.v.cols);
    for (std::size_t h = 0; h < heads; ++h) {
        const Matrix<T>& pr = c.probs[h];
        const Matrix<T> doh = head_slice(d_o, h, hd);
        const Matrix<T> vh = head_slice(c.v, h, hd);
        Matrix<T> dp = matmul(doh, transpose(vh));
        Matrix<T> dvh(vh.rows, hd);
        matmul_tn_acc(pr, doh, dvh);
        for (std::size_t r = 0; r < dp.rows; ++r) {
            T* dpr = dp.row(r);
            const T* prr = pr.row(r);
            T dot = 0;
            for (std::size_t j = 0; j < dp.cols; ++j) {
                dot += dpr[j] * prr[j];
            }
            for (std::size_t j = 0; j < dp.cols; ++j) {
                dpr[j] = prr[j] * (dpr[j] - dot) * scale;
            }
        }
        const Matrix<T> dqh = matmul(dp, head_slice(c.k, h, hd));
        Matrix<T> dkh(c.k.rows, hd);
        matmul_tn_acc(dp, head_slice(c.q, h, hd), dkh);
        for (std::size_t r = 0; r < dq.rows; ++r) {
            std::copy(dqh.row(r), dqh.row(r) + hd, dq.row(r) + h * hd);
            std::copy(dkh.row(r), dkh.row(r) + hd, dk.row(r) + h * hd);
            std::copy(dvh.row(r), dvh.row(r) + hd, dv.row(r) + h * hd);
        }
    }
    matmul_tn_acc(c.a, dq, grad.wq);
    matmul_tn_acc(c.a, dk, grad.wk);
    matmul_tn_acc(c.a, dv, grad.wv);
    add_column_sums(dq, grad.bq);
    add_column_sums(dk, grad.bk);
    add_column_sums(dv, grad.bv);
    Matrix<T> da = matmul(dq, transpose(p.wq));
    matmul(dk, transpose(p.wk), da, true);
    matmul(dv, transpose(p.wv), da, true);
    Matrix<T> du = layer_norm_backward(da, c.ln1, p.ln1_g, grad.ln1_g, grad.ln1_b);
    for (std::size_t i = 0; i < du.size(); ++i) {
        du.data[i] += dh1.data[i];
    }

    // Time bias is broadcast to every row.
    Matrix<T> dtb(1, du.cols);
    add_column_sums(du, dtb);
    matmul_tn_acc(c.temb, dtb, grad.time_w);
    for (std::size_t i = 0; i < dtb.size(); ++i) {
        grad.time_b.data[i] += dtb.data[i];
    }
    return du;
}

}  // namespace derain
