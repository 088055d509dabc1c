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

#include "derain/attention_control.hpp"
#include "derain/block.hpp"
#include "derain/tensor.hpp"
#include "derain/text.hpp"

namespace derain {

template <class T>
struct DenoiserParams {
    Matrix<T> tok_emb;   // vocab x dim
    Matrix<T> text_pos;  // text_len x dim
    Matrix<T> ctx_mix;   // dim x dim, mixes the prompt's mean token embedding into every slot
    Matrix<T> patch_w;   // patch_dim x dim
    Matrix<T> patch_b;   // 1 x dim
    Matrix<T> img_pos;   // img_tokens x dim
    std::vector<BlockParams<T>> blocks;
    Matrix<T> lnf_g, lnf_b;
    Matrix<T> out_w;  // dim x patch_dim
    Matrix<T> out_b;
    // Input-to-output skip per patch, scaled per channel by a gate computed
    // from the time embedding: out += (patches skip_w) * (temb gate_w + gate_b).
    Matrix<T> skip_w;       // patch_dim x patch_dim
    Matrix<T> skip_gate_w;  // time_dim x patch_dim
    Matrix<T> skip_gate_b;  // 1 x patch_dim

    // Zero weights with unit norm gains: the starting point for initialization.
    static DenoiserParams identity(const DenoiserConfig& c) {
        DenoiserParams p;
        p.tok_emb = Matrix<T>(vocab::size, c.dim);
        p.text_pos = Matrix<T>(c.text_len, c.dim);
        p.ctx_mix = Matrix<T>(c.dim, c.dim);
        p.patch_w = Matrix<T>(c.patch_dim(), c.dim);
        p.patch_b = Matrix<T>(1, c.dim);
        p.img_pos = Matrix<T>(c.img_tokens(), c.dim);
        p.blocks.assign(c.num_blocks, BlockParams<T>::identity(c));
        p.lnf_g = Matrix<T>(1, c.dim, T(1));
        p.lnf_b = Matrix<T>(1, c.dim);
        p.out_w = Matrix<T>(c.dim, c.patch_dim());
        p.out_b = Matrix<T>(1, c.patch_dim());
        p.skip_w = Matrix<T>(c.patch_dim(), c.patch_dim());
        p.skip_gate_w = Matrix<T>(c.time_dim, c.patch_dim());
        p.skip_gate_b = Matrix<T>(1, c.patch_dim());
        return p;
    }

    // All zeros, for gradient and optimizer-moment buffers.
    static DenoiserParams zeros(const DenoiserConfig& c) {
        DenoiserParams p = identity(c);
        p.visit([](const std::string&, Matrix<T>& m) { m.zero(); });
        return p;
    }

    // Visits every tensor with a stable, unique name.
    template <class F>
    void visit(F&& f) {
        f(std::string("tok_emb"), tok_emb);
        f(std::string("text_pos"), text_pos);
        f(std::string("ctx_mix"), ctx_mix);
        f(std::string("patch_w"), patch_w);
        f(std::string("patch_b"), patch_b);
        f(std::string("img_pos"), img_pos);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::string prefix = "blocks." + std::to_string(b) + ".";
            blocks[b].visit([&](const char* n, Matrix<T>& m) { f(prefix + n, m); });
        }
        f(std::string("lnf_g"), lnf_g);
        f(std::string("lnf_b"), lnf_b);
        f(std::string("out_w"), out_w);
        f(std::string("out_b"), out_b);
        f(std::string("skip_w"), skip_w);
        f(std::string("skip_gate_w"), skip_gate_w);
        f(std::string("skip_gate_b"), skip_gate_b);
    }
    template <class F>
    void visit(F&& f) const {
        const_cast<DenoiserParams*>(this)->visit(
            [&](const std::string& n, Matrix<T>& m) { f(n, static_cast<const Matrix<T>&>(m)); });
    }

    std::size_t count() const {
        std::size_t n = 0;
        visit([&](const std::string&, const Matrix<T>& m) { n += m.size(); });
        return n;
    }

    template <class U>
    DenoiserParams<U> cast() const {
        DenoiserParams<U> out;
        out.blocks.resize(blocks.size());
        std::vector<const Matrix<T>*> src;
        visit([&](const std::string&, const Matrix<T>& m) { src.push_back(&m); });
        std::size_t i = 0;
        out.visit([&](const std::string&, Matrix<U>& m) { m = src[i++]->template cast<U>(); });
        return out;
    }

    bool all_finite() const {
        bool ok = true;
        visit([&](const std::string&, const Matrix<T>& m) {
            for (T v : m.data) {
                ok = ok && std::isfinite(static_cast<double>(v));
            }
        });
        return ok;
    }
};

// Per-forward activations retained for the gradient pass.
template <class T>
struct ForwardCache {
    Matrix<T> patches;  // img_tokens x patch_dim
    std::vector<int> tokens;
    Matrix<T> ctx_mean;  // 1 x dim
    Matrix<T> temb;
    std::vector<BlockCache<T>> blocks;
    LayerNormCache<T> lnf;
    Matrix<T> lnf_out;
    Matrix<T> skip_proj;  // patches x skip_w
    Matrix<T> skip_gate;  // 1 x patch_dim
};

// Toy joint-attention diffusion transformer predicting the added noise.
template <class T>
class Denoiser {
public:
    Denoiser() = default;
    explicit Denoiser(DenoiserConfig config) : config_(config), params_(DenoiserParams<T>::identity(config)) {
        config_.validate();
    }
    Denoiser(DenoiserConfig config, DenoiserParams<T> params) : config_(config), params_(std::move(params)) {
        config_.validate();
        check_param_shapes();
        initialized_ = true;
    }

    static Denoiser initialized(const DenoiserConfig& config, std::uint64_t seed) {
        Denoiser d(config);
        d.init_weights(seed);
        return d;
    }

    const DenoiserConfig& config() const { return config_; }
    // Maps step indices of a schedule with a different step count onto the
    // training-time levels (train_steps / steps).
    void set_timestep_scale(double scale) {
        if (!(scale > 0.0)) {
            throw std::invalid_argument("timestep scale must be positive");
        }
        config_.timestep_scale = scale;
    }
    const DenoiserParams<T>& params() const { return params_; }
    DenoiserParams<T>& mutable_params() { return params_; }
    bool is_initialized() const { return initialized_; }

    template <class U>
    Denoiser<U> cast() const {
        return Denoiser<U>(config_, params_.template cast<U>());
    }

    void init_weights(std::uint64_t seed) {
        Rng rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        const double d = static_cast<double>(config_.dim);
        auto fill = [&](Matrix<T>& m, double stddev) {
            for (auto& v : m.data) {
                v = static_cast<T>(normal(rng) * stddev);
            }
        };
        params_ = DenoiserParams<T>::identity(config_);
        fill(params_.tok_emb, 1.0);
        fill(params_.text_pos, 0.1);
        fill(params_.ctx_mix, 0.5 / std::sqrt(d));
        fill(params_.patch_w, 1.0 / std::sqrt(static_cast<double>(config_.patch_dim())));
        init_positions();
        const double depth_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.num_blocks));
        for (auto& b : params_.blocks) {
            fill(b.time_w, 1.0 / std::sqrt(static_cast<double>(config_.time_dim)));
            fill(b.wq, 1.0 / std::sqrt(d));
            fill(b.wk, 1.0 / std::sqrt(d));
            fill(b.wv, 1.0 / std::sqrt(d));
            fill(b.wo, depth_scale / std::sqrt(d));
            fill(b.w1, 1.0 / std::sqrt(d));
            fill(b.w2, depth_scale / std::sqrt(static_cast<double>(config_.hidden_dim())));
        }
        fill(params_.out_w, 0.1 / std::sqrt(d));
        for (std::size_t i = 0; i < config_.patch_dim(); ++i) {
            params_.skip_w(i, i) = T(1);
        }
        initialized_ = true;
    }

    // Text features: token embedding + slot position + a context term shared
    // by all slots (the prompt's mean token embedding through ctx_mix), so the
    // same word encodes differently in different prompts. Override slots take
    // their supplied feature verbatim.
    Matrix<T> encode_text(const TextCondition& cond, ForwardCache<T>* cache = nullptr) const {
        const std::size_t L = config_.text_len, D = config_.dim;
        if (cond.token_ids.size() != L) {
            throw std::invalid_argument("condition has " + std::to_string(cond.token_ids.size()) +
                                        " tokens, model expects " + std::to_string(L));
        }
        std::vector<int> ids(L);
        for (std::size_t i = 0; i < L; ++i) {
            const int id = cond.token_ids[i];
            if (id < 0 || id >= vocab::size) {
                throw std::invalid_argument("unknown token id " + std::to_string(id));
            }
            if (id == vocab::pseudo && !cond.embedding_overrides.contains(i)) {
                throw std::invalid_argument("pseudo-token slot " + std::to_string(i) + " has no feature");
            }
            ids[i] = id == vocab::pseudo ? vocab::pad : id;
        }
        Matrix<T> mean(1, D);
        for (std::size_t i = 0; i < L; ++i) {
            const T* e = params_.tok_emb.row(static_cast<std::size_t>(ids[i]));
            for (std::size_t c = 0; c < D; ++c) {
                mean.data[c] += e[c];
            }
        }
        for (auto& v : mean.data) {
            v /= static_cast<T>(L);
        }
        const Matrix<T> ctx = matmul(mean, params_.ctx_mix);
        Matrix<T> text(L, D);
        for (std::size_t i = 0; i < L; ++i) {
            const T* e = params_.tok_emb.row(static_cast<std::size_t>(ids[i]));
            const T* pe = params_.text_pos.row(i);
            T* o = text.row(i);
            for (std::size_t c = 0; c < D; ++c) {
                o[c] = e[c] + pe[c] + ctx.data[c];
            }
        }
        for (const auto& [slot, feature] : cond.embedding_overrides) {
            if (slot >= L || feature.size() != D) {
                throw std::invalid_argument("embedding override has the wrong slot or size");
            }
            for (std::size_t c = 0; c < D; ++c) {
                text(slot, c) = static_cast<T>(feature[c]);
            }
        }
        if (cache) {
            cache->tokens = ids;
            cache->ctx_mean = mean;
        }
        return text;
    }

    Matrix<T> patchify(const Video<T>& video) const {
        check_video(video);
        const std::size_t p = config_.patch, gh = config_.grid_h(), gw = config_.grid_w();
        Matrix<T> out(config_.img_tokens(), config_.patch_dim());
        for (std::size_t f = 0; f < config_.frames; ++f) {
            for (std::size_t gy = 0; gy < gh; ++gy) {
                for (std::size_t gx = 0; gx < gw; ++gx) {
                    T* row = out.row((f * gh + gy) * gw + gx);
                    for (std::size_t c = 0; c < config_.channels; ++c) {
                        for (std::size_t dy = 0; dy < p; ++dy) {
                            for (std::size_t dx = 0; dx < p; ++dx) {
                                row[(c * p + dy) * p + dx] = video.at(f, c, gy * p + dy, gx * p + dx);
                            }
                        }
                    }
                }
            }
        }
        return out;
    }

    Video<T> unpatchify(const Matrix<T>& patches) const {
        const std::size_t p = config_.patch, gh = config_.grid_h(), gw = config_.grid_w();
        Video<T> out(config_.video_shape());
        for (std::size_t f = 0; f < config_.frames; ++f) {
            for (std::size_t gy = 0; gy < gh; ++gy) {
                for (std::size_t gx = 0; gx < gw; ++gx) {
                    const T* row = patches.row((f * gh + gy) * gw + gx);
                    for (std::size_t c = 0; c < config_.channels; ++c) {
                        for (std::size_t dy = 0; dy < p; ++dy) {
                            for (std::size_t dx = 0; dx < p; ++dx) {
                                out.at(f, c, gy * p + dy, gx * p + dx) = row[(c * p + dy) * p + dx];
                            }
                        }
                    }
                }
            }
        }
        return out;
    }

    // Image part depends only on the video; text part only on the condition.
    // The step index enters per block, not here.
    HiddenState<T> embed(const TextCondition& cond, const Video<T>& video, std::size_t /*t*/,
                         ForwardCache<T>* cache = nullptr) const {
        require_initialized();
        HiddenState<T> h;
        h.text_part = encode_text(cond, cache);
        Matrix<T> patches = patchify(video);
        h.img_part = linear(patches, params_.patch_w, params_.patch_b);
        for (std::size_t i = 0; i < h.img_part.size(); ++i) {
            h.img_part.data[i] += params_.img_pos.data[i];
        }
        if (cache) {
            cache->patches = std::move(patches);
        }
        return h;
    }

    Matrix<T> time_embedding(std::size_t t) const {
        return timestep_features<T>(static_cast<double>(t) * config_.timestep_scale, config_.time_dim);
    }

    // Runs block `b` on the joint state, honouring the controller.
    Matrix<T> apply_block(std::size_t b, const Matrix<T>& h, const Matrix<T>& temb, std::size_t t,
                          AttentionControl<T>* control) const {
        const BlockParams<T>& p = params_.blocks[b];
        if (!control || control->mode() == AttnMode::off || !control->in_blocks(b)) {
            if (control) {
                control->count_attention();
            }
            return block_forward(h, temb, p, config_.heads);
        }
        const std::size_t L = config_.text_len;
        if (control->mode() == AttnMode::capture) {
            control->capture_null_text(b, slice_rows(h, 0, L), t);
            control->count_attention();
            return block_forward(h, temb, p, config_.heads);
        }
        if (control->in_initial(b)) {
            auto [text, img] = split_block_forward(b, slice_rows(h, 0, L), slice_rows(h, L, h.rows), p, temb,
                                                   config_.heads, t, *control);
            return concat_rows(text, img);
        }
        return switched_block_forward(b, h, temb, p, config_.heads, t, *control);
    }

    // Joint state entering each block (index b) and leaving the last one
    // (index num_blocks). Used by tests that inspect block boundaries.
    std::vector<Matrix<T>> trace(const Video<T>& x_t, std::size_t t, const TextCondition& cond,
                                 AttentionControl<T>* control = nullptr) const {
        const HiddenState<T> h0 = embed(cond, x_t, t);
        const Matrix<T> temb = time_embedding(t);
        std::vector<Matrix<T>> states{h0.combined()};
        for (std::size_t b = 0; b < config_.num_blocks; ++b) {
            states.push_back(apply_block(b, states.back(), temb, t, control));
        }
        return states;
    }

    Video<T> predict_eps(const Video<T>& x_t, std::size_t t, const TextCondition& cond,
                         AttentionControl<T>* control = nullptr) const {
        const HiddenState<T> h0 = embed(cond, x_t, t);
        const Matrix<T> temb = time_embedding(t);
        Matrix<T> h = h0.combined();
        for (std::size_t b = 0; b < config_.num_blocks; ++b) {
            h = apply_block(b, h, temb, t, control);
        }
        return head(h, x_t, temb, nullptr);
    }

    // Hook-free forward retaining activations for backward().
    Video<T> forward_train(const Video<T>& x_t, std::size_t t, const TextCondition& cond, ForwardCache<T>& cache) const {
        const HiddenState<T> h0 = embed(cond, x_t, t, &cache);
        cache.temb = time_embedding(t);
        cache.blocks.assign(config_.num_blocks, BlockCache<T>());
        Matrix<T> h = h0.combined();
        for (std::size_t b = 0; b < config_.num_blocks; ++b) {
            h = block_forward(h, cache.temb, params_.blocks[b], config_.heads,
                              static_cast<const Matrix<T>*>(nullptr), &cache.blocks[b]);
        }
        return head(h, x_t, cache.temb, &cache);
    }

    // Accumulates d(loss)/d(params) given d(loss)/d(eps_pred).
    void backward(const Video<T>& d_eps, const ForwardCache<T>& cache, DenoiserParams<T>& grad) const {
        const std::size_t L = config_.text_len, D = config_.dim;
        const Matrix<T> d_out = patchify(d_eps);
        matmul_tn_acc(cache.lnf_out, d_out, grad.out_w);
        add_column_sums(d_out, grad.out_b);

        Matrix<T> d_skip(d_out.rows, d_out.cols);
        Matrix<T> d_gate(1, d_out.cols);
        for (std::size_t r = 0; r < d_out.rows; ++r) {
            for (std::size_t c = 0; c < d_out.cols; ++c) {
                d_skip(r, c) = d_out(r, c) * cache.skip_gate.data[c];
                d_gate.data[c] += d_out(r, c) * cache.skip_proj(r, c);
            }
        }
        matmul_tn_acc(cache.patches, d_skip, grad.skip_w);
        matmul_tn_acc(cache.temb, d_gate, grad.skip_gate_w);
        add_column_sums(d_gate, grad.skip_gate_b);
        const Matrix<T> d_lnf = matmul(d_out, transpose(params_.out_w));
        const Matrix<T> d_img = layer_norm_backward(d_lnf, cache.lnf, params_.lnf_g, grad.lnf_g, grad.lnf_b);

        Matrix<T> dh(config_.tokens(), D);
        std::copy(d_img.data.begin(), d_img.data.end(), dh.row(L));
        for (std::size_t b = config_.num_blocks; b-- > 0;) {
            dh = block_backward(dh, cache.blocks[b], params_.blocks[b], grad.blocks[b], config_.heads);
        }

        // Image embedding.
        const Matrix<T> d_img0 = slice_rows(dh, L, dh.rows);
        matmul_tn_acc(cache.patches, d_img0, grad.patch_w);
        add_column_sums(d_img0, grad.patch_b);
        for (std::size_t i = 0; i < d_img0.size(); ++i) {
            grad.img_pos.data[i] += d_img0.data[i];
        }

        // Text encoder.
        Matrix<T> d_ctx(1, D);
        for (std::size_t i = 0; i < L; ++i) {
            const T* d = dh.row(i);
            T* ge = grad.tok_emb.row(static_cast<std::size_t>(cache.tokens[i]));
            T* gp = grad.text_pos.row(i);
            for (std::size_t c = 0; c < D; ++c) {
                ge[c] += d[c];
                gp[c] += d[c];
                d_ctx.data[c] += d[c];
            }
        }
        matmul_tn_acc(cache.ctx_mean, d_ctx, grad.ctx_mix);
        const Matrix<T> d_mean = matmul(d_ctx, transpose(params_.ctx_mix));
        const T inv_l = T(1) / static_cast<T>(L);
        for (std::size_t i = 0; i < L; ++i) {
            T* ge = grad.tok_emb.row(static_cast<std::size_t>(cache.tokens[i]));
            for (std::size_t c = 0; c < D; ++c) {
                ge[c] += d_mean.data[c] * inv_l;
            }
        }
    }

private:
    Video<T> head(const Matrix<T>& h, const Video<T>& x_t, const Matrix<T>& temb, ForwardCache<T>* cache) const {
        const Matrix<T> img = slice_rows(h, config_.text_len, h.rows);
        Matrix<T> n = layer_norm(img, params_.lnf_g, params_.lnf_b, cache ? &cache->lnf : nullptr);
        Matrix<T> out = linear(n, params_.out_w, params_.out_b);
        Matrix<T> skip = matmul(patchify(x_t), params_.skip_w);
        Matrix<T> gate = linear(temb, params_.skip_gate_w, params_.skip_gate_b);
        for (std::size_t r = 0; r < out.rows; ++r) {
            T* o = out.row(r);
            const T* sk = skip.row(r);
            for (std::size_t c = 0; c < out.cols; ++c) {
                o[c] += sk[c] * gate.data[c];
            }
        }
        if (cache) {
            cache->lnf_out = std::move(n);
            cache->skip_proj = std::move(skip);
            cache->skip_gate = std::move(gate);
        }
        return unpatchify(out);
    }

    // Separable 3-D sinusoid over (frame, row, column) so tokens start out
    // distinguishable; trained afterwards.
    void init_positions() {
        const std::size_t D = config_.dim, gh = config_.grid_h(), gw = config_.grid_w();
        const std::size_t third = D / 3;
        for (std::size_t f = 0; f < config_.frames; ++f) {
            for (std::size_t y = 0; y < gh; ++y) {
                for (std::size_t x = 0; x < gw; ++x) {
                    T* row = params_.img_pos.row((f * gh + y) * gw + x);
                    const double coords[3] = {static_cast<double>(f), static_cast<double>(y), static_cast<double>(x)};
                    for (std::size_t c = 0; c < D; ++c) {
                        const std::size_t axis = std::min<std::size_t>(c / std::max<std::size_t>(third, 1), 2);
                        const std::size_t k = c % std::max<std::size_t>(third, 1);
                        const double freq = std::pow(2.0, -static_cast<double>(k / 2)) * std::numbers::pi / 2.0;
                        const double v = (k % 2 == 0) ? std::sin(coords[axis] * freq) : std::cos(coords[axis] * freq);
                        row[c] = static_cast<T>(0.5 * v);
                    }
                }
            }
        }
    }

    void check_video(const Video<T>& v) const {
        if (v.empty()) {
            throw std::invalid_argument("empty video");
        }
        if (!(v.shape == config_.video_shape())) {
            throw std::invalid_argument("video shape " + to_string(v.shape) + " does not match model " +
                                        to_string(config_.video_shape()));
        }
    }

    void require_initialized() const {
        if (!initialized_) {
            throw std::logic_error("denoiser weights are not initialized");
        }
    }

    void check_param_shapes() const {
        const DenoiserParams<T> ref = DenoiserParams<T>::zeros(config_);
        std::vector<std::pair<std::size_t, std::size_t>> shapes;
        ref.visit([&](const std::string&, const Matrix<T>& m) { shapes.emplace_back(m.rows, m.cols); });
        std::size_t i = 0;
        bool ok = params_.blocks.size() == config_.num_blocks;
        if (ok) {
            params_.visit([&](const std::string&, const Matrix<T>& m) {
                ok = ok && i < shapes.size() && shapes[i] == std::pair{m.rows, m.cols} && m.size() == m.rows * m.cols;
                ++i;
            });
        }
        if (!ok || i != shapes.size()) {
            throw std::invalid_argument("parameter shapes do not match the configuration");
        }
    }

    DenoiserConfig config_;
    DenoiserParams<T> params_;
    bool initialized_ = false;
};

// Attention-sublayer output of block `b` on joint state `h`, honouring
// switching when the controller asks for it. Exposed for direct testing.
template <class T>
HiddenState<T> joint_attention(const HiddenState<T>& h, const BlockParams<T>& p, const Matrix<T>& temb,
                               std::size_t heads, const AttentionControl<T>* control, std::size_t block,
                               std::size_t t) {
    const Matrix<T> joint = h.combined();
    const Matrix<T> tb = block_time_bias(temb, p);
    const Matrix<T> a = block_attention_input(joint, tb, p);
    const Matrix<T>* text_source = nullptr;
    if (control && control->mode() == AttnMode::switch_kv && control->in_blocks(block)) {
        text_source = &control->null_text(block, t);
    }
    return HiddenState<T>::split(attention_sublayer(a, tb, p, heads, text_source), h.text_part.rows);
}

}  // namespace derain
