// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "derain/block.hpp"

namespace derain {

enum class AttnMode { off, capture, switch_kv };

inline std::string to_string(AttnMode m) {
    switch (m) {
        case AttnMode::off: return "off";
        case AttnMode::capture: return "capture";
        case AttnMode::switch_kv: return "switch";
    }
    return "?";
}

// Stateful controller threaded through denoiser forward passes.
//
// In capture mode the text rows entering every block of `blocks` are stored
// under (block, step). In switch mode those blocks build their text K/V from
// the stored null-pass text features spliced with the current image features;
// blocks of `initial_blocks` additionally run a plain block application to
// keep the conditional text stream. Off mode is a hook-free forward.
template <class T>
class AttentionControl {
public:
    AttentionControl() = default;
    AttentionControl(std::set<std::size_t> blocks, std::set<std::size_t> initial_blocks)
        : blocks_(std::move(blocks)), initial_(std::move(initial_blocks)) {
        if (!std::includes(blocks_.begin(), blocks_.end(), initial_.begin(), initial_.end())) {
            throw std::invalid_argument("initial block set must be a subset of the block set");
        }
    }

    AttnMode mode() const { return mode_; }
    void set_mode(AttnMode m) { mode_ = m; }

    const std::set<std::size_t>& blocks() const { return blocks_; }
    const std::set<std::size_t>& initial_blocks() const { return initial_; }
    bool in_blocks(std::size_t b) const { return blocks_.contains(b); }
    bool in_initial(std::size_t b) const { return initial_.contains(b); }

    void capture_null_text(std::size_t block, const Matrix<T>& h_text, std::size_t t) {
        if (mode_ != AttnMode::capture) {
            throw std::logic_error("capture_null_text called in " + to_string(mode_) + " mode");
        }
        buffer_[{block, t}] = h_text;
    }

    bool has_null_text(std::size_t block, std::size_t t) const { return buffer_.contains({block, t}); }

    const Matrix<T>& null_text(std::size_t block, std::size_t t) const {
        auto it = buffer_.find({block, t});
        if (it == buffer_.end()) {
            throw std::runtime_error("no null-pass text features buffered for block " + std::to_string(block) +
                                     " at step " + std::to_string(t));
        }
        return it->second;
    }

    void clear() { buffer_.clear(); }
    std::size_t buffered() const { return buffer_.size(); }

    // Number of block attention evaluations performed under this controller.
    std::size_t attention_evaluations() const { return attention_evals_; }
    void count_attention() { ++attention_evals_; }
    void reset_counters() { attention_evals_ = 0; }

private:
    AttnMode mode_ = AttnMode::off;
    std::set<std::size_t> blocks_;
    std::set<std::size_t> initial_;
    std::map<std::pair<std::size_t, std::size_t>, Matrix<T>> buffer_;
    std::size_t attention_evals_ = 0;
};

// Default block sets for an n-block model: the leading sixth and the trailing
// half of the stack, with the leading segment as the split-attention set.
inline std::pair<std::set<std::size_t>, std::set<std::size_t>> default_block_sets(std::size_t num_blocks) {
    std::set<std::size_t> all, initial;
    const std::size_t lead = std::max<std::size_t>(1, num_blocks / 6);
    const std::size_t tail_start = num_blocks - num_blocks / 2;
    for (std::size_t b = 0; b < lead; ++b) {
        all.insert(b);
        initial.insert(b);
    }
    for (std::size_t b = tail_start; b < num_blocks; ++b) {
        all.insert(b);
    }
    return {all, initial};
}

template <class T>
AttentionControl<T> make_default_control(std::size_t num_blocks) {
    auto [all, initial] = default_block_sets(num_blocks);
    return AttentionControl<T>(all, initial);
}

// K, V for the joint sequence built from h_text_null | h_img_cond: text rows
// from the buffered null-pass features, image rows from the conditional pass.
template <class T>
std::pair<Matrix<T>, Matrix<T>> switched_kv(std::size_t block, const Matrix<T>& h_text_cond, const Matrix<T>& h_img_cond,
                                            const BlockParams<T>& params, const Matrix<T>& temb, std::size_t t,
                                            const AttentionControl<T>& control) {
    if (control.mode() != AttnMode::switch_kv) {
        throw std::logic_error("switched_kv requires switch mode");
    }
    if (!control.in_blocks(block)) {
        throw std::invalid_argument("block " + std::to_string(block) + " is not in the switching set");
    }
    const Matrix<T>& h_text_null = control.null_text(block, t);
    if (!h_text_null.same_shape(h_text_cond)) {
        throw std::invalid_argument("switched_kv: buffered text features have the wrong shape");
    }
    const Matrix<T> tb = block_time_bias(temb, params);
    const Matrix<T> spliced = concat_rows(h_text_null, h_img_cond);
    const Matrix<T> a = block_attention_input(spliced, tb, params);
    return {linear(a, params.wk, params.bk), linear(a, params.wv, params.bv)};
}

// Block application with text K/V switched to the null-pass features.
template <class T>
Matrix<T> switched_block_forward(std::size_t block, const Matrix<T>& h, const Matrix<T>& temb,
                                 const BlockParams<T>& params, std::size_t heads, std::size_t t,
                                 AttentionControl<T>& control) {
    const Matrix<T>& null_text = control.null_text(block, t);
    control.count_attention();
    return block_forward(h, temb, params, heads, &null_text);
}

// Split attention for blocks of the initial set: text rows of the output come
// from a plain block application on the conditional inputs, image rows from
// the switched application. Two attention evaluations.
template <class T>
std::pair<Matrix<T>, Matrix<T>> split_block_forward(std::size_t block, const Matrix<T>& h_text_cond,
                                                    const Matrix<T>& h_img_cond, const BlockParams<T>& params,
                                                    const Matrix<T>& temb, std::size_t heads, std::size_t t,
                                                    AttentionControl<T>& control) {
    if (!control.in_initial(block)) {
        throw std::invalid_argument("block " + std::to_string(block) + " is not in the initial set");
    }
    const Matrix<T> h = concat_rows(h_text_cond, h_img_cond);
    const std::size_t text_len = h_text_cond.rows;

    control.count_attention();
    const Matrix<T> plain = block_forward(h, temb, params, heads);
    const Matrix<T> switched = switched_block_forward(block, h, temb, params, heads, t, control);
    return {slice_rows(plain, 0, text_len), slice_rows(switched, text_len, switched.rows)};
}

}  // namespace derain
