// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/attention_control.hpp"
#include "derain/denoiser.hpp"
#include "derain/guidance.hpp"
#include "derain/inversion.hpp"
#include "derain/schedule.hpp"
#include "derain/tensor.hpp"
#include "derain/text.hpp"

namespace derain {

enum class InvertWith { null_prompt, concept_prompt };

inline std::string to_string(InvertWith w) { return w == InvertWith::null_prompt ? "null" : "concept"; }

inline InvertWith parse_invert_with(const std::string& s) {
    if (s == "null") return InvertWith::null_prompt;
    if (s == "concept") return InvertWith::concept_prompt;
    throw std::invalid_argument("--invert-with must be 'null' or 'concept', got '" + s + "'");
}

inline constexpr double kDefaultLambda = 15.0;
inline constexpr double kDefaultLambdaSwitched = 25.0;
inline constexpr std::size_t kDefaultSkip = 40;

struct DerainOptions {
    std::optional<double> lambda;  // unset: 15, or 25 with attention switching
    std::size_t t_skip = kDefaultSkip;
    PromptMode prompt_mode = PromptMode::contextual;
    std::vector<int> concept_tokens = {vocab::light, vocab::rain};
    bool attention_switch = true;
    std::optional<std::set<std::size_t>> blocks;          // unset: default for the model depth
    std::optional<std::set<std::size_t>> blocks_initial;  // unset: default for the model depth
    InvertWith invert_with = InvertWith::null_prompt;
    // Invert with the concept and reconstruct with the null prompt, unguided.
    bool implicit = false;
    std::uint64_t seed = 0;

    double effective_lambda() const {
        return lambda.value_or(attention_switch ? kDefaultLambdaSwitched : kDefaultLambda);
    }
};

// Simple and mean-embedding modes use the concept's last word; contextual
// uses the full concept prompt.
template <class T>
TextCondition negative_condition_for(const DerainOptions& opt, const Denoiser<T>& model,
                                     const std::vector<std::vector<int>>& corpus) {
    return build_negative_condition(opt.prompt_mode, opt.concept_tokens, model, corpus);
}

template <class T>
AttentionControl<T> control_for(const DerainOptions& opt, std::size_t num_blocks) {
    auto [all, initial] = default_block_sets(num_blocks);
    std::set<std::size_t> b = opt.blocks.value_or(all);
    std::set<std::size_t> bi = opt.blocks_initial.value_or(opt.blocks ? std::set<std::size_t>{} : initial);
    for (std::size_t x : b) {
        if (x >= num_blocks) {
            throw std::invalid_argument("block index " + std::to_string(x) + " out of range for a " +
                                        std::to_string(num_blocks) + "-block model");
        }
    }
    return AttentionControl<T>(std::move(b), std::move(bi));
}

inline void validate(const DerainOptions& opt, const NoiseSchedule& s, std::size_t num_blocks) {
    if (!(opt.effective_lambda() >= 0.0)) {
        throw std::invalid_argument("lambda must be nonnegative");
    }
    if (opt.t_skip > s.num_steps) {
        throw std::invalid_argument("t_skip " + std::to_string(opt.t_skip) + " exceeds the " +
                                    std::to_string(s.num_steps) + " inference steps");
    }
    if (opt.concept_tokens.empty()) {
        throw std::invalid_argument("empty concept prompt");
    }
    if (opt.attention_switch) {
        control_for<double>(opt, num_blocks);
    }
}

template <class T>
struct DerainResult {
    Video<double> output;  // pixel space
    InversionRecord<T> record;
    TextCondition negative;
};

// Full pipeline on a pixel-space video: invert, then reconstruct with
// negative-prompt guidance and optional attention switching.
template <class T>
DerainResult<T> derain_video(const Denoiser<T>& model, const Video<double>& rainy_pixels, const DerainOptions& opt,
                             const NoiseSchedule& s, const std::vector<std::vector<int>>& corpus = {}) {
    validate(opt, s, model.config().num_blocks);
    const std::size_t L = model.config().text_len;
    const TextCondition null_cond = null_condition(L);
    DerainResult<T> r;
    r.negative = negative_condition_for(opt, model, corpus);
    const Video<T> x0 = to_latent(rainy_pixels).template cast<T>();

    if (opt.implicit) {
        r.record = ddpm_invert(x0, r.negative, model, s, opt.seed);
        r.output = to_pixels(reconstruct(r.record, null_cond, model, s).template cast<double>());
        return r;
    }
    const TextCondition& inv_cond = opt.invert_with == InvertWith::null_prompt ? null_cond : r.negative;
    r.record = ddpm_invert(x0, inv_cond, model, s, opt.seed);

    GuidanceSpec g;
    g.lambda = opt.effective_lambda();
    g.t_skip = opt.t_skip;
    g.negative_condition = r.negative;
    g.null_condition = null_cond;
    g.steps = s.num_steps;
    std::optional<AttentionControl<T>> control;
    if (opt.attention_switch) {
        control = control_for<T>(opt, model.config().num_blocks);
    }
    r.output = to_pixels(
        reconstruct(r.record, null_cond, model, s, &g, control ? &*control : nullptr).template cast<double>());
    return r;
}

// Pure reconstruction (no guidance) of the same inversion, for comparisons.
template <class T>
Video<double> pure_reconstruction(const Denoiser<T>& model, const Video<double>& pixels, std::uint64_t seed,
                                  const NoiseSchedule& s) {
    const TextCondition null_cond = null_condition(model.config().text_len);
    const InversionRecord<T> rec = ddpm_invert(to_latent(pixels).template cast<T>(), null_cond, model, s, seed);
    return to_pixels(reconstruct(rec, null_cond, model, s).template cast<double>());
}

}  // namespace derain
