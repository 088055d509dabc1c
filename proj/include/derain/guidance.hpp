// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "derain/attention_control.hpp"
#include "derain/denoiser.hpp"
#include "derain/schedule.hpp"
#include "derain/text.hpp"

namespace derain {

struct GuidanceSpec {
    double lambda = 15.0;
    std::size_t t_skip = 40;  // initial denoising steps that follow the pure reconstruction path
    TextCondition negative_condition;
    TextCondition null_condition;
    std::size_t steps = 100;

    void validate() const {
        if (!(lambda >= 0.0)) {
            throw std::invalid_argument("guidance lambda must be nonnegative");
        }
        if (t_skip > steps) {
            throw std::invalid_argument("t_skip exceeds the number of steps");
        }
        if (lambda > 0.0 && negative_condition == null_condition) {
            std::cerr << "warning: negative condition equals the null condition; guidance has no effect\n";
        }
    }

    // Step t (counted down from `steps`) is guided once t_skip denoising steps
    // have been taken.
    bool guided(std::size_t t) const { return steps - t >= t_skip; }
};

// eps_null + lambda * (eps_null - eps_cond)
template <class T>
Video<T> guided_eps(const Video<T>& eps_null, const Video<T>& eps_cond, double lambda) {
    require_same_shape(eps_null, eps_cond, "guided_eps");
    Video<T> out(eps_null.shape);
    const T l = static_cast<T>(lambda);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = eps_null.data[i] + l * (eps_null.data[i] - eps_cond.data[i]);
    }
    return out;
}

// One guided noise estimate. The null pass runs first; when `control` is
// given it captures that pass's text features and the negative-prompt pass
// consumes them through attention switching.
template <class T>
Video<T> dual_pass(const Video<T>& x_t, std::size_t t, const GuidanceSpec& spec, const Denoiser<T>& model,
                   AttentionControl<T>* control = nullptr) {
    if (t < 1 || t > spec.steps) {
        throw std::out_of_range("dual_pass: step outside schedule");
    }
    if (!spec.guided(t)) {
        return model.predict_eps(x_t, t, spec.null_condition);
    }
    if (!control) {
        const Video<T> eps_null = model.predict_eps(x_t, t, spec.null_condition);
        const Video<T> eps_cond = model.predict_eps(x_t, t, spec.negative_condition);
        return guided_eps(eps_null, eps_cond, spec.lambda);
    }
    control->clear();
    control->set_mode(AttnMode::capture);
    const Video<T> eps_null = model.predict_eps(x_t, t, spec.null_condition, control);
    control->set_mode(AttnMode::switch_kv);
    const Video<T> eps_cond = model.predict_eps(x_t, t, spec.negative_condition, control);
    control->set_mode(AttnMode::off);
    control->clear();
    return guided_eps(eps_null, eps_cond, spec.lambda);
}

enum class PromptMode { simple, mean_embedding, contextual };

inline std::string to_string(PromptMode m) {
    switch (m) {
        case PromptMode::simple: return "simple";
        case PromptMode::mean_embedding: return "mean";
        case PromptMode::contextual: return "contextual";
    }
    return "?";
}

inline PromptMode parse_prompt_mode(const std::string& s) {
    if (s == "simple") return PromptMode::simple;
    if (s == "mean" || s == "mean_embedding") return PromptMode::mean_embedding;
    if (s == "contextual") return PromptMode::contextual;
    throw std::invalid_argument("unknown prompt mode '" + s + "'");
}

// Negative condition for a concept.
//   simple:         the concept word alone.
//   mean_embedding: mean of the concept word's encoded features over every
//                   corpus caption containing it, placed as a pseudo-token.
//   contextual:     the full concept prompt verbatim.
template <class T>
TextCondition build_negative_condition(PromptMode mode, const std::vector<int>& concept_tokens, const Denoiser<T>& model,
                                       const std::vector<std::vector<int>>& corpus = {}) {
    const std::size_t L = model.config().text_len;
    if (concept_tokens.empty()) {
        throw std::invalid_argument("empty concept");
    }
    for (int id : concept_tokens) {
        if (id == vocab::pad || id == vocab::null || id == vocab::pseudo) {
            throw std::invalid_argument("concept must consist of content words");
        }
        vocab::word(id);
    }
    if (mode == PromptMode::contextual) {
        return make_condition(concept_tokens, L);
    }
    const int word = concept_tokens.back();
    if (mode == PromptMode::simple) {
        return make_condition({word}, L);
    }
    std::vector<double> mean(model.config().dim, 0.0);
    std::size_t count = 0;
    for (const auto& caption : corpus) {
        const TextCondition c = make_condition(caption, L);
        const Matrix<T> feats = model.encode_text(c);
        for (std::size_t i = 0; i < L; ++i) {
            if (c.token_ids[i] != word) {
                continue;
            }
            for (std::size_t k = 0; k < mean.size(); ++k) {
                mean[k] += static_cast<double>(feats(i, k));
            }
            ++count;
        }
    }
    if (count == 0) {
        throw std::invalid_argument("no corpus caption contains '" + std::string(vocab::word(word)) + "'");
    }
    for (double& v : mean) {
        v /= static_cast<double>(count);
    }
    TextCondition c = null_condition(L);
    c.token_ids[0] = vocab::pseudo;
    c.embedding_overrides[0] = std::move(mean);
    return c;
}

}  // namespace derain
