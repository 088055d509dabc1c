// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace derain {

// Closed toy vocabulary. "<null>" is accepted in prompt text as an explicit
// spelling of the empty prompt; "<emb>" marks a slot whose encoded feature is
// supplied directly (pseudo-token).
namespace vocab {

inline constexpr int pad = 0;
inline constexpr int null = 1;
inline constexpr int scene = 2;
inline constexpr int rain = 3;
inline constexpr int light = 4;
inline constexpr int heavy = 5;
inline constexpr int snow = 6;
inline constexpr int pseudo = 7;
inline constexpr int size = 8;

inline constexpr std::array<std::string_view, size> words = {"<pad>", "<null>", "scene", "rain",
                                                             "light", "heavy",  "snow",  "<emb>"};

inline int id(std::string_view word) {
    for (int i = 0; i < size; ++i) {
        if (words[static_cast<std::size_t>(i)] == word) {
            return i;
        }
    }
    throw std::invalid_argument("unknown token '" + std::string(word) + "'");
}

inline std::string_view word(int token) {
    if (token < 0 || token >= size) {
        throw std::invalid_argument("token id out of range: " + std::to_string(token));
    }
    return words[static_cast<std::size_t>(token)];
}

}  // namespace vocab

struct TextCondition {
    std::vector<int> token_ids;
    // Slot -> encoded feature used verbatim in place of the encoder output.
    std::map<std::size_t, std::vector<double>> embedding_overrides;

    bool is_null() const {
        return embedding_overrides.empty() &&
               std::all_of(token_ids.begin(), token_ids.end(), [](int t) { return t == vocab::pad; });
    }

    std::string text() const {
        std::string out;
        for (int t : token_ids) {
            if (t == vocab::pad) {
                continue;
            }
            if (!out.empty()) {
                out += ' ';
            }
            out += vocab::word(t);
        }
        return out;
    }

    bool operator==(const TextCondition&) const = default;
};

inline TextCondition null_condition(std::size_t text_len) {
    return TextCondition{std::vector<int>(text_len, vocab::pad), {}};
}

inline TextCondition make_condition(const std::vector<int>& tokens, std::size_t text_len) {
    if (tokens.size() > text_len) {
        throw std::invalid_argument("prompt longer than text length " + std::to_string(text_len));
    }
    TextCondition c = null_condition(text_len);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        vocab::word(tokens[i]);
        c.token_ids[i] = tokens[i];
    }
    return c;
}

// Whitespace-separated prompt text. "" and "<null>" give the null condition.
inline TextCondition parse_prompt(std::string_view prompt, std::size_t text_len) {
    std::istringstream in{std::string(prompt)};
    std::vector<int> tokens;
    std::string w;
    while (in >> w) {
        const int id = vocab::id(w);
        if (id == vocab::pseudo) {
            throw std::invalid_argument("'<emb>' cannot be written in prompt text");
        }
        if (id != vocab::null && id != vocab::pad) {
            tokens.push_back(id);
        }
    }
    return make_condition(tokens, text_len);
}

}  // namespace derain
