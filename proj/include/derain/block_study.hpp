// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <stdexcept>
#include <vector>

#include "derain/analysis.hpp"
#include "derain/attention_control.hpp"
#include "derain/denoiser.hpp"
#include "derain/image_io.hpp"
#include "derain/inversion.hpp"

namespace derain {

struct BlockSelection {
    // Mean PSNR (dB) of the generation with one block switched against the
    // all-blocks-active generation. Higher means lower impact; +inf means the
    // block has no effect.
    std::vector<double> impact_scores;
    std::set<std::size_t> selected;
};

// Blocks scoring at or above the median score.
inline std::set<std::size_t> select_low_impact(const std::vector<double>& scores) {
    if (scores.empty()) {
        return {};
    }
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    std::set<std::size_t> out;
    for (std::size_t b = 0; b < n; ++b) {
        if (scores[b] >= median || (std::isinf(median) && std::isinf(scores[b]))) {
            out.insert(b);
        }
    }
    return out;
}

// For every block b, generates each (prompt, seed) pair with b's text
// features replaced by the null pass's, and compares against the unmodified
// generation from the same noise.
template <class T>
BlockSelection block_impact_study(const Denoiser<T>& model, const std::vector<TextCondition>& prompts,
                                  const std::vector<std::uint64_t>& seeds, const NoiseSchedule& s) {
    if (prompts.empty()) {
        throw std::invalid_argument("block_impact_study: need at least one prompt");
    }
    if (seeds.empty()) {
        throw std::invalid_argument("block_impact_study: need at least one seed");
    }
    const std::size_t nb = model.config().num_blocks;
    std::vector<Video<double>> references;
    for (const TextCondition& p : prompts) {
        for (std::uint64_t seed : seeds) {
            references.push_back(to_pixels(generate(model, p, seed, s).template cast<double>()));
        }
    }
    BlockSelection sel;
    sel.impact_scores.assign(nb, 0.0);
    for (std::size_t b = 0; b < nb; ++b) {
        std::vector<double> scores;
        std::size_t k = 0;
        for (const TextCondition& p : prompts) {
            for (std::uint64_t seed : seeds) {
                AttentionControl<T> control({b}, {});
                control.set_mode(AttnMode::switch_kv);
                const Video<double> out = to_pixels(generate(model, p, seed, s, &control).template cast<double>());
                scores.push_back(psnr(out, references[k++]));
            }
        }
        sel.impact_scores[b] = sample_stats(scores).mean;
    }
    sel.selected = select_low_impact(sel.impact_scores);
    return sel;
}

// Writes block_impact.csv and block_impact.svg into `dir`; returns their paths.
inline std::vector<std::string> write_block_report(const std::string& dir, const BlockSelection& sel) {
    std::filesystem::create_directories(dir);
    std::vector<std::vector<std::string>> rows;
    PlotSeries series{"PSNR vs all-blocks generation", {}, {}};
    for (std::size_t b = 0; b < sel.impact_scores.size(); ++b) {
        rows.push_back({std::to_string(b), format_number(sel.impact_scores[b])});
        series.x.push_back(static_cast<double>(b));
        series.y.push_back(sel.impact_scores[b]);
    }
    const std::string csv = (std::filesystem::path(dir) / "block_impact.csv").string();
    const std::string svg = (std::filesystem::path(dir) / "block_impact.svg").string();
    write_csv(csv, {"block_index", "mean_psnr_delta"}, rows);
    write_text_file(svg, svg_line_plot("Per-block switching impact", "block", "PSNR (dB)", {series}));
    return {csv, svg};
}

}  // namespace derain
