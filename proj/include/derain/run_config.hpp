// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "derain/block.hpp"
#include "derain/checkpoint.hpp"
#include "derain/guidance.hpp"
#include "derain/pipeline.hpp"
#include "derain/schedule.hpp"

namespace derain {

// "0,4-7" -> {0, 4, 5, 6, 7}. Empty text gives the empty set.
inline std::set<std::size_t> parse_index_set(const std::string& text) {
    std::set<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) {
            continue;
        }
        const auto dash = item.find('-');
        try {
            std::size_t pos = 0;
            if (dash == std::string::npos) {
                out.insert(std::stoul(item, &pos));
                if (pos != item.size()) {
                    throw std::invalid_argument("");
                }
            } else {
                const std::size_t a = std::stoul(item.substr(0, dash));
                const std::size_t b = std::stoul(item.substr(dash + 1));
                if (b < a) {
                    throw std::invalid_argument("");
                }
                for (std::size_t i = a; i <= b; ++i) {
                    out.insert(i);
                }
            }
        } catch (const std::exception&) {
            throw std::invalid_argument("bad block list entry '" + item + "' (expected e.g. 0,4-7)");
        }
    }
    return out;
}

inline std::string format_index_set(const std::set<std::size_t>& s) {
    std::string out;
    for (std::size_t v : s) {
        out += (out.empty() ? "" : ",") + std::to_string(v);
    }
    return out;
}

struct RunConfig {
    std::string checkpoint;  // empty: <run root>/toy_model.vdt
    std::string input;       // VDT1 file holding a "rainy" video (and optionally "clean", "mask", "flow")
    std::string output_dir;  // empty: <run root>/<command>
    std::uint64_t seed = 0;

    ScheduleParams schedule;

    std::optional<double> lambda;
    std::size_t t_skip = kDefaultSkip;
    PromptMode prompt_mode = PromptMode::contextual;
    std::string concept_prompt = "light rain";
    bool attention_switch = true;
    std::optional<std::set<std::size_t>> blocks;
    std::optional<std::set<std::size_t>> blocks_initial;
    InvertWith invert_with = InvertWith::null_prompt;
    bool implicit = false;

    DenoiserConfig model;
    std::size_t dataset_size = 300;
    std::uint64_t dataset_seed = 42;
    std::size_t train_steps = 6000;
    std::size_t batch = 8;
    double learning_rate = 2e-3;
    double word_dropout = 0.3;

    std::size_t eval_videos = 10;
    std::uint64_t eval_seed = 777;
    std::size_t probe_seeds = 16;

    void validate() const {
        model.validate();
        if (schedule.steps < 2 || schedule.train_steps < schedule.steps) {
            throw std::invalid_argument("need 2 <= steps <= train_steps");
        }
        if (!(schedule.beta_start > 0 && schedule.beta_end < 1 && schedule.beta_start <= schedule.beta_end)) {
            throw std::invalid_argument("betas must satisfy 0 < beta_start <= beta_end < 1");
        }
        if (t_skip > schedule.steps) {
            throw std::invalid_argument("t_skip " + std::to_string(t_skip) + " exceeds steps " +
                                        std::to_string(schedule.steps));
        }
        if (!(word_dropout >= 0.0 && word_dropout < 1.0)) {
            throw std::invalid_argument("word_dropout must lie in [0, 1)");
        }
        if (lambda && !(*lambda >= 0.0)) {
            throw std::invalid_argument("lambda must be nonnegative");
        }
        const TextCondition c = parse_prompt(concept_prompt, model.text_len);
        if (c.is_null()) {
            throw std::invalid_argument("concept prompt must contain a content word");
        }
        for (const auto* set : {&blocks, &blocks_initial}) {
            if (*set) {
                for (std::size_t b : **set) {
                    if (b >= model.num_blocks) {
                        throw std::invalid_argument("block index " + std::to_string(b) + " out of range");
                    }
                }
            }
        }
        if (blocks_initial) {
            const std::set<std::size_t> all = blocks.value_or(default_block_sets(model.num_blocks).first);
            for (std::size_t b : *blocks_initial) {
                if (!all.contains(b)) {
                    throw std::invalid_argument("--blocks-initial must be a subset of --blocks");
                }
            }
        }
        if (dataset_size == 0 || batch == 0 || eval_videos == 0 || probe_seeds == 0) {
            throw std::invalid_argument("dataset_size, batch, eval_videos and probe_seeds must be positive");
        }
    }

    DerainOptions derain_options() const {
        DerainOptions o;
        o.lambda = lambda;
        o.t_skip = t_skip;
        o.prompt_mode = prompt_mode;
        const TextCondition c = parse_prompt(concept_prompt, model.text_len);
        o.concept_tokens.clear();
        for (int id : c.token_ids) {
            if (id != vocab::pad) {
                o.concept_tokens.push_back(id);
            }
        }
        o.attention_switch = attention_switch;
        o.blocks = blocks;
        o.blocks_initial = blocks_initial;
        o.invert_with = invert_with;
        o.implicit = implicit;
        o.seed = seed;
        return o;
    }
};

inline json to_json(const RunConfig& c) {
    json j;
    j["checkpoint"] = c.checkpoint;
    j["input"] = c.input;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    j["schedule"] = {{"train_steps", c.schedule.train_steps},
                     {"steps", c.schedule.steps},
                     {"beta_start", c.schedule.beta_start},
                     {"beta_end", c.schedule.beta_end},
                     {"kind", c.schedule.kind == ScheduleKind::linear ? "linear" : "cosine"}};
    j["guidance"] = {{"lambda", c.lambda ? json(*c.lambda) : json(nullptr)},
                     {"t_skip", c.t_skip},
                     {"prompt_mode", to_string(c.prompt_mode)},
                     {"concept", c.concept_prompt},
                     {"attention_switch", c.attention_switch},
                     {"blocks", c.blocks ? json(format_index_set(*c.blocks)) : json(nullptr)},
                     {"blocks_initial", c.blocks_initial ? json(format_index_set(*c.blocks_initial)) : json(nullptr)},
                     {"invert_with", to_string(c.invert_with)},
                     {"implicit", c.implicit}};
    j["model"] = config_to_json(c.model);
    j["training"] = {{"dataset_size", c.dataset_size},
                     {"dataset_seed", c.dataset_seed},
                     {"steps", c.train_steps},
                     {"batch", c.batch},
                     {"learning_rate", c.learning_rate},
                     {"word_dropout", c.word_dropout}};
    j["evaluation"] = {{"videos", c.eval_videos}, {"seed", c.eval_seed}, {"probe_seeds", c.probe_seeds}};
    return j;
}

inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.input = j.value("input", c.input);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        c.schedule.train_steps = s.value("train_steps", c.schedule.train_steps);
        c.schedule.steps = s.value("steps", c.schedule.steps);
        c.schedule.beta_start = s.value("beta_start", c.schedule.beta_start);
        c.schedule.beta_end = s.value("beta_end", c.schedule.beta_end);
        const std::string kind = s.value("kind", std::string("linear"));
        if (kind != "linear" && kind != "cosine") {
            throw std::invalid_argument("schedule kind must be 'linear' or 'cosine'");
        }
        c.schedule.kind = kind == "linear" ? ScheduleKind::linear : ScheduleKind::cosine;
    }
    if (j.contains("guidance")) {
        const json& g = j["guidance"];
        if (g.contains("lambda") && !g["lambda"].is_null()) {
            c.lambda = g["lambda"].get<double>();
        }
        c.t_skip = g.value("t_skip", c.t_skip);
        c.prompt_mode = parse_prompt_mode(g.value("prompt_mode", to_string(c.prompt_mode)));
        c.concept_prompt = g.value("concept", c.concept_prompt);
        c.attention_switch = g.value("attention_switch", c.attention_switch);
        if (g.contains("blocks") && !g["blocks"].is_null()) {
            c.blocks = parse_index_set(g["blocks"].get<std::string>());
        }
        if (g.contains("blocks_initial") && !g["blocks_initial"].is_null()) {
            c.blocks_initial = parse_index_set(g["blocks_initial"].get<std::string>());
        }
        c.invert_with = parse_invert_with(g.value("invert_with", to_string(c.invert_with)));
        c.implicit = g.value("implicit", c.implicit);
    }
    if (j.contains("model")) {
        c.model = config_from_json(j["model"]);
    }
    if (j.contains("training")) {
        const json& t = j["training"];
        c.dataset_size = t.value("dataset_size", c.dataset_size);
        c.dataset_seed = t.value("dataset_seed", c.dataset_seed);
        c.train_steps = t.value("steps", c.train_steps);
        c.batch = t.value("batch", c.batch);
        c.learning_rate = t.value("learning_rate", c.learning_rate);
        c.word_dropout = t.value("word_dropout", c.word_dropout);
    }
    if (j.contains("evaluation")) {
        const json& e = j["evaluation"];
        c.eval_videos = e.value("videos", c.eval_videos);
        c.eval_seed = e.value("seed", c.eval_seed);
        c.probe_seeds = e.value("probe_seeds", c.probe_seeds);
    }
    return c;
}

// Accepts either a manifest (config under "config") or a bare config.
inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config '" + path + "'");
    }
    const json j = json::parse(in);
    return run_config_from_json(j.contains("config") && j.contains("command") ? j["config"] : j);
}

inline std::string run_root() {
    const char* env = std::getenv("DERAIN_RUN_DIR");
    return env && *env ? std::string(env) : std::string("runs");
}

// Run record written before any compute and rewritten on completion, so an
// interrupted run is left marked incomplete.
class Manifest {
public:
    Manifest(std::string dir, std::string command, const RunConfig& config)
        : dir_(std::move(dir)), command_(std::move(command)), config_(to_json(config)) {
        std::filesystem::create_directories(dir_);
        write("incomplete");
    }

    const std::string& dir() const { return dir_; }
    std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }
    std::string manifest_path() const { return path("manifest.json"); }

    void add_output(const std::string& file) {
        outputs_.push_back(std::filesystem::relative(file, dir_).generic_string());
        write("incomplete");
    }
    void set_result(const std::string& key, json value) { results_[key] = std::move(value); }
    void complete() { write("complete"); }
    void fail(const std::string& error) {
        error_ = error;
        write("incomplete");
    }

private:
    void write(const std::string& status) const {
        json j;
        j["command"] = command_;
        j["status"] = status;
        j["config"] = config_;
        j["outputs"] = outputs_;
        if (!results_.empty()) {
            j["results"] = results_;
        }
        if (!error_.empty()) {
            j["error"] = error_;
        }
        std::ofstream out(manifest_path());
        out << j.dump(2) << '\n';
    }

    std::string dir_;
    std::string command_;
    json config_;
    std::vector<std::string> outputs_;
    json results_ = json::object();
    std::string error_;
};

}  // namespace derain
