// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

// derain: command-line front end. Every subcommand writes into a run
// directory (default $DERAIN_RUN_DIR/<command>, or ./runs/<command>) holding
// its outputs and a manifest.json from which the run can be replayed.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "derain/derain.hpp"

namespace fs = std::filesystem;
using namespace derain;

namespace {

struct Flags {
    std::string config_file;
    std::string checkpoint;
    std::string input;
    std::string output;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    double lambda = 0;
    std::size_t t_skip = 0;
    std::string prompt_mode;
    std::string concept_prompt;
    std::string blocks;
    std::string blocks_initial;
    bool no_attn_switch = false;
    bool implicit = false;
    std::string invert_with;

    const CLI::App* active = nullptr;

    bool given(const std::string& name) const {
        const CLI::Option* o = active->get_option_no_throw("--" + name);
        return o != nullptr && o->count() > 0;
    }
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config_file, "JSON config or a previous run's manifest.json");
    sub->add_option("--checkpoint", f.checkpoint, "Model checkpoint (VDT1 + .json sidecar)");
    sub->add_option("--out", f.out_dir, "Run directory (default: $DERAIN_RUN_DIR/<command>)");
    sub->add_option("--seed", f.seed, "Seed for inversion noise and sampling");
    sub->add_option("--steps", f.steps, "Inference steps")->check(CLI::Range(2, 1000));
    sub->add_option("--lambda", f.lambda, "Guidance scale (default 15, or 25 with switching)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--t-skip", f.t_skip, "Denoising steps taken before guidance starts");
    sub->add_option("--prompt-mode", f.prompt_mode, "Negative prompt construction")
        ->check(CLI::IsMember({"simple", "mean", "contextual"}));
    sub->add_option("--concept", f.concept_prompt, "Concept prompt to remove (default 'light rain')");
    sub->add_option("--blocks", f.blocks, "Attention-switching blocks, e.g. 0,4-7");
    sub->add_option("--blocks-initial", f.blocks_initial, "Split-attention blocks (subset of --blocks)");
    sub->add_flag("--no-attn-switch", f.no_attn_switch, "Disable attention switching");
    sub->add_flag("--implicit", f.implicit, "Invert with the concept and reconstruct unguided with the null prompt");
    sub->add_option("--invert-with", f.invert_with, "Inversion condition")
        ->check(CLI::IsMember({"null", "concept"}));
}

RunConfig resolve_config(const Flags& f) {
    RunConfig c = f.given("config") ? load_run_config(f.config_file) : RunConfig{};
    if (f.given("checkpoint")) c.checkpoint = f.checkpoint;
    if (f.given("out")) c.output_dir = f.out_dir;
    if (f.given("seed")) c.seed = f.seed;
    if (f.given("steps")) {
        // Keep the skip at the same fraction of the trajectory unless set.
        c.t_skip = (c.t_skip * f.steps + c.schedule.steps / 2) / c.schedule.steps;
        c.schedule.steps = f.steps;
    }
    if (f.given("lambda")) c.lambda = f.lambda;
    if (f.given("t-skip")) c.t_skip = f.t_skip;
    if (f.given("prompt-mode")) c.prompt_mode = parse_prompt_mode(f.prompt_mode);
    if (f.given("concept")) c.concept_prompt = f.concept_prompt;
    if (f.given("blocks")) c.blocks = parse_index_set(f.blocks);
    if (f.given("blocks-initial")) c.blocks_initial = parse_index_set(f.blocks_initial);
    if (f.given("no-attn-switch")) c.attention_switch = !f.no_attn_switch;
    if (f.given("implicit")) c.implicit = f.implicit;
    if (f.given("invert-with")) c.invert_with = parse_invert_with(f.invert_with);
    return c;
}

std::string checkpoint_path(const RunConfig& c) {
    return c.checkpoint.empty() ? (fs::path(run_root()) / "toy_model.vdt").string() : c.checkpoint;
}

std::string run_dir(const RunConfig& c, const std::string& command) {
    return c.output_dir.empty() ? (fs::path(run_root()) / command).string() : c.output_dir;
}

Denoiser<double> load_model(const RunConfig& c) {
    const std::string path = checkpoint_path(c);
    if (!fs::exists(path)) {
        throw std::runtime_error("no checkpoint at '" + path + "'; run 'derain train-toy' first or pass --checkpoint");
    }
    Denoiser<double> m = load_checkpoint<double>(path);
    m.set_timestep_scale(timestep_scale_for(c.schedule));
    return m;
}

std::vector<std::vector<int>> caption_corpus(const RunConfig& c) {
    std::vector<std::vector<int>> corpus;
    for (const SceneBundle& b : make_dataset(c.dataset_size, c.dataset_seed, c.model.frames, c.model.height,
                                             c.model.width)) {
        corpus.push_back(b.caption);
    }
    return corpus;
}

struct SceneTensors {
    Video<double> rainy;
    std::optional<Video<double>> clean, mask, flow;
};

std::vector<TensorEntry> scene_entries(const SceneBundle& b) {
    return {video_entry("rainy", b.rainy), video_entry("clean", b.clean), video_entry("rain_mask", b.rain_mask),
            video_entry("flow", b.flow)};
}

SceneTensors load_scene(const std::string& path) {
    const std::vector<TensorEntry> entries = read_container_file(path);
    SceneTensors s;
    auto get = [&](const std::string& name) -> std::optional<Video<double>> {
        for (const TensorEntry& e : entries) {
            if (e.name == name) {
                return entry_video<double>(e);
            }
        }
        return std::nullopt;
    };
    auto rainy = get("rainy");
    if (!rainy) {
        throw std::runtime_error("'" + path + "' has no 'rainy' tensor");
    }
    s.rainy = *rainy;
    s.clean = get("clean");
    s.mask = get("rain_mask");
    s.flow = get("flow");
    return s;
}

json metrics_json(const MetricsReport& r) {
    return json{{"psnr_vs_clean", format_number(r.psnr_vs_clean)},
                {"warp_error", r.warp_error},
                {"rain_residual", r.rain_residual},
                {"psnr_per_frame", [&] {
                     json a = json::array();
                     for (double v : r.psnr_per_frame) a.push_back(format_number(v));
                     return a;
                 }()},
                {"warp_error_per_pair", r.warp_error_per_pair}};
}

void write_json(Manifest& m, const std::string& name, const json& j) {
    const std::string p = m.path(name);
    write_text_file(p, j.dump(2) + "\n");
    m.add_output(p);
}

// ---------------------------------------------------------------------------

void cmd_gen_data(Manifest& m, const RunConfig& c, std::size_t count, const std::string& kind, bool snow) {
    std::vector<SceneBundle> scenes;
    if (kind == "mixed") {
        scenes = make_dataset(count, c.dataset_seed, c.model.frames, c.model.height, c.model.width);
    } else if (kind == "rainy") {
        scenes = make_rainy_set(count, c.eval_seed, c.model.frames, c.model.height, c.model.width);
    } else {
        const Intensity cls = kind == "light" ? Intensity::light : kind == "heavy" ? Intensity::heavy : Intensity::none;
        for (std::size_t i = 0; i < count; ++i) {
            scenes.push_back(render(random_scene(derive_seed(c.seed, 9000 + i), cls, c.model.frames, c.model.height,
                                                 c.model.width, snow ? Weather::snow : Weather::rain)));
        }
    }
    json captions = json::array();
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%03zu", i);
        const std::string path = m.path(std::string(name) + ".vdt");
        write_container_file(path, scene_entries(scenes[i]));
        m.add_output(path);
        for (const std::string& f : write_frames(m.path("frames"), std::string(name) + "_rainy", scenes[i].rainy)) {
            m.add_output(f);
        }
        captions.push_back({{"file", std::string(name) + ".vdt"},
                            {"caption", make_condition(scenes[i].caption, c.model.text_len).text()},
                            {"rain_energy", mean_energy(scenes[i].rain_layer)}});
    }
    write_json(m, "captions.json", captions);
    std::cout << "wrote " << scenes.size() << " scenes to " << m.dir() << "\n";
}

void cmd_train(Manifest& m, const RunConfig& c, bool reuse) {
    const std::string path = checkpoint_path(c);
    const json training = to_json(c)["training"];
    const json model_cfg = to_json(c)["model"];
    if (reuse && fs::exists(path) && fs::exists(path + ".json")) {
        const json side = read_checkpoint_sidecar(path);
        if (side.value("training", json()) == training && side.value("schedule", json()) == to_json(c)["schedule"]) {
            std::cout << "reusing " << path << "\n";
            m.set_result("reused", true);
            m.set_result("checkpoint", path);
            return;
        }
    }
    const auto data = make_dataset(c.dataset_size, c.dataset_seed, c.model.frames, c.model.height, c.model.width);
    TrainOptions opt;
    opt.steps = c.train_steps;
    opt.batch = c.batch;
    opt.learning_rate = c.learning_rate;
    opt.word_dropout = c.word_dropout;
    opt.seed = c.seed;
    opt.schedule = c.schedule;
    opt.warmup = std::min<std::size_t>(opt.warmup, c.train_steps / 10);
    TrainReport report;
    const auto t0 = std::chrono::steady_clock::now();
    const Denoiser<float> model = train_toy(data, c.model, opt, &report, [&](std::size_t step, double, double ema) {
        if (step % 500 == 0 || step + 1 == c.train_steps) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("step %5zu  loss(ema) %.4f  %.0fs\n", step, ema, secs);
            std::fflush(stdout);
        }
    });
    fs::create_directories(fs::path(path).parent_path().empty() ? fs::path(".") : fs::path(path).parent_path());
    save_checkpoint(path, model, json{{"training", training}, {"schedule", to_json(c)["schedule"]}});
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < report.loss.size(); ++i) {
        rows.push_back({std::to_string(i), format_number(report.loss[i]), format_number(report.loss_ema[i])});
    }
    write_csv(m.path("loss.csv"), {"step", "loss", "loss_ema"}, rows);
    m.add_output(m.path("loss.csv"));
    m.set_result("checkpoint", path);
    m.set_result("initial_loss_ema", report.initial_loss_ema());
    m.set_result("final_loss_ema", report.final_loss_ema());
    std::cout << "saved " << path << "\n";
}

void cmd_invert(Manifest& m, const RunConfig& c) {
    const Denoiser<double> model = load_model(c);
    const NoiseSchedule s = make_schedule(c.schedule);
    const SceneTensors scene = load_scene(c.input);
    const DerainOptions opt = c.derain_options();
    const TextCondition null_cond = null_condition(model.config().text_len);
    const TextCondition cond =
        c.invert_with == InvertWith::null_prompt ? null_cond : negative_condition_for(opt, model, caption_corpus(c));
    const auto rec = ddpm_invert(to_latent(scene.rainy), cond, model, s, c.seed, false);
    const Video<double> recon = to_pixels(reconstruct(rec, cond, model, s));
    std::vector<TensorEntry> entries{video_entry("x_T", rec.x_T)};
    for (std::size_t t = 1; t <= rec.steps(); ++t) {
        char name[16];
        std::snprintf(name, sizeof name, "z_%03zu", t);
        entries.push_back(video_entry(name, rec.noise_maps[t - 1]));
    }
    entries.push_back(video_entry("reconstruction", recon));
    write_container_file(m.path("inversion.vdt"), entries);
    m.add_output(m.path("inversion.vdt"));
    const double p = psnr(recon, scene.rainy);
    m.set_result("reconstruction_psnr", format_number(p));
    std::cout << "reconstruction PSNR " << format_number(p) << " dB\n";
}

void cmd_derain(Manifest& m, const RunConfig& c) {
    const Denoiser<double> model = load_model(c);
    const NoiseSchedule s = make_schedule(c.schedule);
    const SceneTensors scene = load_scene(c.input);
    const auto r = derain_video(model, scene.rainy, c.derain_options(), s, caption_corpus(c));
    write_container_file(m.path("derained.vdt"), {video_entry("derained", r.output)});
    m.add_output(m.path("derained.vdt"));
    for (const std::string& f : write_frames(m.path("frames"), "input", scene.rainy)) m.add_output(f);
    for (const std::string& f : write_frames(m.path("frames"), "derained", r.output)) m.add_output(f);
    if (scene.clean && scene.mask && scene.flow) {
        json report{{"input", metrics_json(evaluate_video(scene.rainy, *scene.clean, *scene.mask, *scene.flow))},
                    {"output", metrics_json(evaluate_video(r.output, *scene.clean, *scene.mask, *scene.flow))}};
        write_json(m, "metrics.json", report);
        m.set_result("metrics", report);
    }
    std::cout << "derained " << c.input << " -> " << m.path("derained.vdt") << "\n";
}

std::vector<TextCondition> parse_prompt_list(const std::string& list, std::size_t L) {
    std::vector<TextCondition> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ';')) {
        out.push_back(parse_prompt(item, L));
    }
    if (out.empty()) {
        throw std::invalid_argument("empty prompt list");
    }
    return out;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t n) {
    std::vector<std::uint64_t> v;
    for (std::size_t i = 0; i < n; ++i) {
        v.push_back(derive_seed(base, 100 + i));
    }
    return v;
}

void cmd_analyze_blocks(Manifest& m, const RunConfig& c, const std::string& prompts, std::size_t seeds) {
    const Denoiser<double> model = load_model(c);
    const NoiseSchedule s = make_schedule(c.schedule);
    const BlockSelection sel =
        block_impact_study(model, parse_prompt_list(prompts, model.config().text_len), seed_list(c.seed, seeds), s);
    for (const std::string& f : write_block_report(m.dir(), sel)) m.add_output(f);
    m.set_result("selected_blocks", format_index_set(sel.selected));
    std::cout << "low-impact blocks: " << format_index_set(sel.selected) << "\n";
}

std::vector<Video<double>> eval_videos(const RunConfig& c) {
    std::vector<Video<double>> v;
    if (!c.input.empty()) {
        v.push_back(load_scene(c.input).rainy);
        return v;
    }
    for (const SceneBundle& b : make_rainy_set(c.eval_videos, c.eval_seed, c.model.frames, c.model.height,
                                               c.model.width)) {
        v.push_back(b.rainy);
    }
    return v;
}

void cmd_sweep(Manifest& m, const RunConfig& c, const std::string& skips, const std::string& methods) {
    const Denoiser<double> model = load_model(c);
    const NoiseSchedule s = make_schedule(c.schedule);
    std::vector<std::size_t> t_skips;
    for (std::size_t v : parse_index_set(skips)) t_skips.push_back(v);
    std::vector<InversionMethod> ms;
    std::stringstream ss(methods);
    std::string item;
    while (std::getline(ss, item, ',')) ms.push_back(parse_inversion_method(item));
    const auto cells = inversion_sweep(model, eval_videos(c), t_skips, ms, s, c.seed);
    std::vector<std::vector<std::string>> rows;
    std::vector<PlotSeries> series;
    for (InversionMethod meth : ms) {
        PlotSeries ps{to_string(meth), {}, {}};
        for (const SweepCell& cell : cells) {
            if (cell.method != meth) continue;
            rows.push_back({to_string(meth), std::to_string(cell.t_skip), format_number(cell.psnr)});
            ps.x.push_back(static_cast<double>(cell.t_skip));
            ps.y.push_back(cell.psnr);
        }
        series.push_back(ps);
    }
    write_csv(m.path("inversion_sweep.csv"), {"method", "t_skip", "psnr"}, rows);
    m.add_output(m.path("inversion_sweep.csv"));
    write_text_file(m.path("inversion_sweep.svg"),
                    svg_line_plot("Reconstruction PSNR by skip", "t_skip", "PSNR (dB)", series));
    m.add_output(m.path("inversion_sweep.svg"));
    for (const auto& r : rows) std::cout << r[0] << " t_skip=" << r[1] << " psnr=" << r[2] << "\n";
}

void cmd_probe(Manifest& m, const RunConfig& c, const std::string& prompts) {
    const Denoiser<double> model = load_model(c);
    const NoiseSchedule s = make_schedule(c.schedule);
    std::vector<std::vector<std::string>> rows;
    json out = json::array();
    for (const TextCondition& cond : parse_prompt_list(prompts, model.config().text_len)) {
        const ProbeReport r = prompt_probe(model, cond, seed_list(c.seed, c.probe_seeds), s);
        rows.push_back({r.condition, format_number(r.rain_energy), format_number(r.background_energy)});
        out.push_back({{"condition", r.condition},
                       {"rain_energy", r.rain_energy},
                       {"background_energy", r.background_energy},
                       {"rain_per_seed", r.rain_per_seed}});
        std::cout << r.condition << ": rain " << r.rain_energy << ", background " << r.background_energy << "\n";
    }
    write_csv(m.path("prompt_probe.csv"), {"condition", "rain_energy", "background_energy"}, rows);
    m.add_output(m.path("prompt_probe.csv"));
    write_json(m, "prompt_probe.json", out);
}

void cmd_evaluate(Manifest& m, const RunConfig& c, const std::string& output_file) {
    if (!c.input.empty() && !output_file.empty()) {
        const SceneTensors scene = load_scene(c.input);
        if (!scene.clean || !scene.mask || !scene.flow) {
            throw std::runtime_error("'" + c.input + "' lacks clean/rain_mask/flow tensors");
        }
        const Video<double> out = entry_video<double>(find_entry(read_container_file(output_file), "derained"));
        json report{{"input", metrics_json(evaluate_video(scene.rainy, *scene.clean, *scene.mask, *scene.flow))},
                    {"output", metrics_json(evaluate_video(out, *scene.clean, *scene.mask, *scene.flow))}};
        write_json(m, "metrics.json", report);
        m.set_result("metrics", report);
        std::cout << report.dump(2) << "\n";
        return;
    }
    // Held-out benchmark: derain every evaluation video with the current settings.
    const Denoiser<double> model = load_model(c);
    const NoiseSchedule s = make_schedule(c.schedule);
    const auto corpus = caption_corpus(c);
    const auto scenes = make_rainy_set(c.eval_videos, c.eval_seed, c.model.frames, c.model.height, c.model.width);
    std::vector<std::vector<std::string>> rows;
    double in_res = 0, out_res = 0, in_psnr = 0, out_psnr = 0, in_warp = 0, out_warp = 0;
    const double n = static_cast<double>(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const SceneBundle& b = scenes[i];
        const auto r = derain_video(model, b.rainy, c.derain_options(), s, corpus);
        const MetricsReport a = evaluate_video(b.rainy, b.clean, b.rain_mask, b.flow);
        const MetricsReport o = evaluate_video(r.output, b.clean, b.rain_mask, b.flow);
        rows.push_back({std::to_string(i), format_number(a.rain_residual), format_number(o.rain_residual),
                        format_number(a.psnr_vs_clean), format_number(o.psnr_vs_clean), format_number(a.warp_error),
                        format_number(o.warp_error)});
        in_res += a.rain_residual / n;
        out_res += o.rain_residual / n;
        in_psnr += a.psnr_vs_clean / n;
        out_psnr += o.psnr_vs_clean / n;
        in_warp += a.warp_error / n;
        out_warp += o.warp_error / n;
    }
    write_csv(m.path("evaluation.csv"),
              {"video", "input_rain_residual", "output_rain_residual", "input_psnr", "output_psnr", "input_warp_error",
               "output_warp_error"},
              rows);
    m.add_output(m.path("evaluation.csv"));
    const json summary{{"videos", scenes.size()},
                       {"input", {{"rain_residual", in_res}, {"psnr", in_psnr}, {"warp_error", in_warp}}},
                       {"output", {{"rain_residual", out_res}, {"psnr", out_psnr}, {"warp_error", out_warp}}}};
    write_json(m, "summary.json", summary);
    m.set_result("summary", summary);
    std::cout << summary.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot video deraining with a toy joint-attention diffusion model"};
    app.require_subcommand(1);
    Flags flags;

    std::size_t count = 10;
    std::string kind = "mixed";
    bool snow = false;
    auto* gen = app.add_subcommand("gen-data", "Render synthetic rainy videos with ground truth");
    gen->add_option("--count", count, "Number of videos")->check(CLI::PositiveNumber);
    gen->add_option("--kind", kind, "Scene mix")->check(CLI::IsMember({"mixed", "rainy", "light", "heavy", "clean"}));
    gen->add_flag("--snow", snow, "Render snow instead of rain (light/heavy kinds)");

    std::size_t train_steps = 0, dataset_size = 0, batch = 0;
    bool reuse = false;
    auto* train = app.add_subcommand("train-toy", "Train the toy denoiser on synthetic data");
    auto* o_train_steps = train->add_option("--train-steps", train_steps, "Optimizer steps");
    auto* o_dataset = train->add_option("--dataset-size", dataset_size, "Training videos")->check(CLI::PositiveNumber);
    auto* o_batch = train->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
    train->add_flag("--reuse", reuse, "Keep an existing checkpoint trained with the same settings");

    auto* invert = app.add_subcommand("invert", "DDPM-invert a video and store its noise maps");
    auto* derain_cmd = app.add_subcommand("derain", "Remove rain from a video");
    for (auto* sub : {invert, derain_cmd}) {
        sub->add_option("--input", flags.input, "Scene container with a 'rainy' tensor");
    }

    std::string prompts = "scene heavy rain;scene light rain";
    std::size_t study_seeds = 2;
    auto* blocks = app.add_subcommand("analyze-blocks", "Per-block attention-switching impact study");
    blocks->add_option("--prompts", prompts, "Semicolon-separated prompts");
    blocks->add_option("--study-seeds", study_seeds, "Seeds per prompt")->check(CLI::PositiveNumber);

    std::string skips = "0,25,50", methods = "sdedit,ddim,ddpm";
    auto* sweep = app.add_subcommand("sweep-inversion", "Reconstruction PSNR of SDEdit, DDIM and DDPM inversion");
    sweep->add_option("--t-skips", skips, "Skip values, e.g. 0,25,50");
    sweep->add_option("--methods", methods, "Comma-separated methods");
    sweep->add_option("--input", flags.input, "Scene container (default: the held-out set)");

    std::string probe_prompts = "<null>;scene;scene light rain;scene heavy rain";
    auto* probe = app.add_subcommand("probe-prompts", "Rain and background energy of generations per prompt");
    probe->add_option("--prompts", probe_prompts, "Semicolon-separated prompts");

    auto* evaluate = app.add_subcommand("evaluate", "Metrics for one output, or the held-out benchmark");
    evaluate->add_option("--input", flags.input, "Scene container with ground truth");
    evaluate->add_option("--output", flags.output, "Container holding a 'derained' tensor");

    for (auto* sub : {gen, train, invert, derain_cmd, blocks, sweep, probe, evaluate}) {
        add_common(sub, flags);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    RunConfig cfg;
    try {
        flags.active = sub;
        cfg = resolve_config(flags);
        if (!flags.input.empty()) cfg.input = flags.input;
        // The checkpoint defines the architecture for every command that loads one.
        if (command != "gen-data" && command != "train-toy" && fs::exists(checkpoint_path(cfg) + ".json")) {
            cfg.model = config_from_json(read_checkpoint_sidecar(checkpoint_path(cfg)).at("config"));
            cfg.model.timestep_scale = timestep_scale_for(cfg.schedule);
        }
        if (command == "train-toy") {
            if (o_train_steps->count()) cfg.train_steps = train_steps;
            if (o_dataset->count()) cfg.dataset_size = dataset_size;
            if (o_batch->count()) cfg.batch = batch;
        }
        cfg.validate();
        if ((command == "invert" || command == "derain") && cfg.input.empty()) {
            throw std::invalid_argument(command + " requires --input");
        }
        if (command == "evaluate" && cfg.input.empty() != flags.output.empty()) {
            throw std::invalid_argument("evaluate takes both --input and --output, or neither");
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    std::optional<Manifest> manifest;
    try {
        manifest.emplace(run_dir(cfg, command), command, cfg);
        Manifest& m = *manifest;
        if (command == "gen-data") cmd_gen_data(m, cfg, count, kind, snow);
        else if (command == "train-toy") cmd_train(m, cfg, reuse);
        else if (command == "invert") cmd_invert(m, cfg);
        else if (command == "derain") cmd_derain(m, cfg);
        else if (command == "analyze-blocks") cmd_analyze_blocks(m, cfg, prompts, study_seeds);
        else if (command == "sweep-inversion") cmd_sweep(m, cfg, skips, methods);
        else if (command == "probe-prompts") cmd_probe(m, cfg, probe_prompts);
        else if (command == "evaluate") cmd_evaluate(m, cfg, flags.output);
        m.complete();
    } catch (const std::exception& e) {
        if (manifest) manifest->fail(e.what());
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
