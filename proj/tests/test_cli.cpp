// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

// Drives the derain executable end to end on a briefly trained model.

#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "derain/derain.hpp"

namespace fs = std::filesystem;
using namespace derain;

namespace {

const fs::path& scratch() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / ("derain_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string(DERAIN_CLI) + " " + args + " > " + (scratch() / "last.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string out(const std::string& name) { return (scratch() / name).string(); }

Video<double> tensor(const fs::path& file, const std::string& name) {
    for (const TensorEntry& e : read_container_file(file.string())) {
        if (e.name == name) {
            return entry_video<double>(e);
        }
    }
    throw std::runtime_error("missing tensor " + name);
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        ::setenv("DERAIN_RUN_DIR", scratch().c_str(), 1);
        ASSERT_EQ(run("train-toy --train-steps 20 --dataset-size 6 --steps 10"), 0) << slurp(out("last.log"));
        ASSERT_EQ(run("gen-data --count 2 --kind rainy --out " + out("data")), 0) << slurp(out("last.log"));
    }
    static void TearDownTestSuite() { fs::remove_all(scratch()); }

    static std::string scene() { return out("data/scene_000.vdt"); }
};

}  // namespace

TEST_F(Cli, ZeroLambdaDerainEqualsPureReconstruction) {
    ASSERT_EQ(run("invert --input " + scene() + " --steps 10 --seed 3 --out " + out("inv")), 0);
    ASSERT_EQ(run("derain --input " + scene() + " --steps 10 --t-skip 2 --seed 3 --lambda 0 --out " + out("d0")), 0);
    const auto recon = tensor(out("inv/inversion.vdt"), "reconstruction");
    const auto derained = tensor(out("d0/derained.vdt"), "derained");
    EXPECT_EQ(derained, recon);
}

TEST_F(Cli, ManifestReplayIsByteIdentical) {
    ASSERT_EQ(run("derain --input " + scene() + " --steps 10 --t-skip 4 --seed 5 --out " + out("a")), 0);
    ASSERT_EQ(run("derain --config " + out("a/manifest.json") + " --out " + out("b")), 0);
    EXPECT_EQ(slurp(out("a/derained.vdt")), slurp(out("b/derained.vdt")));
    EXPECT_EQ(slurp(out("a/metrics.json")), slurp(out("b/metrics.json")));
    const std::string manifest = slurp(out("b/manifest.json"));
    EXPECT_NE(manifest.find("\"status\": \"complete\""), std::string::npos);
    EXPECT_NE(manifest.find("derained.vdt"), std::string::npos);
}

TEST_F(Cli, EvaluateWritesMetrics) {
    ASSERT_EQ(run("derain --input " + scene() + " --steps 10 --t-skip 4 --out " + out("e")), 0);
    ASSERT_EQ(run("evaluate --input " + scene() + " --output " + out("e/derained.vdt") + " --out " + out("m")), 0);
    EXPECT_NE(slurp(out("m/metrics.json")).find("rain_residual"), std::string::npos);
}

TEST_F(Cli, InvalidConfigurationExitsWithTwo) {
    EXPECT_EQ(run("derain --input " + scene() + " --steps 10 --t-skip 11"), 2);
    EXPECT_EQ(run("derain --input " + scene() + " --blocks 40"), 2);
    EXPECT_EQ(run("derain --input " + scene() + " --lambda -1"), 2);
    EXPECT_EQ(run("derain --steps 10"), 2);
    EXPECT_EQ(run("evaluate --input " + scene()), 2);
    std::ofstream(out("bad.json")) << "{\"schedule\": {\"steps\": 1}}";
    EXPECT_EQ(run("derain --input " + scene() + " --config " + out("bad.json")), 2);
}

TEST_F(Cli, RuntimeFailureMarksManifestIncomplete) {
    EXPECT_EQ(run("derain --input " + out("missing.vdt") + " --steps 10 --t-skip 2 --out " + out("f")), 1);
    const std::string manifest = slurp(out("f/manifest.json"));
    EXPECT_NE(manifest.find("\"status\": \"incomplete\""), std::string::npos);
    EXPECT_NE(manifest.find("\"error\""), std::string::npos);
}
