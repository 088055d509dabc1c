// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "derain/guidance.hpp"
#include "derain/inversion.hpp"
#include "derain/pipeline.hpp"
#include "test_support.hpp"

using namespace derain;
using derain::testing::random_latent;
using derain::testing::randomized;
using derain::testing::short_schedule;
using derain::testing::tiny_config;

namespace {

GuidanceSpec spec_for(double lambda, std::size_t t_skip, std::size_t steps, const TextCondition& negative) {
    GuidanceSpec g;
    g.lambda = lambda;
    g.t_skip = t_skip;
    g.steps = steps;
    g.negative_condition = negative;
    g.null_condition = null_condition(negative.token_ids.size());
    return g;
}

class GuidanceTest : public ::testing::Test {
protected:
    Denoiser<double> model = randomized(tiny_config(), 71);
    NoiseSchedule s = short_schedule(10);
    TextCondition null_cond = null_condition(3);
    TextCondition negative = parse_prompt("light rain", 3);
    Video<double> x0 = random_latent<double>(tiny_config().video_shape(), 72);
    InversionRecord<double> rec = ddpm_invert(x0, null_cond, model, s, 7);
};

}  // namespace

TEST(GuidedEps, HandValues) {
    Video<double> n({1, 1, 1, 2}), c({1, 1, 1, 2});
    n.data = {1.0, -2.0};
    c.data = {0.5, 1.0};
    const auto g = guided_eps(n, c, 3.0);
    EXPECT_DOUBLE_EQ(g.data[0], 1.0 + 3.0 * 0.5);
    EXPECT_DOUBLE_EQ(g.data[1], -2.0 + 3.0 * -3.0);
}

TEST(GuidedEps, AffineInLambda) {
    const auto n = random_latent<double>({2, 3, 4, 4}, 1);
    const auto c = random_latent<double>({2, 3, 4, 4}, 2);
    const auto g0 = guided_eps(n, c, 0.0), g1 = guided_eps(n, c, 1.0);
    for (double lambda : {0.5, 5.0, 15.0, 25.0}) {
        const auto g = guided_eps(n, c, lambda);
        for (std::size_t i = 0; i < g.size(); ++i) {
            EXPECT_NEAR(g.data[i], g0.data[i] + lambda * (g1.data[i] - g0.data[i]), 1e-12);
        }
    }
    EXPECT_EQ(g0, n);
}

TEST(GuidanceSpec, GuidedWindow) {
    const GuidanceSpec g = spec_for(15, 40, 100, parse_prompt("rain", 4));
    EXPECT_FALSE(g.guided(100));
    EXPECT_FALSE(g.guided(61));
    EXPECT_TRUE(g.guided(60));
    EXPECT_TRUE(g.guided(1));
    const GuidanceSpec none = spec_for(15, 100, 100, parse_prompt("rain", 4));
    for (std::size_t t = 1; t <= 100; ++t) {
        EXPECT_FALSE(none.guided(t));
    }
}

TEST(GuidanceSpec, Validation) {
    EXPECT_THROW(spec_for(-1, 0, 10, parse_prompt("rain", 3)).validate(), std::invalid_argument);
    EXPECT_THROW(spec_for(1, 11, 10, parse_prompt("rain", 3)).validate(), std::invalid_argument);
    EXPECT_NO_THROW(spec_for(0, 10, 10, parse_prompt("rain", 3)).validate());
}

TEST_F(GuidanceTest, ZeroLambdaIsBitIdenticalToReconstruction) {
    const auto pure = reconstruct(rec, null_cond, model, s);
    const GuidanceSpec g = spec_for(0.0, 0, s.num_steps, negative);
    EXPECT_EQ(reconstruct(rec, null_cond, model, s, &g), pure);
    AttentionControl<double> control = make_default_control<double>(2);
    EXPECT_EQ(reconstruct(rec, null_cond, model, s, &g, &control), pure);
}

TEST_F(GuidanceTest, FullSkipIsBitIdenticalToReconstruction) {
    const auto pure = reconstruct(rec, null_cond, model, s);
    const GuidanceSpec g = spec_for(25.0, s.num_steps, s.num_steps, negative);
    EXPECT_EQ(reconstruct(rec, null_cond, model, s, &g), pure);
}

TEST_F(GuidanceTest, DeviationGrowsWithLambda) {
    const auto pure = reconstruct(rec, null_cond, model, s);
    double prev = -1;
    for (double lambda : {0.0, 5.0, 15.0, 25.0}) {
        const GuidanceSpec g = spec_for(lambda, 4, s.num_steps, negative);
        const double d = l2_distance(reconstruct(rec, null_cond, model, s, &g), pure);
        EXPECT_GE(d, prev) << "lambda " << lambda;
        prev = d;
    }
    EXPECT_GT(prev, 0.0);
}

TEST_F(GuidanceTest, DualPassOutsideWindowUsesNullOnly) {
    const GuidanceSpec g = spec_for(15.0, 4, s.num_steps, negative);
    const auto x = random_latent<double>(x0.shape, 5);
    EXPECT_EQ(dual_pass(x, s.num_steps, g, model), model.predict_eps(x, s.num_steps, null_cond));
    const auto expected =
        guided_eps(model.predict_eps(x, 3, null_cond), model.predict_eps(x, 3, negative), g.lambda);
    EXPECT_EQ(dual_pass(x, 3, g, model), expected);
    EXPECT_THROW(dual_pass(x, 0, g, model), std::out_of_range);
}

TEST_F(GuidanceTest, DualPassLeavesControllerIdle) {
    const GuidanceSpec g = spec_for(15.0, 0, s.num_steps, negative);
    AttentionControl<double> control = make_default_control<double>(2);
    dual_pass(x0, 5, g, model, &control);
    EXPECT_EQ(control.mode(), AttnMode::off);
    EXPECT_EQ(control.buffered(), 0u);
}

TEST(PromptModes, NegativeConditions) {
    const auto model = randomized(tiny_config(), 81);
    const std::vector<int> concept_tokens = {vocab::light, vocab::rain};
    const auto ctx = build_negative_condition(PromptMode::contextual, concept_tokens, model);
    EXPECT_EQ(ctx.token_ids, (std::vector<int>{vocab::light, vocab::rain, vocab::pad}));
    const auto simple = build_negative_condition(PromptMode::simple, concept_tokens, model);
    EXPECT_EQ(simple.token_ids, (std::vector<int>{vocab::rain, vocab::pad, vocab::pad}));
    EXPECT_THROW(build_negative_condition(PromptMode::mean_embedding, concept_tokens, model, {{vocab::scene}}),
                 std::invalid_argument);
    EXPECT_THROW(build_negative_condition(PromptMode::simple, {}, model), std::invalid_argument);
    EXPECT_THROW(build_negative_condition(PromptMode::simple, {vocab::null}, model), std::invalid_argument);
}

// Mean of the word's encoded rows, recomputed by hand from the encoder.
TEST(PromptModes, MeanEmbeddingOracle) {
    const auto model = randomized(tiny_config(), 82);
    const std::vector<std::vector<int>> corpus = {
        {vocab::scene, vocab::light, vocab::rain}, {vocab::scene}, {vocab::rain, vocab::heavy}};
    const auto c = build_negative_condition(PromptMode::mean_embedding, {vocab::light, vocab::rain}, model, corpus);
    ASSERT_EQ(c.token_ids[0], vocab::pseudo);
    ASSERT_EQ(c.embedding_overrides.count(0), 1u);
    const auto a = model.encode_text(make_condition(corpus[0], 3));
    const auto b = model.encode_text(make_condition(corpus[2], 3));
    const auto& mean = c.embedding_overrides.at(0);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_NEAR(mean[k], 0.5 * (a(2, k) + b(0, k)), 1e-12);
    }
    const auto enc = model.encode_text(c);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(enc(0, k), mean[k]);
    }
}

// Every occurrence encodes identically, so the mean is the simple prompt's row.
TEST(PromptModes, MeanOfIdenticalFeaturesIsSimple) {
    const auto model = randomized(tiny_config(), 83);
    const std::vector<std::vector<int>> corpus = {{vocab::rain}, {vocab::rain}, {vocab::scene}};
    const auto c = build_negative_condition(PromptMode::mean_embedding, {vocab::rain}, model, corpus);
    const auto simple = model.encode_text(build_negative_condition(PromptMode::simple, {vocab::rain}, model));
    const auto& mean = c.embedding_overrides.at(0);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(mean[k], simple(0, k));
    }
}

TEST(PromptModes, Names) {
    for (PromptMode m : {PromptMode::simple, PromptMode::mean_embedding, PromptMode::contextual}) {
        EXPECT_EQ(parse_prompt_mode(to_string(m)), m);
    }
    EXPECT_THROW(parse_prompt_mode("clip"), std::invalid_argument);
}

TEST(Pipeline, DefaultLambdaFollowsSwitching) {
    DerainOptions o;
    EXPECT_DOUBLE_EQ(o.effective_lambda(), 25.0);
    o.attention_switch = false;
    EXPECT_DOUBLE_EQ(o.effective_lambda(), 15.0);
    o.lambda = 3.0;
    EXPECT_DOUBLE_EQ(o.effective_lambda(), 3.0);
}

TEST(Pipeline, ZeroLambdaMatchesPureReconstruction) {
    const auto model = randomized(tiny_config(8), 91);
    const NoiseSchedule s = short_schedule(10);
    const auto pixels = to_pixels(random_latent<double>(tiny_config().video_shape(), 92));
    DerainOptions o;
    o.lambda = 0.0;
    o.t_skip = 2;
    o.seed = 4;
    EXPECT_EQ(derain_video(model, pixels, o, s).output, pure_reconstruction(model, pixels, 4, s));
    o.attention_switch = false;
    EXPECT_EQ(derain_video(model, pixels, o, s).output, pure_reconstruction(model, pixels, 4, s));
}

TEST(Pipeline, RejectsInvalidOptions) {
    const auto model = randomized(tiny_config(), 93);
    const NoiseSchedule s = short_schedule(10);
    const auto pixels = to_pixels(random_latent<double>(tiny_config().video_shape(), 94));
    DerainOptions o;
    o.t_skip = 11;
    EXPECT_THROW(derain_video(model, pixels, o, s), std::invalid_argument);
    o.t_skip = 2;
    o.blocks = std::set<std::size_t>{5};
    EXPECT_THROW(derain_video(model, pixels, o, s), std::invalid_argument);
    o.blocks.reset();
    o.lambda = -1.0;
    EXPECT_THROW(derain_video(model, pixels, o, s), std::invalid_argument);
}

TEST(Pipeline, ImplicitModeInvertsWithConcept) {
    const auto model = randomized(tiny_config(), 95);
    const NoiseSchedule s = short_schedule(8);
    const auto pixels = to_pixels(random_latent<double>(tiny_config().video_shape(), 96));
    DerainOptions o;
    o.implicit = true;
    o.t_skip = 2;
    o.seed = 2;
    const auto r = derain_video(model, pixels, o, s);
    EXPECT_EQ(r.record.condition_used, parse_prompt("light rain", 3));
    const auto expected = to_pixels(reconstruct(r.record, null_condition(3), model, s));
    EXPECT_EQ(r.output, expected);
}
