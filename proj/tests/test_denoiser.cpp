// Copyright (C) 2026 The derain authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>

#include "derain/denoiser.hpp"
#include "derain/schedule.hpp"
#include "derain/training.hpp"
#include "test_support.hpp"

using namespace derain;
using derain::testing::randomized;
using derain::testing::tiny_config;

namespace {

Matrix<double> naive_attention(const Matrix<double>& q, const Matrix<double>& k, const Matrix<double>& v,
                               std::size_t heads) {
    const std::size_t hd = q.cols / heads;
    Matrix<double> out(q.rows, q.cols);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < q.rows; ++i) {
            std::vector<double> w(k.rows);
            double mx = -1e300;
            for (std::size_t j = 0; j < k.rows; ++j) {
                double s = 0;
                for (std::size_t d = 0; d < hd; ++d) {
                    s += q(i, h * hd + d) * k(j, h * hd + d);
                }
                w[j] = s / std::sqrt(static_cast<double>(hd));
                mx = std::max(mx, w[j]);
            }
            double z = 0;
            for (double& x : w) {
                x = std::exp(x - mx);
                z += x;
            }
            for (std::size_t j = 0; j < k.rows; ++j) {
                for (std::size_t d = 0; d < hd; ++d) {
                    out(i, h * hd + d) += w[j] / z * v(j, h * hd + d);
                }
            }
        }
    }
    return out;
}

}  // namespace

// Gradient and optimizer buffers must start at zero, norm gains included.
TEST(Denoiser, ZeroBuffersAreZero) {
    const DenoiserConfig c = tiny_config();
    DenoiserParams<double> z = DenoiserParams<double>::zeros(c);
    z.visit([](const std::string& name, Matrix<double>& m) {
        for (double v : m.data) {
            ASSERT_EQ(v, 0.0) << name;
        }
    });
    const DenoiserParams<double> id = DenoiserParams<double>::identity(c);
    EXPECT_EQ(id.lnf_g.data, std::vector<double>(c.dim, 1.0));
    EXPECT_EQ(id.blocks[0].ln1_g.data, std::vector<double>(c.dim, 1.0));
}

TEST(Denoiser, AnalyticGradientMatchesCentralDifferences) {
    const DenoiserConfig c = tiny_config();
    Denoiser<double> model = randomized(c, 3);
    const NoiseSchedule s = build_schedule(10, 1e-3, 0.2, ScheduleKind::linear);
    const Video<double> x0 = gaussian_video<double>(c.video_shape(), 11);
    const Video<double> eps = gaussian_video<double>(c.video_shape(), 12);
    const TextCondition cond = make_condition({vocab::scene, vocab::heavy, vocab::rain}, c.text_len);
    const std::size_t t = 6;

    DenoiserParams<double> grad = DenoiserParams<double>::zeros(c);
    grad.visit([](const std::string&, Matrix<double>& m) { m.zero(); });
    denoising_loss(model, x0, t, eps, cond, s, &grad);

    std::vector<Matrix<double>*> analytic;
    grad.visit([&](const std::string&, Matrix<double>& m) { analytic.push_back(&m); });
    std::vector<std::string> names;
    std::vector<Matrix<double>*> params;
    model.mutable_params().visit([&](const std::string& name, Matrix<double>& m) {
        names.push_back(name);
        params.push_back(&m);
    });
    ASSERT_EQ(params.size(), analytic.size());

    const double h = 1e-5;
    double worst = 0;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        double diff2 = 0, norm_a = 0, norm_n = 0;
        for (std::size_t i = 0; i < params[k]->data.size(); ++i) {
            double& p = params[k]->data[i];
            const double saved = p;
            p = saved + h;
            const double up = denoising_loss(model, x0, t, eps, cond, s);
            p = saved - h;
            const double down = denoising_loss(model, x0, t, eps, cond, s);
            p = saved;
            const double numeric = (up - down) / (2 * h);
            const double a = analytic[k]->data[i];
            diff2 += (a - numeric) * (a - numeric);
            norm_a += a * a;
            norm_n += numeric * numeric;
            ++checked;
        }
        const double denom = std::sqrt(norm_a) + std::sqrt(norm_n);
        if (denom < 1e-8) {
            // Zero by construction: key biases shift every score of a row
            // equally, and vocabulary rows absent from the prompt are unused.
            EXPECT_LT(std::sqrt(norm_a), 1e-8) << names[k];
            continue;
        }
        const double rel = std::sqrt(diff2) / denom;
        worst = std::max(worst, rel);
        EXPECT_LT(rel, 1e-3) << names[k];
    }
    EXPECT_GT(checked, 500u);
    RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Denoiser, AttentionMatchesNaiveOracle) {
    Rng rng(5);
    std::normal_distribution<double> n;
    Matrix<double> q(7, 12), k(9, 12), v(9, 12);
    for (auto* m : {&q, &k, &v}) {
        for (auto& x : m->data) {
            x = n(rng);
        }
    }
    const Matrix<double> got = multi_head_attention(q, k, v, 3);
    const Matrix<double> want = naive_attention(q, k, v, 3);
    for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_NEAR(got.data[i], want.data[i], 1e-12);
    }
}

TEST(Denoiser, LayerNormRowsAreStandardized) {
    Rng rng(2);
    std::normal_distribution<double> n(3.0, 2.0);
    Matrix<double> x(5, 16);
    for (auto& v : x.data) {
        v = n(rng);
    }
    const Matrix<double> y = layer_norm(x, Matrix<double>(1, 16, 1.0), Matrix<double>(1, 16, 0.0));
    for (std::size_t r = 0; r < 5; ++r) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < 16; ++c) {
            mean += y(r, c) / 16;
        }
        for (std::size_t c = 0; c < 16; ++c) {
            var += (y(r, c) - mean) * (y(r, c) - mean) / 16;
        }
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-4);
    }
}

TEST(Denoiser, ImageEmbeddingIgnoresCondition) {
    const DenoiserConfig c = tiny_config();
    const Denoiser<double> m = randomized(c, 4);
    const Video<double> x = gaussian_video<double>(c.video_shape(), 1);
    const auto a = m.embed(null_condition(c.text_len), x, 3);
    const auto b = m.embed(make_condition({vocab::rain}, c.text_len), x, 3);
    EXPECT_EQ(a.img_part, b.img_part);
    EXPECT_NE(a.text_part, b.text_part);
}

TEST(Denoiser, WordEncodingDependsOnPromptContext) {
    const DenoiserConfig c = tiny_config();
    const Denoiser<double> m = randomized(c, 4);
    const auto alone = m.encode_text(make_condition({vocab::rain}, c.text_len));
    const auto in_ctx = m.encode_text(make_condition({vocab::rain, vocab::heavy}, c.text_len));
    double d = 0;
    for (std::size_t k = 0; k < c.dim; ++k) {
        d += std::abs(alone(0, k) - in_ctx(0, k));
    }
    EXPECT_GT(d, 1e-6);
}

TEST(Denoiser, PatchifyRoundTrips) {
    const DenoiserConfig c = tiny_config();
    const Denoiser<double> m = randomized(c, 4);
    const Video<double> x = gaussian_video<double>(c.video_shape(), 9);
    EXPECT_EQ(m.unpatchify(m.patchify(x)), x);
}

TEST(Denoiser, ForwardIsDeterministicAndShaped) {
    const DenoiserConfig c = tiny_config();
    const Denoiser<double> m = randomized(c, 4);
    const Video<double> x = gaussian_video<double>(c.video_shape(), 9);
    const TextCondition cond = make_condition({vocab::scene}, c.text_len);
    const Video<double> a = m.predict_eps(x, 4, cond);
    EXPECT_EQ(a.shape, c.video_shape());
    EXPECT_EQ(a, m.predict_eps(x, 4, cond));
    ForwardCache<double> cache;
    EXPECT_EQ(a, m.forward_train(x, 4, cond, cache));
}

TEST(Denoiser, RejectsMismatchedInputs) {
    const DenoiserConfig c = tiny_config();
    const Denoiser<double> m = randomized(c, 4);
    const Video<double> wrong({1, 3, 4, 4});
    EXPECT_THROW(m.predict_eps(wrong, 1, null_condition(c.text_len)), std::invalid_argument);
    EXPECT_THROW(m.predict_eps(Video<double>(c.video_shape()), 1, null_condition(c.text_len + 1)),
                 std::invalid_argument);
    DenoiserConfig bad = c;
    bad.heads = 3;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Denoiser, TrainingRejectsEmbeddingOverrides) {
    const DenoiserConfig c = tiny_config();
    const Denoiser<double> m = randomized(c, 4);
    TextCondition cond = null_condition(c.text_len);
    cond.token_ids[0] = vocab::pseudo;
    cond.embedding_overrides[0] = std::vector<double>(c.dim, 0.5);
    const NoiseSchedule s = build_schedule(10, 1e-3, 0.2, ScheduleKind::linear);
    const Video<double> x(c.video_shape());
    EXPECT_NO_THROW(m.predict_eps(x, 1, cond));
    EXPECT_THROW(denoising_loss(m, x, 1, x, cond, s), std::invalid_argument);
}
