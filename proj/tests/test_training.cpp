#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "nvp/checkpoint.hpp"
#include "nvp/training.hpp"
#include "oracles.hpp"

using nvp::GeneratorKind;
using nvp::GeneratorSpec;
using nvp::Tensor;
using nvp::Tensor64;
using nvp::TrainConfig;

namespace {

GeneratorSpec tiny_spec(GeneratorKind kind, std::int64_t t = 4, std::int64_t n = 4,
                        std::int64_t c = 2, std::int64_t h = 6, std::int64_t w = 6) {
    GeneratorSpec s;
    s.kind = kind;
    s.channels1 = s.channels2 = c;
    s.height = h;
    s.width = w;
    s.obs_len = t;
    s.pred_len = n;
    return s;
}

Tensor tiny_wave_frames(std::int64_t frames, std::int64_t h, std::int64_t w,
                        std::uint64_t seed) {
    nvp::WaveParams p;
    p.height = h;
    p.width = w;
    p.speed = 0.7;
    p.wavelength = 5.0;
    p.direction = 0.4;
    p.amplitude = 0.9;
    p.noise_sigma = 0.0;
    p.seed = seed;
    return nvp::generate_waves<float>(p, frames);
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(LrSchedule, DropsByFactorTenHalfway) {
    EXPECT_DOUBLE_EQ(nvp::lr_schedule(49, 100, 0.001), 0.001);
    EXPECT_DOUBLE_EQ(nvp::lr_schedule(50, 100, 0.001), 0.0001);
    EXPECT_DOUBLE_EQ(nvp::lr_schedule(99, 100, 0.001), 0.0001);
    EXPECT_THROW(nvp::lr_schedule(100, 100, 0.001), nvp::Error);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
    auto p = Tensor64::from({3}, {1.0, 2.0, 3.0}, true);
    p.zero_grad();
    auto* node = p.node_ptr().get();
    node->grad = {0.4, -0.7, 0.0};
    std::vector<Tensor64> params{p};
    nvp::AdamState<double> adam;
    adam.init(params);
    nvp::adam_step(adam, params, 0.01);
    // Bias-corrected first step moves by ~lr * sign(g); zero grad: no change.
    EXPECT_NEAR(p.at({0}), 1.0 - 0.01, 1e-8);
    EXPECT_NEAR(p.at({1}), 2.0 + 0.01, 1e-8);
    EXPECT_DOUBLE_EQ(p.at({2}), 3.0);
}

TEST(Adam, MatchesScalarOracleOnQuadratic) {
    // Minimize f(x) = (x - 3)^2 for 100 steps and compare trajectories.
    auto x = Tensor64::from({1}, {0.0}, true);
    std::vector<Tensor64> params{x};
    nvp::AdamState<double> adam;
    adam.init(params);

    oracle::ScalarAdam<double> ref;
    double ref_x = 0.0;
    for (int step = 0; step < 100; ++step) {
        x.zero_grad();
        auto loss = nvp::mse(x, Tensor64::filled({1}, 3.0), nvp::Reduction::sum);
        nvp::backward(loss);
        nvp::adam_step(adam, params, 0.05);

        const double g = 2.0 * (ref_x - 3.0);
        ref_x += ref.update(g, 0.05);
        ASSERT_NEAR(x.at({0}), ref_x, 1e-12) << "step " << step;
    }

    // A parameter that never received a gradient is an error.
    auto fresh = Tensor64::from({2}, {1.0, 2.0}, true);
    std::vector<Tensor64> fresh_params{fresh};
    nvp::AdamState<double> fresh_adam;
    fresh_adam.init(fresh_params);
    EXPECT_THROW(nvp::adam_step(fresh_adam, fresh_params, 0.05), nvp::Error);
}

TEST(Clip, FactorAndInvariance) {
    auto p = Tensor64::from({4}, {0.0, 0.0, 0.0, 0.0}, true);
    auto* node = p.node_ptr().get();
    node->grad = {0.006, 0.008, 0.0, 0.0};  // norm 0.01
    std::vector<Tensor64> params{p};
    const double factor = nvp::clip_gradients(params, 0.001);
    EXPECT_NEAR(factor, 0.1, 1e-12);
    EXPECT_NEAR(p.grad()[0], 0.0006, 1e-12);

    // Norm below the cap: untouched.
    node->grad = {1e-5, 0.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(nvp::clip_gradients(params, 0.001), 1.0);
    EXPECT_DOUBLE_EQ(p.grad()[0], 1e-5);

    // Post-clip global norm never exceeds the cap; no magnitude grows.
    nvp::Rng rng(3);
    auto q = Tensor64::uniform({64}, rng, -1.0, 1.0, true);
    q.zero_grad();
    auto* qn = q.node_ptr().get();
    for (auto& g : qn->grad) g = rng.uniform(-3.0, 3.0);
    auto before = qn->grad;
    std::vector<Tensor64> qp{q};
    nvp::clip_gradients(qp, 0.001);
    double norm = 0.0;
    for (std::size_t i = 0; i < qn->grad.size(); ++i) {
        EXPECT_LE(std::abs(qn->grad[i]), std::abs(before[i]));
        norm += qn->grad[i] * qn->grad[i];
    }
    EXPECT_LE(std::sqrt(norm), 0.001 + 1e-9);
}

TEST(GeneratorLoss, PerfectOutputsGiveZero) {
    auto spec = tiny_spec(GeneratorKind::benchmark);
    TrainConfig cfg;
    cfg.adversarial = false;
    nvp::Rng rng(1);
    std::vector<Tensor> targets;
    for (int i = 0; i < 8; ++i)
        targets.push_back(Tensor::uniform({1, 1, 6, 6}, rng, -0.9f, 0.9f));
    nvp::GeneratorOutput<float> out;
    out.recon.assign(targets.begin(), targets.begin() + 4);
    out.pred.assign(targets.begin() + 4, targets.end());
    auto parts = nvp::generator_loss(out, targets, 4, nullptr, cfg);
    EXPECT_EQ(parts.total.item(), 0.0f);
    EXPECT_EQ(parts.rec, 0.0);
    EXPECT_EQ(parts.pred, 0.0);
}

TEST(GeneratorLoss, WeightedSumArithmetic) {
    // Components of 2.0 each with unit weights and lambda_adv = 0 -> 4.0.
    TrainConfig cfg;
    cfg.adversarial = false;
    auto zero = Tensor::zeros({1, 1, 1, 2});
    auto two = Tensor::filled({1, 1, 1, 2}, 1.0f);  // sum of squares = 2
    nvp::GeneratorOutput<float> out;
    out.recon = {two};
    out.pred = {two};
    std::vector<Tensor> targets{zero, zero};
    auto parts = nvp::generator_loss(out, targets, 1, nullptr, cfg);
    EXPECT_FLOAT_EQ(parts.total.item(), 4.0f);
    EXPECT_DOUBLE_EQ(parts.rec, 2.0);
    EXPECT_DOUBLE_EQ(parts.pred, 2.0);
}

TEST(GeneratorLoss, MatchesIndependentRecomputation) {
    TrainConfig cfg;
    cfg.lambda_rec = 0.7;
    cfg.lambda_pred = 1.3;
    cfg.adversarial = false;
    nvp::Rng rng(7);
    nvp::GeneratorOutput<float> out;
    std::vector<Tensor> targets;
    for (int i = 0; i < 6; ++i) targets.push_back(Tensor::uniform({2, 1, 3, 3}, rng, -1.f, 1.f));
    for (int i = 0; i < 3; ++i) out.recon.push_back(Tensor::uniform({2, 1, 3, 3}, rng, -1.f, 1.f));
    for (int i = 0; i < 3; ++i) out.pred.push_back(Tensor::uniform({2, 1, 3, 3}, rng, -1.f, 1.f));

    auto parts = nvp::generator_loss(out, targets, 3, nullptr, cfg);

    double rec = 0, pred = 0;
    for (int i = 0; i < 3; ++i)
        for (std::int64_t k = 0; k < 18; ++k) {
            const double dr = out.recon[i].data()[k] - targets[i].data()[k];
            rec += dr * dr;
            const double dp = out.pred[i].data()[k] - targets[3 + i].data()[k];
            pred += dp * dp;
        }
    EXPECT_NEAR(parts.rec, rec, 1e-4);
    EXPECT_NEAR(parts.pred, pred, 1e-4);
    EXPECT_NEAR(parts.total.item(), 0.7 * rec + 1.3 * pred, 1e-3);
}

TEST(MultiScaleLoss, PerfectBothScalesGiveZeroAndExtentSplit) {
    TrainConfig cfg;
    cfg.adversarial = false;
    nvp::Rng rng(9);
    std::vector<Tensor> targets;
    for (int i = 0; i < 32; ++i)
        targets.push_back(Tensor::uniform({1, 1, 4, 4}, rng, -0.9f, 0.9f));
    auto targets1 = nvp::downsample(targets);
    ASSERT_EQ(targets1.size(), 16u);  // scale-1 extent: 8 past + 8 future

    nvp::GeneratorOutput<float> out;
    out.recon.assign(targets.begin(), targets.begin() + 16);
    out.pred.assign(targets.begin() + 16, targets.end());
    out.recon_scale1.assign(targets1.begin(), targets1.begin() + 8);
    out.pred_scale1.assign(targets1.begin() + 8, targets1.end());
    auto parts = nvp::multi_scale_loss(out, targets, 16, nullptr, nullptr, cfg);
    EXPECT_EQ(parts.total.item(), 0.0f);

    // Equals the sum of per-scale generator losses for random outputs.
    for (auto& f : out.pred) f = Tensor::uniform({1, 1, 4, 4}, rng, -0.9f, 0.9f);
    for (auto& f : out.pred_scale1) f = Tensor::uniform({1, 1, 4, 4}, rng, -0.9f, 0.9f);
    auto whole = nvp::multi_scale_loss(out, targets, 16, nullptr, nullptr, cfg);
    nvp::GeneratorOutput<float> s0{out.recon, out.pred, {}, {}};
    nvp::GeneratorOutput<float> s1{out.recon_scale1, out.pred_scale1, {}, {}};
    auto p0 = nvp::generator_loss(s0, targets, 16, nullptr, cfg);
    auto p1 = nvp::generator_loss(s1, targets1, 8, nullptr, cfg);
    EXPECT_NEAR(whole.total.item(), p0.total.item() + p1.total.item(), 1e-3);
}

TEST(TrainLoop, AdversarialOffNeverTouchesCritic) {
    auto frames = tiny_wave_frames(16, 6, 6, 1);
    nvp::WindowStream<float> stream(frames, 4, 4, 1, 0, 16, 1, 3, true);
    auto gen = nvp::init_generator<float>(tiny_spec(GeneratorKind::benchmark), 5);
    std::vector<nvp::CriticModel<float>> critics;  // none
    nvp::AdamState<float> adam_g;
    auto gp = nvp::collect_generator_params(gen);
    adam_g.init(gp);
    TrainConfig cfg;
    cfg.adversarial = false;
    cfg.total_iterations = 5;
    cfg.batch_size = 1;
    nvp::train_loop(gen, critics, stream, adam_g, nullptr, cfg, nullptr, 0);
    EXPECT_EQ(adam_g.step, 5);  // generator update count == iterations
}

TEST(TrainLoop, CriticUpdateCountIsHalfOfIterations) {
    auto frames = tiny_wave_frames(16, 6, 6, 2);
    nvp::WindowStream<float> stream(frames, 4, 4, 1, 0, 16, 1, 3, true);
    auto gen = nvp::init_generator<float>(tiny_spec(GeneratorKind::benchmark), 5);
    std::vector<nvp::CriticModel<float>> critics{
        nvp::init_critic<float>(nvp::CriticSpec::full_scale(1), 6)};
    nvp::AdamState<float> adam_g, adam_d;
    auto gp = nvp::collect_generator_params(gen);
    auto dp = nvp::collect_critic_params(critics);
    adam_g.init(gp);
    adam_d.init(dp);
    TrainConfig cfg;
    cfg.adversarial = true;
    cfg.total_iterations = 7;
    cfg.batch_size = 1;
    nvp::train_loop(gen, critics, stream, adam_g, &adam_d, cfg, nullptr, 0);
    EXPECT_EQ(adam_g.step, 7);
    EXPECT_EQ(adam_d.step, 3);  // floor(7 / 2)
}

TEST(TrainLoop, DeterministicMetricsAcrossRuns) {
    for (auto kind : {GeneratorKind::benchmark, GeneratorKind::multi_res_lstm}) {
        auto run_once = [&](std::uint64_t seed) {
            auto frames = tiny_wave_frames(20, 6, 6, 4);
            nvp::WindowStream<float> stream(frames, 4, 4, 1, 0, 20, 2, seed, true);
            auto gen = nvp::init_generator<float>(tiny_spec(kind), seed);
            std::vector<nvp::CriticModel<float>> critics{
                nvp::init_critic<float>(nvp::CriticSpec::full_scale(1), seed + 1)};
            if (kind == GeneratorKind::multi_res_lstm)
                critics.push_back(nvp::init_critic<float>(nvp::CriticSpec::half_scale(1),
                                                          seed + 2));
            nvp::AdamState<float> adam_g, adam_d;
            auto gp = nvp::collect_generator_params(gen);
            auto dp = nvp::collect_critic_params(critics);
            adam_g.init(gp);
            adam_d.init(dp);
            TrainConfig cfg;
            cfg.adversarial = true;
            cfg.total_iterations = 4;
            cfg.batch_size = 2;
            cfg.seed = seed;
            std::ostringstream metrics;
            nvp::train_loop(gen, critics, stream, adam_g, &adam_d, cfg, &metrics, 0);
            return metrics.str();
        };
        const auto a = run_once(11);
        const auto b = run_once(11);
        EXPECT_EQ(a, b) << nvp::to_string(kind);
        EXPECT_NE(a.find("iteration,lr,l_rec,l_pred,l_adv,l_d"), std::string::npos);
    }
}

TEST(TrainLoop, NanAbortsWithDiagnostic) {
    auto frames = tiny_wave_frames(16, 6, 6, 5);
    nvp::WindowStream<float> stream(frames, 4, 4, 1, 0, 16, 1, 3, true);
    auto gen = nvp::init_generator<float>(tiny_spec(GeneratorKind::benchmark), 5);
    gen.scales[0].encoder.layer1.w_xi.mutable_data()[0] =
        std::numeric_limits<float>::quiet_NaN();
    std::vector<nvp::CriticModel<float>> critics;
    nvp::AdamState<float> adam_g;
    auto gp = nvp::collect_generator_params(gen);
    adam_g.init(gp);
    TrainConfig cfg;
    cfg.adversarial = false;
    cfg.total_iterations = 3;
    cfg.batch_size = 1;
    try {
        nvp::train_loop(gen, critics, stream, adam_g, nullptr, cfg, nullptr, 0);
        FAIL() << "expected NumericError";
    } catch (const nvp::NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("iteration 0"), std::string::npos);
        EXPECT_NE(msg.find("l_rec"), std::string::npos);
    }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    auto gen = nvp::init_generator<float>(tiny_spec(GeneratorKind::multi_res_lstm), 21);
    std::vector<nvp::CriticModel<float>> critics{
        nvp::init_critic<float>(nvp::CriticSpec::full_scale(1), 22),
        nvp::init_critic<float>(nvp::CriticSpec::half_scale(1), 23)};
    nvp::AdamState<float> adam_g, adam_d;
    auto gp = nvp::collect_generator_params(gen);
    auto dp = nvp::collect_critic_params(critics);
    adam_g.init(gp);
    adam_d.init(dp);
    TrainConfig cfg;
    cfg.adversarial = true;

    const auto p1 = temp_path("nvp_ck_a.nvck");
    const auto p2 = temp_path("nvp_ck_b.nvck");
    auto ck = nvp::build_checkpoint(gen, critics, adam_g, &adam_d, cfg, 17, 5,
                                    nvp::NormScale{-2.5, 3.5});
    nvp::save_checkpoint(p1, ck);
    auto loaded = nvp::load_checkpoint<float>(p1);
    nvp::save_checkpoint(p2, loaded);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_EQ(b1, b2);
    EXPECT_FALSE(b1.empty());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST(Checkpoint, ResumePreservesNextStepBitExactly) {
    const auto ck_path = temp_path("nvp_ck_resume.nvck");
    auto frames = tiny_wave_frames(24, 6, 6, 6);

    // Train 4 iterations, checkpoint, then one more step.
    auto gen = nvp::init_generator<float>(tiny_spec(GeneratorKind::benchmark), 31);
    std::vector<nvp::CriticModel<float>> critics{
        nvp::init_critic<float>(nvp::CriticSpec::full_scale(1), 32)};
    nvp::AdamState<float> adam_g, adam_d;
    auto gp = nvp::collect_generator_params(gen);
    auto dp = nvp::collect_critic_params(critics);
    adam_g.init(gp);
    adam_d.init(dp);
    TrainConfig cfg;
    cfg.adversarial = true;
    cfg.total_iterations = 4;
    cfg.batch_size = 2;
    cfg.seed = 31;
    nvp::WindowStream<float> stream(frames, 4, 4, 1, 0, 24, 2, cfg.seed, true);
    nvp::train_loop(gen, critics, stream, adam_g, &adam_d, cfg, nullptr, 0);

    auto ck = nvp::build_checkpoint(gen, critics, adam_g, &adam_d, cfg, 4, stream.cursor(),
                                    nvp::NormScale{-1, 1});
    nvp::save_checkpoint(ck_path, ck);

    cfg.total_iterations = 5;
    nvp::train_loop(gen, critics, stream, adam_g, &adam_d, cfg, nullptr, 4);
    auto direct = nvp::collect_generator_params(gen);

    // Restore and take the same step.
    auto st = nvp::restore_checkpoint(nvp::load_checkpoint<float>(ck_path));
    st.config.total_iterations = 5;
    nvp::WindowStream<float> stream2(frames, 4, 4, 1, 0, 24, 2, st.config.seed, true);
    stream2.set_cursor(st.data_cursor);
    nvp::train_loop(st.generator, st.critics, stream2, st.adam_g, &st.adam_d, st.config,
                    nullptr, st.iteration);
    auto resumed = nvp::collect_generator_params(st.generator);

    ASSERT_EQ(direct.size(), resumed.size());
    for (std::size_t i = 0; i < direct.size(); ++i)
        EXPECT_EQ(direct[i].data(), resumed[i].data()) << "param " << i;
    std::remove(ck_path.c_str());
}

TEST(Overfit, DecoderMemorizesSingleSequence) {
    // Reconstruction loss falls below 1e-3 (per element) after overfitting
    // one sequence with the pixel losses alone.
    auto frames = tiny_wave_frames(8, 6, 6, 7);
    nvp::WindowStream<float> stream(frames, 4, 4, 1, 0, 8, 1, 0, false);
    auto gen = nvp::init_generator<float>(tiny_spec(GeneratorKind::benchmark, 4, 4, 4), 41);
    std::vector<nvp::CriticModel<float>> critics;
    nvp::AdamState<float> adam_g;
    auto gp = nvp::collect_generator_params(gen);
    adam_g.init(gp);
    TrainConfig cfg;
    cfg.adversarial = false;
    cfg.total_iterations = 400;
    cfg.batch_size = 1;
    cfg.learning_rate = 3e-3;
    nvp::train_loop(gen, critics, stream, adam_g, nullptr, cfg, nullptr, 0);

    auto batch = stream.next();
    auto all = nvp::split_frames(batch);
    std::vector<Tensor> obs(all.begin(), all.begin() + 4);
    nvp::NoGradGuard no_grad;
    auto out = nvp::generator_forward(gen, obs, 4);
    double rec = 0.0;
    std::int64_t count = 0;
    for (int i = 0; i < 4; ++i) {
        for (std::int64_t k = 0; k < out.recon[i].numel(); ++k) {
            const double d = out.recon[i].data()[k] - all[i].data()[k];
            rec += d * d;
            ++count;
        }
    }
    EXPECT_LT(rec / double(count), 1e-3);
}

TEST(Overfit, OracleScale1ConditioningBeatsBenchmark) {
    // With the scale-1 predictions substituted by the true downsampled
    // future, the scale-0 predictor sees a smoothed version of its target
    // and must reach a lower prediction error than the benchmark under the
    // same training budget.
    auto frames = tiny_wave_frames(8, 6, 6, 8);
    const std::int64_t t = 4, n = 4;
    auto batch = nvp::make_batch(frames, {0}, t, n);
    auto all = nvp::split_frames(batch);
    std::vector<Tensor> obs(all.begin(), all.begin() + t);
    auto targets1 = nvp::downsample(all);
    std::vector<Tensor> oracle_scale1(targets1.begin() + t / 2, targets1.end());

    TrainConfig cfg;
    cfg.adversarial = false;
    cfg.learning_rate = 3e-3;

    auto pred_error = [&](const std::vector<Tensor>& pred) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t k = 0; k < pred[i].numel(); ++k) {
                const double d = pred[i].data()[k] - all[t + i].data()[k];
                acc += d * d;
            }
        return acc;
    };

    const int iters = 120;

    // Benchmark.
    auto bench = nvp::init_generator<float>(tiny_spec(GeneratorKind::benchmark), 51);
    {
        nvp::AdamState<float> adam;
        auto params = nvp::collect_generator_params(bench);
        adam.init(params);
        for (int it = 0; it < iters; ++it) {
            for (auto& p : params) p.zero_grad();
            auto out = nvp::forward_benchmark(bench, obs, n);
            auto parts = nvp::generator_loss(out, all, t, nullptr, cfg);
            nvp::backward(parts.total);
            nvp::clip_gradients(params, cfg.clip_norm);
            nvp::adam_step(adam, params, cfg.learning_rate);
        }
    }

    // Two-scale model with oracle half-rate futures.
    auto mr = nvp::init_generator<float>(tiny_spec(GeneratorKind::multi_res_lstm), 51);
    {
        nvp::AdamState<float> adam;
        auto params = nvp::collect_generator_params(mr);
        adam.init(params);
        for (int it = 0; it < iters; ++it) {
            for (auto& p : params) p.zero_grad();
            auto out = nvp::forward_multi_res_lstm(mr, obs, n, &oracle_scale1);
            auto parts = nvp::multi_scale_loss(out, all, t, nullptr, nullptr, cfg);
            nvp::backward(parts.total);
            nvp::clip_gradients(params, cfg.clip_norm);
            nvp::adam_step(adam, params, cfg.learning_rate);
        }
    }

    nvp::NoGradGuard no_grad;
    const double bench_err = pred_error(nvp::forward_benchmark(bench, obs, n).pred);
    const double mr_err =
        pred_error(nvp::forward_multi_res_lstm(mr, obs, n, &oracle_scale1).pred);
    EXPECT_LE(mr_err, bench_err) << "oracle-conditioned " << mr_err << " vs benchmark "
                                 << bench_err;
}
