#pragma once

#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "nvp/checkpoint.hpp"
#include "nvp/eval.hpp"
#include "nvp/gradcheck_suite.hpp"

extern "C" void openblas_set_num_threads(int);

namespace nvp::cli {

namespace detail {

inline std::pair<std::int64_t, std::int64_t> parse_channels(const std::string& s) {
    const auto comma = s.find(',');
    try {
        if (comma == std::string::npos) {
            const std::int64_t c = std::stoll(s);
            return {c, c};
        }
        return {std::stoll(s.substr(0, comma)), std::stoll(s.substr(comma + 1))};
    } catch (const std::exception&) {
        throw CLI::ValidationError("--channels", "expected C or C1,C2, got '" + s + "'");
    }
}

inline std::int64_t split_index(std::int64_t total, double split) {
    if (split <= 0.0 || split >= 1.0) throw DataError("split fraction must be in (0, 1)");
    return static_cast<std::int64_t>(split * static_cast<double>(total));
}

template <typename T>
NormScale range_scale(const TensorT<T>& frames, std::int64_t lo_frame, std::int64_t hi_frame) {
    const std::int64_t hw = frames.extent(1) * frames.extent(2);
    const auto& d = frames.data();
    double lo = d[lo_frame * hw], hi = lo;
    for (std::int64_t i = lo_frame * hw; i < hi_frame * hw; ++i) {
        lo = std::min<double>(lo, d[i]);
        hi = std::max<double>(hi, d[i]);
    }
    if (hi - lo < 1e-12) throw DataError("data has no range (constant values)");
    return {lo, hi};
}

struct TrainArgs {
    std::string data, model = "benchmark", channels = "64", adv = "off";
    std::string out_checkpoint, metrics_csv;
    std::int64_t iters = 1000, batch = 4, t = 16, n = 16, stride = 1, critic_period = 2;
    double lr = 1e-3, clip = 1e-3, lambda_adv = 0.1, lambda_rec = 1.0, lambda_pred = 1.0;
    double split = 0.88;
    std::uint64_t seed = 0;
};

template <typename T = float>
int run_train(const TrainArgs& a, std::ostream& out) {
    auto frames = read_tensor_file<T>(a.data);
    if (frames.rank() != 3) throw DataError("train: data file must hold [T,H,W] frames");
    const std::int64_t total = frames.extent(0);
    const std::int64_t split_at = split_index(total, a.split);
    const NormScale norm = range_scale(frames, 0, split_at);
    auto frames_n = apply_norm_scale(frames, norm);

    GeneratorSpec spec;
    spec.kind = generator_kind_from(a.model);
    std::tie(spec.channels1, spec.channels2) = parse_channels(a.channels);
    spec.height = frames.extent(1);
    spec.width = frames.extent(2);
    spec.obs_len = a.t;
    spec.pred_len = a.n;
    spec.validate();

    TrainConfig cfg;
    cfg.lambda_rec = a.lambda_rec;
    cfg.lambda_pred = a.lambda_pred;
    cfg.lambda_adv = a.lambda_adv;
    cfg.learning_rate = a.lr;
    cfg.total_iterations = a.iters;
    cfg.clip_norm = a.clip;
    cfg.critic_period = a.critic_period;
    cfg.adversarial = a.adv == "on";
    cfg.seed = a.seed;
    cfg.batch_size = a.batch;
    cfg.validate();

    auto gen = init_generator<T>(spec, cfg.seed);
    std::vector<CriticModel<T>> critics;
    if (cfg.adversarial) {
        critics.push_back(init_critic<T>(CriticSpec::full_scale(spec.input_channels),
                                         cfg.seed + 1));
        if (spec.kind == GeneratorKind::multi_res_lstm)
            critics.push_back(init_critic<T>(CriticSpec::half_scale(spec.input_channels),
                                             cfg.seed + 2));
    }

    WindowStream<T> stream(frames_n, a.t, a.n, a.stride, 0, split_at, cfg.batch_size, cfg.seed,
                           true);
    out << "training " << a.model << " channels=" << spec.channels1 << "," << spec.channels2
        << " adv=" << a.adv << " iters=" << cfg.total_iterations
        << " windows=" << stream.num_windows() << " batch=" << cfg.batch_size << "\n";

    AdamState<T> adam_g, adam_d;
    auto gen_params = collect_generator_params(gen);
    adam_g.init(gen_params);
    auto critic_params = collect_critic_params(critics);
    adam_d.init(critic_params);

    std::ofstream metrics;
    if (!a.metrics_csv.empty()) {
        metrics.open(a.metrics_csv);
        if (!metrics) throw DataError("train: cannot open metrics file " + a.metrics_csv);
    }
    train_loop(gen, critics, stream, adam_g, cfg.adversarial ? &adam_d : nullptr, cfg,
               a.metrics_csv.empty() ? nullptr : &metrics, 0);

    if (!a.out_checkpoint.empty()) {
        auto ck = build_checkpoint(gen, critics, adam_g, cfg.adversarial ? &adam_d : nullptr,
                                   cfg, cfg.total_iterations, stream.cursor(), norm);
        save_checkpoint(a.out_checkpoint, ck);
        out << "checkpoint written to " << a.out_checkpoint << "\n";
    }
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, report;
    std::int64_t stride = 32;
    double split = 0.88, peak = 0.0;
};

template <typename T = float>
int run_eval(const EvalArgs& a, std::ostream& out) {
    auto st = restore_checkpoint(load_checkpoint<T>(a.checkpoint));
    auto frames = read_tensor_file<T>(a.data);
    if (frames.rank() != 3) throw DataError("eval: data file must hold [T,H,W] frames");
    if (frames.extent(1) != st.generator.spec.height ||
        frames.extent(2) != st.generator.spec.width)
        throw DataError("eval: data extent " + shape_str(frames.shape()) +
                        " does not match the checkpointed model");
    auto frames_n = apply_norm_scale(frames, st.norm);
    const std::int64_t total = frames.extent(0);
    const std::int64_t split_at = split_index(total, a.split);

    auto result = evaluate(st.generator, frames_n, st.generator.spec.obs_len,
                           st.generator.spec.pred_len, a.stride, split_at, total, a.peak);

    {
        std::ofstream rf(a.report);
        if (!rf) throw DataError("eval: cannot open report file " + a.report);
        write_report_csv(rf, result.model);
    }
    {
        std::ofstream pf(a.report + ".persistence.csv");
        if (!pf) throw DataError("eval: cannot open persistence report file");
        write_report_csv(pf, result.persistence);
    }

    out << "windows=" << result.model.windows << " peak=" << result.peak << "\n";
    out << "aggregate_psnr=" << result.model.aggregate
        << " persistence_aggregate=" << result.persistence.aggregate << "\n";
    out << "per_window_psnr:";
    for (double v : result.model.per_window) out << ' ' << v;
    out << "\n";
    return 0;
}

struct PredictArgs {
    std::string checkpoint, data, out_path;
    std::int64_t stride = 32;
    double split = 0.88;
};

template <typename T = float>
int run_predict(const PredictArgs& a, std::ostream& out) {
    auto st = restore_checkpoint(load_checkpoint<T>(a.checkpoint));
    auto frames = read_tensor_file<T>(a.data);
    if (frames.rank() != 3) throw DataError("predict: data file must hold [T,H,W] frames");
    auto frames_n = apply_norm_scale(frames, st.norm);
    const std::int64_t total = frames.extent(0);
    const std::int64_t split_at = split_index(total, a.split);
    const std::int64_t t = st.generator.spec.obs_len, n = st.generator.spec.pred_len;
    const auto starts = window_starts(split_at, total, t + n, a.stride);

    const std::int64_t h = frames.extent(1), w = frames.extent(2), hw = h * w;
    std::vector<T> outv;
    outv.reserve(static_cast<std::size_t>(starts.size() * n * hw));
    NoGradGuard no_grad;
    for (std::int64_t start : starts) {
        auto batch = make_batch(frames_n, {start}, t, n);
        auto all = split_frames(batch);
        std::vector<TensorT<T>> obs(all.begin(), all.begin() + t);
        auto fwd = generator_forward(st.generator, obs, n);
        for (const auto& f : fwd.pred)
            outv.insert(outv.end(), f.data().begin(), f.data().end());
    }
    write_tensor_file(a.out_path,
                      TensorT<T>::from({static_cast<std::int64_t>(starts.size()) * n, h, w},
                                       std::move(outv)));
    out << "predictions for " << starts.size() << " windows written to " << a.out_path << "\n";
    return 0;
}

struct InspectArgs {
    std::string checkpoint, data, out_path;
    double split = 0.88;
};

template <typename T = float>
int run_inspect_critic(const InspectArgs& a, std::ostream& out) {
    auto st = restore_checkpoint(load_checkpoint<T>(a.checkpoint));
    if (st.critics.empty())
        throw DataError("inspect-critic: checkpoint carries no critic (trained with --adv off)");
    auto frames = read_tensor_file<T>(a.data);
    if (frames.rank() != 3) throw DataError("inspect-critic: data file must hold [T,H,W] frames");
    auto frames_n = apply_norm_scale(frames, st.norm);
    const std::int64_t total = frames.extent(0);
    const std::int64_t split_at = split_index(total, a.split);
    const std::int64_t t = st.generator.spec.obs_len, n = st.generator.spec.pred_len;
    const auto starts = window_starts(split_at, total, t + n, 32);

    NoGradGuard no_grad;
    auto batch = make_batch(frames_n, {starts.front()}, t, n);
    auto all = split_frames(batch);
    std::vector<TensorT<T>> obs(all.begin(), all.begin() + t);
    std::vector<TensorT<T>> future(all.begin() + t, all.end());
    auto fwd_gen = generator_forward(st.generator, obs, n);

    auto z_true = stack_sequence(obs, future);
    auto z_gen = stack_sequence(obs, fwd_gen.pred);
    auto fwd_true = critic_forward(st.critics[0], z_true, false);
    auto fwd_fake = critic_forward(st.critics[0], z_gen, false);
    const std::size_t layer = second_to_last_layer(fwd_true);
    auto map_true = extract_activation_map(fwd_true, layer, t + n);
    auto map_fake = extract_activation_map(fwd_fake, layer, t + n);

    write_tensor_file(a.out_path + ".true.nvt", map_true);
    write_tensor_file(a.out_path + ".gen.nvt", map_fake);
    out << "activation maps (" << shape_str(map_true.shape()) << ") written to " << a.out_path
        << ".{true,gen}.nvt\n";
    return 0;
}

}  // namespace detail

// Command-line front end; returns the process exit code.
// 0 = success, 1 = usage error, 2 = data/format error, 3 = numerical failure.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    openblas_set_num_threads(1);

    CLI::App app{"Long-horizon video prediction with multi-resolution ConvLSTM generators and "
                 "an energy-based 3D-CNN critic"};
    app.require_subcommand(1);
    app.set_config("--config");
    app.allow_config_extras(CLI::config_extras_mode::error);

    // gen-data
    WaveParams wave;
    std::string gen_out, gen_kind = "plane";
    std::int64_t gen_frames = 2000;
    auto* sc_gen = app.add_subcommand("gen-data", "Generate synthetic traveling-wave frames");
    sc_gen->add_option("--out", gen_out, "Output NVT1 tensor file")->required();
    sc_gen->add_option("--frames", gen_frames, "Number of frames");
    sc_gen->add_option("--height", wave.height, "Grid height");
    sc_gen->add_option("--width", wave.width, "Grid width");
    sc_gen->add_option("--kind", gen_kind, "Wave kind")
        ->check(CLI::IsMember({"plane", "spiral", "pulse"}));
    sc_gen->add_option("--speed", wave.speed, "Speed in pixels/frame");
    sc_gen->add_option("--noise", wave.noise_sigma, "Additive Gaussian noise sigma");
    sc_gen->add_option("--seed", wave.seed, "RNG seed");
    sc_gen->add_option("--wavelength", wave.wavelength, "Wavelength in pixels");
    sc_gen->add_option("--direction", wave.direction, "Direction in radians");
    sc_gen->add_option("--amplitude", wave.amplitude, "Amplitude in [0,1]");

    // train
    detail::TrainArgs train;
    auto* sc_train = app.add_subcommand("train", "Train a generator (optionally adversarial)");
    sc_train->add_option("--data", train.data, "NVT1 frame file")->required();
    sc_train->add_option("--model", train.model, "Architecture")
        ->check(CLI::IsMember({"benchmark", "mrlstm", "mrlayer"}));
    sc_train->add_option("--channels", train.channels, "ConvLSTM channels: C or C1,C2");
    sc_train->add_option("--adv", train.adv, "Adversarial training")
        ->check(CLI::IsMember({"on", "off"}));
    sc_train->add_option("--iters", train.iters, "Training iterations");
    sc_train->add_option("--lr", train.lr, "Base learning rate");
    sc_train->add_option("--clip", train.clip, "Generator gradient clip (global l2)");
    sc_train->add_option("--lambda-adv", train.lambda_adv, "Adversarial loss weight");
    sc_train->add_option("--lambda-rec", train.lambda_rec, "Reconstruction loss weight");
    sc_train->add_option("--lambda-pred", train.lambda_pred, "Prediction loss weight");
    sc_train->add_option("--batch", train.batch, "Batch size");
    sc_train->add_option("--seed", train.seed, "Seed for init and window shuffling");
    sc_train->add_option("--out-checkpoint", train.out_checkpoint, "Checkpoint output path");
    sc_train->add_option("--metrics-csv", train.metrics_csv, "Per-iteration metrics CSV");
    sc_train->add_option("--t", train.t, "Observation length");
    sc_train->add_option("--n", train.n, "Prediction length");
    sc_train->add_option("--stride", train.stride, "Training window stride");
    sc_train->add_option("--split", train.split, "Train fraction of the frame range");
    sc_train->add_option("--critic-period", train.critic_period,
                         "Critic update period in iterations");

    // predict
    detail::PredictArgs predict;
    auto* sc_predict = app.add_subcommand("predict", "Write model predictions for test windows");
    sc_predict->add_option("--checkpoint", predict.checkpoint, "Checkpoint path")->required();
    sc_predict->add_option("--data", predict.data, "NVT1 frame file")->required();
    sc_predict->add_option("--out", predict.out_path, "Output NVT1 file")->required();
    sc_predict->add_option("--stride", predict.stride, "Window stride");
    sc_predict->add_option("--split", predict.split, "Train fraction (test range follows)");

    // eval
    detail::EvalArgs eval_args;
    auto* sc_eval = app.add_subcommand("eval", "Per-horizon PSNR report on the test range");
    sc_eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
    sc_eval->add_option("--data", eval_args.data, "NVT1 frame file")->required();
    sc_eval->add_option("--report", eval_args.report, "Report CSV path")->required();
    sc_eval->add_option("--stride", eval_args.stride, "Window stride");
    sc_eval->add_option("--split", eval_args.split, "Train fraction (test range follows)");
    sc_eval->add_option("--peak", eval_args.peak, "PSNR peak override (default: test max |x|)");

    // count-params
    std::string cp_model = "benchmark", cp_channels = "64";
    std::int64_t cp_height = 19, cp_width = 19;
    auto* sc_count = app.add_subcommand("count-params", "Print the exact parameter count");
    sc_count->add_option("--model", cp_model, "Architecture")
        ->check(CLI::IsMember({"benchmark", "mrlstm", "mrlayer"}));
    sc_count->add_option("--channels", cp_channels, "ConvLSTM channels: C or C1,C2");
    sc_count->add_option("--height", cp_height, "Frame height");
    sc_count->add_option("--width", cp_width, "Frame width");

    // grad-check
    std::int64_t gc_seeds = 20;
    double gc_tolerance = 1e-4;
    auto* sc_gc = app.add_subcommand("grad-check",
                                     "Finite-difference checks for every differentiable op");
    sc_gc->add_option("--seeds", gc_seeds, "Seeds per check");
    sc_gc->add_option("--tolerance", gc_tolerance, "Max relative error allowed");

    // inspect-critic
    detail::InspectArgs inspect;
    auto* sc_inspect = app.add_subcommand("inspect-critic",
                                          "Export critic activation maps for one test window");
    sc_inspect->add_option("--checkpoint", inspect.checkpoint, "Checkpoint path")->required();
    sc_inspect->add_option("--data", inspect.data, "NVT1 frame file")->required();
    sc_inspect->add_option("--out", inspect.out_path, "Output path prefix")->required();
    sc_inspect->add_option("--split", inspect.split, "Train fraction (test range follows)");

    std::vector<const char*> argv;
    argv.push_back("nvp");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sc_gen->parsed()) {
            wave.kind = wave_kind_from(gen_kind);
            auto frames = generate_waves<float>(wave, gen_frames);
            write_tensor_file(gen_out, frames);
            out << "wrote " << gen_frames << " " << wave.height << "x" << wave.width << " "
                << gen_kind << " frames to " << gen_out << "\n";
            return 0;
        }
        if (sc_train->parsed()) return detail::run_train(train, out);
        if (sc_predict->parsed()) return detail::run_predict(predict, out);
        if (sc_eval->parsed()) return detail::run_eval(eval_args, out);
        if (sc_count->parsed()) {
            GeneratorSpec spec;
            spec.kind = generator_kind_from(cp_model);
            std::tie(spec.channels1, spec.channels2) = detail::parse_channels(cp_channels);
            spec.height = cp_height;
            spec.width = cp_width;
            out << count_params(spec) << "\n";
            return 0;
        }
        if (sc_gc->parsed()) {
            bool all_pass = true;
            for (const auto& check : standard_grad_checks()) {
                double worst = 0.0;
                for (std::int64_t seed = 1; seed <= gc_seeds; ++seed) {
                    auto r = check.run(static_cast<std::uint64_t>(seed));
                    worst = std::max(worst, r.max_rel_err);
                }
                const bool pass = worst < gc_tolerance;
                all_pass = all_pass && pass;
                char buf[160];
                std::snprintf(buf, sizeof(buf), "%-24s max_rel_err=%.3e %s\n",
                              check.name.c_str(), worst, pass ? "pass" : "FAIL");
                out << buf;
            }
            if (!all_pass) {
                err << "gradient checks failed\n";
                return 3;
            }
            return 0;
        }
        if (sc_inspect->parsed()) return detail::run_inspect_critic(inspect, out);
    } catch (const NumericError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const CLI::ValidationError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace nvp::cli
