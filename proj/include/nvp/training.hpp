#pragma once

#include <ostream>

#include "nvp/data.hpp"
#include "nvp/discriminator.hpp"
#include "nvp/generative.hpp"

namespace nvp {

struct TrainConfig {
    double lambda_rec = 1.0;
    double lambda_pred = 1.0;
    double lambda_adv = 0.1;  // per-scale copies share the same value
    double learning_rate = 1e-3;
    std::int64_t total_iterations = 1000;
    double clip_norm = 1e-3;  // generator only
    std::int64_t critic_period = 2;
    bool adversarial = false;
    std::uint64_t seed = 0;
    std::int64_t batch_size = 4;

    void validate() const {
        if (lambda_rec < 0 || lambda_pred < 0 || lambda_adv < 0)
            throw Error("train config: loss weights must be >= 0");
        if (clip_norm <= 0) throw Error("train config: clip_norm must be > 0");
        if (critic_period < 1) throw Error("train config: critic period must be >= 1");
        if (total_iterations < 0 || batch_size < 1)
            throw Error("train config: invalid iteration count or batch size");
    }
};

// Base rate for the first half of training, a tenth afterwards.
inline double lr_schedule(std::int64_t iteration, std::int64_t total, double base = 1e-3) {
    if (iteration < 0 || iteration >= total) throw Error("lr_schedule: iteration out of range");
    return iteration < total / 2 ? base : base / 10.0;
}

// Bias-corrected Adam over a fixed parameter list.
template <typename T>
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m, v;

    void init(const std::vector<TensorT<T>>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.data().size(), T(0));
            v.emplace_back(p.data().size(), T(0));
        }
    }
};

template <typename T>
void adam_step(AdamState<T>& state, std::vector<TensorT<T>>& params, double lr) {
    if (state.m.size() != params.size()) throw Error("adam_step: state/param list mismatch");
    ++state.step;
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    const T corr1 = T(1) - std::pow(b1, static_cast<T>(state.step));
    const T corr2 = T(1) - std::pow(b2, static_cast<T>(state.step));
    const T lr_t = static_cast<T>(lr);
    const T eps = static_cast<T>(state.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].mutable_data();
        const auto& g = params[k].grad();
        if (g.size() != p.size())
            throw Error("adam_step: missing gradient for parameter " + std::to_string(k));
        auto& mk = state.m[k];
        auto& vk = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            mk[i] = b1 * mk[i] + (T(1) - b1) * g[i];
            vk[i] = b2 * vk[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = mk[i] / corr1;
            const T vhat = vk[i] / corr2;
            p[i] -= lr_t * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// Scales all gradients by max_norm/norm when the global l2 norm exceeds
// max_norm; returns the factor applied.
template <typename T>
double clip_gradients(std::vector<TensorT<T>>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (T g : p.grad()) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return 1.0;
    const double factor = max_norm / norm;
    for (auto& p : params) {
        auto* node = p.node_ptr().get();
        for (auto& g : node->grad) g = static_cast<T>(g * factor);
    }
    return factor;
}

template <typename T>
struct LossBreakdown {
    TensorT<T> total;
    double rec = 0, pred = 0, adv = 0;
};

namespace detail {

template <typename T>
TensorT<T> sum_frame_errors(const std::vector<TensorT<T>>& outputs,
                            const std::vector<TensorT<T>>& targets, std::size_t target_offset,
                            const char* what) {
    if (outputs.empty()) throw ShapeError(std::string(what) + ": no frames");
    if (target_offset + outputs.size() > targets.size())
        throw ShapeError(std::string(what) + ": target count mismatch");
    TensorT<T> acc = mse(outputs[0], targets[target_offset], Reduction::sum);
    for (std::size_t i = 1; i < outputs.size(); ++i)
        acc = add(acc, mse(outputs[i], targets[target_offset + i], Reduction::sum));
    return acc;
}

}  // namespace detail

// Weighted single-scale loss: lambda_rec * sum_i ||x_i - y_i||^2 over the
// observations, lambda_pred * the same over the horizon, plus the critic
// energy of the generated stack when adversarial training is on. Components
// are reported unweighted.
template <typename T>
LossBreakdown<T> generator_loss(const GeneratorOutput<T>& out,
                                const std::vector<TensorT<T>>& targets, std::int64_t split,
                                std::type_identity_t<CriticModel<T>>* critic,
                                const TrainConfig& cfg) {
    if (static_cast<std::int64_t>(out.recon.size()) != split)
        throw ShapeError("generator_loss: reconstruction count mismatch");
    auto l_rec = detail::sum_frame_errors(out.recon, targets, 0, "reconstruction");
    auto l_pred = detail::sum_frame_errors(out.pred, targets, static_cast<std::size_t>(split),
                                           "prediction");
    LossBreakdown<T> parts;
    parts.rec = l_rec.item();
    parts.pred = l_pred.item();
    parts.total = add(scale(l_rec, static_cast<T>(cfg.lambda_rec)),
                      scale(l_pred, static_cast<T>(cfg.lambda_pred)));
    if (cfg.adversarial) {
        if (!critic) throw Error("generator_loss: adversarial training without a critic");
        std::vector<TensorT<T>> past(targets.begin(), targets.begin() + split);
        auto z_gen = stack_sequence(past, out.pred);
        auto l_adv = adversarial_loss_for_generator(*critic, z_gen, true);
        parts.adv = l_adv.item();
        parts.total = add(parts.total, scale(l_adv, static_cast<T>(cfg.lambda_adv)));
    }
    return parts;
}

// Sum of the per-scale weighted losses (k = 0, 1). The scale-1 targets are
// the downsampled true frames; its critic consumes the half-rate stack.
template <typename T>
LossBreakdown<T> multi_scale_loss(const GeneratorOutput<T>& out,
                                  const std::vector<TensorT<T>>& targets, std::int64_t split,
                                  std::type_identity_t<CriticModel<T>>* critic_scale0,
                                  std::type_identity_t<CriticModel<T>>* critic_scale1,
                                  const TrainConfig& cfg) {
    if (out.recon_scale1.empty() || out.pred_scale1.empty())
        throw ShapeError("multi_scale_loss: missing scale-1 outputs");
    LossBreakdown<T> scale0 = generator_loss(out, targets, split, critic_scale0, cfg);

    std::vector<TensorT<T>> targets1 = downsample(targets);
    const std::int64_t split1 = split / 2;
    GeneratorOutput<T> as_scale1;
    as_scale1.recon = out.recon_scale1;
    as_scale1.pred = out.pred_scale1;
    LossBreakdown<T> scale1 = generator_loss(as_scale1, targets1, split1, critic_scale1, cfg);

    LossBreakdown<T> parts;
    parts.rec = scale0.rec + scale1.rec;
    parts.pred = scale0.pred + scale1.pred;
    parts.adv = scale0.adv + scale1.adv;
    parts.total = add(scale0.total, scale1.total);
    return parts;
}

// Deterministic batch provider over windows of a [T,H,W] frame tensor.
// Window starts are shuffled once (seed-driven) and cycled.
template <typename T>
class WindowStream {
public:
    WindowStream(TensorT<T> frames, std::int64_t t, std::int64_t n, std::int64_t stride,
                 std::int64_t range_lo, std::int64_t range_hi, std::int64_t batch,
                 std::uint64_t shuffle_seed, bool shuffle)
        : frames_(std::move(frames)), t_(t), n_(n), batch_(batch) {
        starts_ = window_starts(range_lo, range_hi, t + n, stride);
        if (shuffle) {
            Rng rng(shuffle_seed);
            for (std::size_t i = starts_.size(); i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
                std::swap(starts_[i - 1], starts_[j]);
            }
        }
    }

    SequenceBatch<T> next() {
        std::vector<std::int64_t> picks;
        picks.reserve(static_cast<std::size_t>(batch_));
        for (std::int64_t k = 0; k < batch_; ++k)
            picks.push_back(starts_[static_cast<std::size_t>((cursor_ + k) %
                                                             static_cast<std::int64_t>(
                                                                 starts_.size()))]);
        cursor_ = (cursor_ + batch_) % static_cast<std::int64_t>(starts_.size());
        return make_batch(frames_, picks, t_, n_);
    }

    std::int64_t cursor() const { return cursor_; }
    void set_cursor(std::int64_t c) { cursor_ = c; }
    std::int64_t num_windows() const { return static_cast<std::int64_t>(starts_.size()); }
    std::int64_t obs_len() const { return t_; }
    std::int64_t pred_len() const { return n_; }

private:
    TensorT<T> frames_;
    std::vector<std::int64_t> starts_;
    std::int64_t cursor_ = 0;
    std::int64_t t_, n_, batch_;
};

// Parameter lists in the canonical registry order (shared by the optimizers,
// clipping and checkpoints).
template <typename T>
std::vector<TensorT<T>> collect_generator_params(GenerativeModel<T>& gen) {
    std::vector<TensorT<T>> out;
    for (auto& [name, p] : named_params(gen)) out.push_back(p);
    return out;
}

template <typename T>
std::vector<TensorT<T>> collect_critic_params(std::vector<CriticModel<T>>& critics) {
    std::vector<TensorT<T>> out;
    for (std::size_t c = 0; c < critics.size(); ++c)
        for (auto& [name, p] : named_params(critics[c], "d" + std::to_string(c)))
            out.push_back(p);
    return out;
}

inline void write_metrics_header(std::ostream& os) { os << "iteration,lr,l_rec,l_pred,l_adv,l_d\n"; }

inline void write_metrics_row(std::ostream& os, std::int64_t iteration, double lr, double l_rec,
                              double l_pred, double l_adv, double l_d) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(iteration), lr, l_rec, l_pred, l_adv, l_d);
    os << buf;
}

namespace detail {

template <typename T>
void zero_param_grads(std::vector<TensorT<T>>& params) {
    for (auto& p : params) p.zero_grad();
}

template <typename T>
void check_finite_component(double value, const char* component, std::int64_t iteration) {
    if (!std::isfinite(value))
        throw NumericError(std::string("non-finite ") + component + " at iteration " +
                           std::to_string(iteration));
}

}  // namespace detail

// One joint training run. Per iteration: generator forward, loss assembly,
// backward, clip, Adam update; every critic_period-th iteration the critics
// take their own update on the freshly generated futures. The critic list is
// empty (adversarial off), {full} or {full, half} for the two-scale model.
// NaN anywhere aborts with the iteration and component in the message.
template <typename T>
void train_loop(GenerativeModel<T>& gen, std::vector<CriticModel<T>>& critics,
                WindowStream<T>& stream, AdamState<T>& adam_g,
                std::type_identity_t<AdamState<T>>* adam_d, const TrainConfig& cfg,
                std::ostream* metrics, std::int64_t start_iteration = 0) {
    cfg.validate();
    const bool multi_scale = gen.spec.kind == GeneratorKind::multi_res_lstm;
    if (cfg.adversarial) {
        const std::size_t expected = multi_scale ? 2 : 1;
        if (critics.size() != expected || !adam_d)
            throw Error("train_loop: adversarial training expects critics and their optimizer");
    }

    std::vector<TensorT<T>> gen_params = collect_generator_params(gen);
    std::vector<TensorT<T>> critic_params = collect_critic_params(critics);

    if (metrics && start_iteration == 0) write_metrics_header(*metrics);

    const std::int64_t split = stream.obs_len();
    const std::int64_t horizon = stream.pred_len();
    for (std::int64_t it = start_iteration; it < cfg.total_iterations; ++it) {
        const double lr = lr_schedule(it, cfg.total_iterations, cfg.learning_rate);

        SequenceBatch<T> batch = stream.next();
        std::vector<TensorT<T>> frames = split_frames(batch);
        std::vector<TensorT<T>> obs(frames.begin(), frames.begin() + split);

        detail::zero_param_grads(gen_params);
        detail::zero_param_grads(critic_params);

        auto out = generator_forward(gen, obs, horizon);
        LossBreakdown<T> loss =
            multi_scale
                ? multi_scale_loss(out, frames, split,
                                   cfg.adversarial ? &critics[0] : nullptr,
                                   cfg.adversarial ? &critics[1] : nullptr, cfg)
                : generator_loss(out, frames, split, cfg.adversarial ? &critics[0] : nullptr,
                                 cfg);
        detail::check_finite_component<T>(loss.rec, "l_rec", it);
        detail::check_finite_component<T>(loss.pred, "l_pred", it);
        detail::check_finite_component<T>(loss.adv, "l_adv", it);

        backward(loss.total);
        clip_gradients(gen_params, cfg.clip_norm);
        adam_step(adam_g, gen_params, lr);

        double l_d = 0.0;
        if (cfg.adversarial && (it % cfg.critic_period) == cfg.critic_period - 1) {
            detail::zero_param_grads(critic_params);
            auto x_stack = stack_sequence(obs, std::vector<TensorT<T>>(frames.begin() + split,
                                                                       frames.end()));
            auto z_stack = stack_sequence(obs, out.pred);
            TensorT<T> d_loss = critic_loss(critics[0], x_stack, z_stack, true);
            if (multi_scale) {
                auto targets1 = downsample(frames);
                std::vector<TensorT<T>> obs1(targets1.begin(), targets1.begin() + split / 2);
                std::vector<TensorT<T>> fut1(targets1.begin() + split / 2, targets1.end());
                auto x1 = stack_sequence(obs1, fut1);
                auto z1 = stack_sequence(obs1, out.pred_scale1);
                d_loss = add(d_loss, critic_loss(critics[1], x1, z1, true));
            }
            l_d = d_loss.item();
            detail::check_finite_component<T>(l_d, "l_d", it);
            backward(d_loss);
            adam_step(*adam_d, critic_params, lr);
        }

        if (metrics) write_metrics_row(*metrics, it, lr, loss.rec, loss.pred, loss.adv, l_d);
    }
}

}  // namespace nvp
