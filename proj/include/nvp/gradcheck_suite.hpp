#pragma once

#include "nvp/batchnorm.hpp"
#include "nvp/convlstm.hpp"
#include "nvp/discriminator.hpp"
#include "nvp/generative.hpp"
#include "nvp/gradcheck.hpp"

namespace nvp {

struct NamedGradCheck {
    std::string name;
    std::function<GradCheckResult(std::uint64_t seed)> run;
};

namespace detail {

// Fixed random weighting of an output tensor so the scalar loss exercises the
// whole Jacobian. Rebuilt deterministically from the seed on every call.
template <typename T>
TensorT<T> weighted_loss(const TensorT<T>& y, std::uint64_t seed) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    auto w = TensorT<T>::uniform(y.shape(), rng, T(-1), T(1));
    return mse(hadamard(y, w), TensorT<T>::zeros(y.shape()), Reduction::sum);
}

}  // namespace detail

// Finite-difference coverage of every differentiable operation plus the full
// ConvLSTM step and a reduced critic. Small shapes, double precision.
inline std::vector<NamedGradCheck> standard_grad_checks() {
    using T = double;
    using Tt = TensorT<T>;
    std::vector<NamedGradCheck> checks;

    checks.push_back({"add", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({2, 3, 4}, rng, -1.0, 1.0);
        auto b = Tt::uniform({2, 3, 4}, rng, -1.0, 1.0);
        return grad_check([=] { return detail::weighted_loss(add(a, b), seed); }, {a, b});
    }});

    checks.push_back({"sub", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({3, 5}, rng, -1.0, 1.0);
        auto b = Tt::uniform({3, 5}, rng, -1.0, 1.0);
        return grad_check([=] { return detail::weighted_loss(sub(a, b), seed); }, {a, b});
    }});

    checks.push_back({"scale", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({4, 4}, rng, -1.0, 1.0);
        return grad_check([=] { return detail::weighted_loss(scale(a, 0.37), seed); }, {a});
    }});

    checks.push_back({"hadamard", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({2, 3, 3}, rng, -1.0, 1.0);
        auto b = Tt::uniform({2, 3, 3}, rng, -1.0, 1.0);
        return grad_check([=] { return detail::weighted_loss(hadamard(a, b), seed); }, {a, b});
    }});

    checks.push_back({"hadamard_broadcast", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({3, 2, 4, 4}, rng, -1.0, 1.0);
        auto b = Tt::uniform({2, 4, 4}, rng, -1.0, 1.0);
        return grad_check([=] { return detail::weighted_loss(hadamard(a, b), seed); }, {a, b});
    }});

    checks.push_back({"sigmoid", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({3, 7}, rng, -2.0, 2.0);
        return grad_check([=] { return detail::weighted_loss(sigmoid(a), seed); }, {a});
    }});

    checks.push_back({"tanh", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({3, 7}, rng, -2.0, 2.0);
        return grad_check([=] { return detail::weighted_loss(tanh(a), seed); }, {a});
    }});

    checks.push_back({"leaky_relu", [](std::uint64_t seed) {
        Rng rng(seed);
        // Inputs bounded away from the kink at 0.
        auto a = Tt::uniform({4, 6}, rng, 0.1, 1.0);
        auto& d = a.mutable_data();
        for (std::size_t i = 0; i < d.size(); i += 2) d[i] = -d[i];
        return grad_check([=] { return detail::weighted_loss(leaky_relu(a), seed); }, {a});
    }});

    checks.push_back({"mse_sum", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({3, 4}, rng, -1.0, 1.0);
        auto b = Tt::uniform({3, 4}, rng, -1.0, 1.0);
        return grad_check([=] { return mse(a, b, Reduction::sum); }, {a, b});
    }});

    checks.push_back({"mse_mean", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({3, 4}, rng, -1.0, 1.0);
        auto b = Tt::uniform({3, 4}, rng, -1.0, 1.0);
        return grad_check([=] { return mse(a, b, Reduction::mean); }, {a, b});
    }});

    checks.push_back({"concat_slice", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({2, 2, 3}, rng, -1.0, 1.0);
        auto b = Tt::uniform({2, 3, 3}, rng, -1.0, 1.0);
        return grad_check(
            [=] {
                auto cat = concat<T>({a, b}, 1);
                return detail::weighted_loss(slice(cat, 1, 1, 3), seed);
            },
            {a, b});
    }});

    checks.push_back({"reshape", [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = Tt::uniform({2, 6}, rng, -1.0, 1.0);
        return grad_check([=] { return detail::weighted_loss(reshape(a, {3, 4}), seed); }, {a});
    }});

    checks.push_back({"conv2d", [](std::uint64_t seed) {
        Rng rng(seed);
        auto x = Tt::uniform({2, 2, 4, 4}, rng, -1.0, 1.0);
        auto k = Tt::uniform({3, 2, 3, 3}, rng, -1.0, 1.0);
        auto b = Tt::uniform({3}, rng, -0.5, 0.5);
        return grad_check(
            [=] {
                return detail::weighted_loss(conv2d(x, k, std::optional<Tt>(b), 1, 1), seed);
            },
            {x, k, b});
    }});

    checks.push_back({"conv3d", [](std::uint64_t seed) {
        Rng rng(seed);
        auto x = Tt::uniform({2, 2, 4, 5, 5}, rng, -1.0, 1.0);
        auto k = Tt::uniform({2, 2, 3, 3, 3}, rng, -1.0, 1.0);
        auto b = Tt::uniform({2}, rng, -0.5, 0.5);
        return grad_check(
            [=] {
                return detail::weighted_loss(
                    conv3d(x, k, std::optional<Tt>(b), {2, 2, 2}, {1, 1, 1}), seed);
            },
            {x, k, b});
    }});

    checks.push_back({"conv3d_transposed", [](std::uint64_t seed) {
        Rng rng(seed);
        auto x = Tt::uniform({2, 2, 2, 3, 3}, rng, -1.0, 1.0);
        auto k = Tt::uniform({2, 3, 3, 3, 3}, rng, -1.0, 1.0);
        auto b = Tt::uniform({3}, rng, -0.5, 0.5);
        return grad_check(
            [=] {
                return detail::weighted_loss(
                    conv3d_transposed(x, k, std::optional<Tt>(b), {2, 2, 2}, {1, 1, 1},
                                      {1, 1, 1}),
                    seed);
            },
            {x, k, b});
    }});

    checks.push_back({"batch_norm3d", [](std::uint64_t seed) {
        Rng rng(seed);
        auto x = Tt::uniform({2, 3, 2, 3, 3}, rng, -1.0, 1.0);
        auto g = Tt::uniform({3}, rng, 0.5, 1.5);
        auto s = Tt::uniform({3}, rng, -0.5, 0.5);
        return grad_check(
            [=] {
                BatchNormStats<T> stats(3);  // fresh per call; forward mutates it
                return detail::weighted_loss(batch_norm3d(x, g, s, stats, true), seed);
            },
            {x, g, s});
    }});

    checks.push_back({"projection", [](std::uint64_t seed) {
        Rng rng(seed);
        auto h = Tt::uniform({2, 4, 3, 3}, rng, -1.0, 1.0);
        auto k = Tt::uniform({1, 4, 1, 1}, rng, -1.0, 1.0);
        auto b = Tt::uniform({1}, rng, -0.2, 0.2);
        return grad_check(
            [=] { return detail::weighted_loss(project_frame(h, Projection<T>{k, b}), seed); },
            {h, k, b});
    }});

    checks.push_back({"pyramid_resample", [](std::uint64_t seed) {
        Rng rng(seed);
        std::vector<Tt> seq;
        for (int i = 0; i < 6; ++i) seq.push_back(Tt::uniform({1, 1, 2, 2}, rng, -1.0, 1.0));
        return grad_check(
            [=] {
                auto up = upsample(downsample(seq), 6);
                Tt acc = detail::weighted_loss(up[0], seed);
                for (std::size_t i = 1; i < up.size(); ++i)
                    acc = add(acc, detail::weighted_loss(up[i], seed + i));
                return acc;
            },
            seq);
    }});

    checks.push_back({"convlstm_cell", [](std::uint64_t seed) {
        Rng rng(seed);
        auto p = make_convlstm_params<T>(1, 2, 3, 3, rng);
        // Peepholes start at zero; randomize them so the check exercises the
        // peephole path too.
        for (auto* peep : {&p.w_ci, &p.w_cf, &p.w_co})
            *peep = Tt::uniform(peep->shape(), rng, -0.5, 0.5, true);
        auto x = Tt::uniform({1, 1, 3, 3}, rng, -1.0, 1.0);
        auto h0 = Tt::uniform({1, 2, 3, 3}, rng, -0.5, 0.5);
        auto c0 = Tt::uniform({1, 2, 3, 3}, rng, -0.5, 0.5);
        std::vector<Tt> inputs{x,      h0,     c0,     p.w_xi, p.w_xf, p.w_xc, p.w_xo, p.w_hi,
                               p.w_hf, p.w_hc, p.w_ho, p.w_ci, p.w_cf, p.w_co, p.b_i,  p.b_f,
                               p.b_c,  p.b_o};
        return grad_check(
            [=] {
                auto st = cell_step(p, ConvLstmState<T>{h0, c0}, x);
                return add(detail::weighted_loss(st.hidden, seed + 1),
                           detail::weighted_loss(st.cell, seed + 2));
            },
            inputs);
    }});

    checks.push_back({"convlstm_sequence", [](std::uint64_t seed) {
        Rng rng(seed);
        auto p = make_convlstm_params<T>(1, 1, 3, 3, rng);
        std::vector<Tt> seq;
        for (int i = 0; i < 4; ++i) seq.push_back(Tt::uniform({1, 1, 3, 3}, rng, -1.0, 1.0));
        std::vector<Tt> inputs{p.w_xi, p.w_hi, p.w_hf, p.w_ci, p.b_i};
        return grad_check(
            [=] {
                auto run = run_layer(p, zero_state(p, 1), seq);
                Tt acc = detail::weighted_loss(run.hidden_seq[0], seed + 1);
                for (std::size_t i = 1; i < run.hidden_seq.size(); ++i)
                    acc = add(acc, detail::weighted_loss(run.hidden_seq[i], seed + 1 + i));
                return acc;
            },
            inputs);
    }});

    checks.push_back({"critic_small", [](std::uint64_t seed) {
        // Reduced 3x3x3-kernel variant: the production path with a kernel
        // small enough for finite differencing.
        CriticSpec spec;
        spec.encoder_channels = {2, 1};
        spec.decoder_hidden = {2};
        spec.kernel = {3, 3, 3};
        spec.padding = {1, 1, 1};
        auto model = init_critic<T>(spec, seed);
        Rng rng(seed + 7);
        auto x_true = Tt::uniform({1, 1, 8, 5, 5}, rng, -0.9, 0.9);
        auto z_gen = Tt::uniform({1, 1, 8, 5, 5}, rng, -0.9, 0.9);
        std::vector<Tt> inputs;
        for (auto& [name, param] : named_params(model, "d")) inputs.push_back(param);
        return grad_check(
            [&, x_true, z_gen]() { return critic_loss(model, x_true, z_gen, true); }, inputs,
            1e-5, 1e-4);
    }});

    checks.push_back({"adversarial_energy_input", [](std::uint64_t seed) {
        CriticSpec spec;
        spec.encoder_channels = {2};
        spec.decoder_hidden = {};
        spec.kernel = {3, 3, 3};
        spec.padding = {1, 1, 1};
        auto model = init_critic<T>(spec, seed);
        Rng rng(seed + 3);
        auto z = Tt::uniform({1, 1, 4, 4, 4}, rng, -0.9, 0.9);
        return grad_check([&, z]() { return energy(model, z, true); }, {z});
    }});

    return checks;
}

}  // namespace nvp
