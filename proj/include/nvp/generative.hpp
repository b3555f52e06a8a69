#pragma once

#include "nvp/convlstm.hpp"

namespace nvp {

enum class GeneratorKind { benchmark, multi_res_lstm, multi_res_layers };

inline const char* to_string(GeneratorKind k) {
    switch (k) {
        case GeneratorKind::benchmark: return "benchmark";
        case GeneratorKind::multi_res_lstm: return "mrlstm";
        case GeneratorKind::multi_res_layers: return "mrlayer";
    }
    return "?";
}

inline GeneratorKind generator_kind_from(const std::string& s) {
    if (s == "benchmark") return GeneratorKind::benchmark;
    if (s == "mrlstm") return GeneratorKind::multi_res_lstm;
    if (s == "mrlayer") return GeneratorKind::multi_res_layers;
    throw DataError("unknown generator kind: " + s);
}

struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::benchmark;
    std::int64_t channels1 = 64, channels2 = 64;
    std::int64_t height = 19, width = 19;
    std::int64_t input_channels = 1;
    std::int64_t obs_len = 16;   // t
    std::int64_t pred_len = 16;  // n

    void validate() const {
        if (channels1 < 1 || channels2 < 1 || height < 1 || width < 1 || input_channels < 1)
            throw ShapeError("generator spec: extents must be positive");
        if (obs_len < 1 || pred_len < 1)
            throw ShapeError("generator spec: obs/pred lengths must be >= 1");
        if (kind == GeneratorKind::multi_res_lstm && (obs_len % 2 != 0 || pred_len % 2 != 0))
            throw ShapeError("multi-resolution LSTM requires even observation and prediction lengths");
    }
};

// 1x1 spatial convolution over the stacked layer outputs followed by tanh.
template <typename T>
struct Projection {
    TensorT<T> kernel;  // [1, C1+C2, 1, 1]
    TensorT<T> bias;    // [1]
};

template <typename T>
struct LstmStack {
    ConvLstmParams<T> layer1, layer2;
};

// Encoder, decoder and predictor share one latent state; projection layout:
// benchmark & per-scale mrlstm -> {decoder, predictor};
// mrlayer -> {decoder A, decoder B, predictor A, predictor B} where A is used
// on upper-layer update steps and B on hold steps.
template <typename T>
struct GeneratorNetworks {
    LstmStack<T> encoder, decoder, predictor;
    std::vector<Projection<T>> projections;
};

// scales[0] is the native-rate model; multi_res_lstm adds scales[1] for the
// half-rate sequence.
template <typename T>
struct GenerativeModel {
    GeneratorSpec spec;
    std::vector<GeneratorNetworks<T>> scales;
};

template <typename T>
Projection<T> make_projection(std::int64_t in_channels, Rng& rng) {
    const T bound = T(1) / std::sqrt(static_cast<T>(in_channels));
    return {TensorT<T>::uniform({1, in_channels, 1, 1}, rng, -bound, bound, true),
            TensorT<T>::zeros({1}, true)};
}

template <typename T>
GeneratorNetworks<T> make_generator_networks(std::int64_t in_channels, const GeneratorSpec& s,
                                             std::size_t num_projections, Rng& rng) {
    GeneratorNetworks<T> nets;
    auto stack = [&] {
        LstmStack<T> st;
        st.layer1 = make_convlstm_params<T>(in_channels, s.channels1, s.height, s.width, rng);
        st.layer2 = make_convlstm_params<T>(s.channels1, s.channels2, s.height, s.width, rng);
        return st;
    };
    nets.encoder = stack();
    nets.decoder = stack();
    nets.predictor = stack();
    for (std::size_t i = 0; i < num_projections; ++i)
        nets.projections.push_back(make_projection<T>(s.channels1 + s.channels2, rng));
    return nets;
}

template <typename T>
GenerativeModel<T> init_generator(const GeneratorSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    GenerativeModel<T> model;
    model.spec = spec;
    switch (spec.kind) {
        case GeneratorKind::benchmark:
            model.scales.push_back(make_generator_networks<T>(spec.input_channels, spec, 2, rng));
            break;
        case GeneratorKind::multi_res_layers:
            model.scales.push_back(make_generator_networks<T>(spec.input_channels, spec, 4, rng));
            break;
        case GeneratorKind::multi_res_lstm:
            // Scale 0 consumes the native frame and the interpolated
            // half-rate signal stacked as channels.
            model.scales.push_back(
                make_generator_networks<T>(2 * spec.input_channels, spec, 2, rng));
            model.scales.push_back(make_generator_networks<T>(spec.input_channels, spec, 2, rng));
            break;
    }
    return model;
}

// ---------------------------------------------------------------------------
// Parameter counting (exact, closed form).

inline std::int64_t count_network_params(std::int64_t in_channels, std::int64_t c1,
                                         std::int64_t c2, std::int64_t height, std::int64_t width,
                                         std::int64_t num_projections) {
    const std::int64_t per_net = count_layer_params(in_channels, c1, height, width) +
                                 count_layer_params(c1, c2, height, width);
    return 3 * per_net + num_projections * (c1 + c2 + 1);
}

// Parameters of one scale of the model (scale 1 is only defined for the
// multi-resolution LSTM).
inline std::int64_t count_params_scale(const GeneratorSpec& s, int scale) {
    switch (s.kind) {
        case GeneratorKind::benchmark:
            if (scale != 0) throw ShapeError("benchmark has a single scale");
            return count_network_params(s.input_channels, s.channels1, s.channels2, s.height,
                                        s.width, 2);
        case GeneratorKind::multi_res_layers:
            if (scale != 0) throw ShapeError("mrlayer has a single scale");
            return count_network_params(s.input_channels, s.channels1, s.channels2, s.height,
                                        s.width, 4);
        case GeneratorKind::multi_res_lstm:
            if (scale == 0)
                return count_network_params(2 * s.input_channels, s.channels1, s.channels2,
                                            s.height, s.width, 2);
            if (scale == 1)
                return count_network_params(s.input_channels, s.channels1, s.channels2, s.height,
                                            s.width, 2);
            throw ShapeError("mrlstm has scales 0 and 1");
    }
    throw ShapeError("invalid generator kind");
}

inline std::int64_t count_params(const GeneratorSpec& s) {
    if (s.kind == GeneratorKind::multi_res_lstm)
        return count_params_scale(s, 0) + count_params_scale(s, 1);
    return count_params_scale(s, 0);
}

// ---------------------------------------------------------------------------
// Temporal pyramid resampling. Sequences use 1-based time indices in the
// comments below; scale-1 element j of the returned vector sits at even index
// 2*(j+1).

// x1_i = (x0_{i-1} + x0_i) / 2 at even i; causal, uses current and previous
// sample only.
template <typename T>
std::vector<TensorT<T>> downsample(const std::vector<TensorT<T>>& x0) {
    if (x0.size() < 2) throw ShapeError("downsample: sequence length must be >= 2");
    std::vector<TensorT<T>> x1;
    x1.reserve(x0.size() / 2);
    for (std::size_t j = 0; 2 * j + 1 < x0.size(); ++j)
        x1.push_back(scale(add(x0[2 * j], x0[2 * j + 1]), T(0.5)));
    return x1;
}

// Averaging interpolation: even indices copy, odd indices average the two
// even neighbours; a missing neighbour at the boundary is replicated.
template <typename T>
std::vector<TensorT<T>> upsample(const std::vector<TensorT<T>>& evens, std::int64_t total_len) {
    if (evens.empty()) throw ShapeError("upsample: empty input");
    if (total_len < 1 || total_len > 2 * static_cast<std::int64_t>(evens.size()))
        throw ShapeError("upsample: total length " + std::to_string(total_len) +
                         " not covered by " + std::to_string(evens.size()) + " even samples");
    std::vector<TensorT<T>> out;
    out.reserve(static_cast<std::size_t>(total_len));
    for (std::int64_t i = 1; i <= total_len; ++i) {
        if (i % 2 == 0) {
            out.push_back(evens[static_cast<std::size_t>(i / 2 - 1)]);
        } else {
            const std::int64_t left = i / 2 - 1;              // even neighbour i-1
            const std::int64_t right = i / 2;                 // even neighbour i+1
            const bool has_left = left >= 0;
            const bool has_right = right < static_cast<std::int64_t>(evens.size());
            if (has_left && has_right)
                out.push_back(scale(add(evens[left], evens[right]), T(0.5)));
            else if (has_right)
                out.push_back(evens[right]);
            else
                out.push_back(evens[left]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward passes.

template <typename T>
struct Latent {
    ConvLstmState<T> layer1, layer2;
};

template <typename T>
TensorT<T> project_frame(const TensorT<T>& stacked_hidden, const Projection<T>& proj) {
    if (stacked_hidden.extent(1) != proj.kernel.extent(1))
        throw ShapeError("project_frame: channel mismatch");
    return tanh(conv2d(stacked_hidden, proj.kernel, std::optional<TensorT<T>>(proj.bias), 0, 0));
}

template <typename T>
TensorT<T> project_frame(const TensorT<T>& h1, const TensorT<T>& h2, const Projection<T>& proj) {
    return project_frame(concat<T>({h1, h2}, 1), proj);
}

// Runs the two-layer encoder over the observations; the final states seed the
// decoder and predictor.
template <typename T>
Latent<T> encode(const GeneratorNetworks<T>& nets, const std::vector<TensorT<T>>& observations) {
    if (observations.empty()) throw ShapeError("encode: empty observation sequence");
    const std::int64_t batch = observations.front().extent(0);
    ConvLstmState<T> s1 = zero_state(nets.encoder.layer1, batch);
    ConvLstmState<T> s2 = zero_state(nets.encoder.layer2, batch);
    for (const auto& x : observations) {
        s1 = cell_step(nets.encoder.layer1, s1, x);
        s2 = cell_step(nets.encoder.layer2, s2, s1.hidden);
    }
    return {s1, s2};
}

// Conditional reconstruction in reverse time order (y_t first, y_1 last).
// The first input is a zero frame; each later step consumes its own previous
// output.
template <typename T>
std::vector<TensorT<T>> decode(const GeneratorNetworks<T>& nets, const Latent<T>& latent,
                               std::int64_t steps) {
    const auto& l1 = nets.decoder.layer1;
    ConvLstmState<T> s1 = latent.layer1;
    ConvLstmState<T> s2 = latent.layer2;
    const std::int64_t batch = s1.hidden.extent(0);
    TensorT<T> prev = TensorT<T>::zeros({batch, l1.in_channels, l1.height, l1.width});
    std::vector<TensorT<T>> out;
    out.reserve(static_cast<std::size_t>(steps));
    for (std::int64_t m = 0; m < steps; ++m) {
        s1 = cell_step(l1, s1, prev);
        s2 = cell_step(nets.decoder.layer2, s2, s1.hidden);
        prev = project_frame(s1.hidden, s2.hidden, nets.projections[0]);
        out.push_back(prev);
    }
    return out;
}

// Conditional rollout: the first step consumes the last observation, later
// steps consume their own previous output.
template <typename T>
std::vector<TensorT<T>> predict_benchmark(const GeneratorNetworks<T>& nets, const Latent<T>& latent,
                                          const TensorT<T>& last_observation, std::int64_t n) {
    if (n < 1) throw ShapeError("predict: n must be >= 1");
    ConvLstmState<T> s1 = latent.layer1;
    ConvLstmState<T> s2 = latent.layer2;
    TensorT<T> prev = last_observation;
    std::vector<TensorT<T>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t m = 0; m < n; ++m) {
        s1 = cell_step(nets.predictor.layer1, s1, prev);
        s2 = cell_step(nets.predictor.layer2, s2, s1.hidden);
        prev = project_frame(s1.hidden, s2.hidden, nets.projections[1]);
        out.push_back(prev);
    }
    return out;
}

template <typename T>
struct GeneratorOutput {
    std::vector<TensorT<T>> recon;         // y_1..y_t in time order
    std::vector<TensorT<T>> pred;          // y_{t+1}..y_{t+n}
    std::vector<TensorT<T>> recon_scale1;  // mrlstm only, even indices 2..t
    std::vector<TensorT<T>> pred_scale1;   // mrlstm only, even indices t+2..t+n
};

struct ForwardStats {
    std::int64_t upper_cell_steps = 0;
};

template <typename T>
GeneratorOutput<T> forward_benchmark(const GenerativeModel<T>& model,
                                     const std::vector<TensorT<T>>& obs, std::int64_t n) {
    const auto& nets = model.scales[0];
    Latent<T> latent = encode(nets, obs);
    GeneratorOutput<T> out;
    auto rec = decode(nets, latent, static_cast<std::int64_t>(obs.size()));
    out.recon.assign(rec.rbegin(), rec.rend());
    out.pred = predict_benchmark(nets, latent, obs.back(), n);
    return out;
}

namespace detail {

// Lower layer steps every index; the upper layer steps on even global indices
// only, holding (H, C) in between. `held_up` is the most recent upper hidden
// map, used by the output projection at hold steps.
template <typename T>
struct MrLayerState {
    ConvLstmState<T> low, up;
    TensorT<T> held_up_h;
    std::int64_t global_index = 0;
};

template <typename T>
bool mr_layer_step(const LstmStack<T>& stack, MrLayerState<T>& st, const TensorT<T>& x,
                   ForwardStats* stats) {
    ++st.global_index;
    st.low = cell_step(stack.layer1, st.low, x);
    const bool upper_now = st.global_index % 2 == 0;
    if (upper_now) {
        st.up = cell_step(stack.layer2, st.up, st.low.hidden);
        st.held_up_h = st.up.hidden;
        if (stats) ++stats->upper_cell_steps;
    }
    return upper_now;
}

}  // namespace detail

// The temporal-highway network: two layers with the upper one updated every
// other step; outputs project concat(lower H, latest upper H) through
// projection A on update steps and projection B on hold steps.
template <typename T>
GeneratorOutput<T> forward_multi_res_layers(const GenerativeModel<T>& model,
                                            const std::vector<TensorT<T>>& obs, std::int64_t n,
                                            ForwardStats* stats = nullptr) {
    if (obs.empty()) throw ShapeError("forward: empty observation sequence");
    if (n < 1) throw ShapeError("forward: n must be >= 1");
    const auto& nets = model.scales[0];
    const std::int64_t batch = obs.front().extent(0);
    const auto& spec = model.spec;

    detail::MrLayerState<T> enc;
    enc.low = zero_state(nets.encoder.layer1, batch);
    enc.up = zero_state(nets.encoder.layer2, batch);
    enc.held_up_h = TensorT<T>::zeros({batch, spec.channels2, spec.height, spec.width});
    for (const auto& x : obs) detail::mr_layer_step(nets.encoder, enc, x, stats);

    GeneratorOutput<T> out;

    // Decoder: reverse-order reconstruction, zero frame first.
    {
        detail::MrLayerState<T> st = enc;
        TensorT<T> prev =
            TensorT<T>::zeros({batch, spec.input_channels, spec.height, spec.width});
        std::vector<TensorT<T>> rec;
        rec.reserve(obs.size());
        for (std::size_t m = 0; m < obs.size(); ++m) {
            const bool upper_now = detail::mr_layer_step(nets.decoder, st, prev, stats);
            prev = project_frame(st.low.hidden, st.held_up_h,
                                 nets.projections[upper_now ? 0 : 1]);
            rec.push_back(prev);
        }
        out.recon.assign(rec.rbegin(), rec.rend());
    }

    // Predictor: conditional rollout from the last observation.
    {
        detail::MrLayerState<T> st = enc;
        TensorT<T> prev = obs.back();
        out.pred.reserve(static_cast<std::size_t>(n));
        for (std::int64_t m = 0; m < n; ++m) {
            const bool upper_now = detail::mr_layer_step(nets.predictor, st, prev, stats);
            prev = project_frame(st.low.hidden, st.held_up_h,
                                 nets.projections[upper_now ? 2 : 3]);
            out.pred.push_back(prev);
        }
    }
    return out;
}

// Two-scale pyramid: the half-rate model predicts the even future samples
// first; interpolation fills the odd ones; the native model consumes
// [frame, interpolated half-rate signal] stacked as channels. The
// interpolated predictions are fed to scale 0 as constants so each scale
// trains on its own loss. `scale1_pred_override` substitutes the scale-1
// predictions (testing hook for conditioning experiments).
template <typename T>
GeneratorOutput<T> forward_multi_res_lstm(const GenerativeModel<T>& model,
                                          const std::vector<TensorT<T>>& obs, std::int64_t n,
                                          const std::vector<TensorT<T>>* scale1_pred_override =
                                              nullptr) {
    const std::int64_t t = static_cast<std::int64_t>(obs.size());
    if (t < 2 || t % 2 != 0 || n < 2 || n % 2 != 0)
        throw ShapeError("multi-resolution LSTM requires even t and n, got t=" +
                         std::to_string(t) + " n=" + std::to_string(n));
    const auto& nets0 = model.scales[0];
    const auto& nets1 = model.scales[1];
    const std::int64_t batch = obs.front().extent(0);
    const auto& spec = model.spec;

    GeneratorOutput<T> out;

    // Scale 1: the benchmark structure over the downsampled sequence.
    std::vector<TensorT<T>> x1 = downsample(obs);
    {
        Latent<T> latent1 = encode(nets1, x1);
        auto rec1 = decode(nets1, latent1, static_cast<std::int64_t>(x1.size()));
        out.recon_scale1.assign(rec1.rbegin(), rec1.rend());
        out.pred_scale1 = predict_benchmark(nets1, latent1, x1.back(), n / 2);
    }

    // Interpolated full-rate signal over indices 1..t+n. True half-rate
    // samples during observation, predicted ones (as constants) afterwards.
    std::vector<TensorT<T>> evens;
    evens.reserve(x1.size() + static_cast<std::size_t>(n / 2));
    for (const auto& f : x1) evens.push_back(detach(f));
    const auto& pred1_src = scale1_pred_override ? *scale1_pred_override : out.pred_scale1;
    if (static_cast<std::int64_t>(pred1_src.size()) != n / 2)
        throw ShapeError("scale-1 prediction count must be n/2");
    for (const auto& f : pred1_src) evens.push_back(detach(f));
    std::vector<TensorT<T>> u = upsample(evens, t + n);

    // Scale 0 encoder on 2-channel inputs.
    Latent<T> latent0;
    {
        std::vector<TensorT<T>> stacked;
        stacked.reserve(obs.size());
        for (std::int64_t i = 0; i < t; ++i)
            stacked.push_back(concat<T>({obs[i], u[i]}, 1));
        latent0 = encode(nets0, stacked);
    }

    // Scale 0 decoder: producing index i consumes [previous output (zero
    // first), interpolated signal at index i].
    {
        ConvLstmState<T> s1 = latent0.layer1;
        ConvLstmState<T> s2 = latent0.layer2;
        TensorT<T> prev =
            TensorT<T>::zeros({batch, spec.input_channels, spec.height, spec.width});
        std::vector<TensorT<T>> rec;
        rec.reserve(obs.size());
        for (std::int64_t m = 0; m < t; ++m) {
            const std::int64_t produced = t - m;  // 1-based index being reconstructed
            auto in = concat<T>({prev, u[produced - 1]}, 1);
            s1 = cell_step(nets0.decoder.layer1, s1, in);
            s2 = cell_step(nets0.decoder.layer2, s2, s1.hidden);
            prev = project_frame(s1.hidden, s2.hidden, nets0.projections[0]);
            rec.push_back(prev);
        }
        out.recon.assign(rec.rbegin(), rec.rend());
    }

    // Scale 0 predictor: producing index t+m consumes [previous native frame,
    // interpolated signal at t+m].
    {
        ConvLstmState<T> s1 = latent0.layer1;
        ConvLstmState<T> s2 = latent0.layer2;
        TensorT<T> prev = obs.back();
        out.pred.reserve(static_cast<std::size_t>(n));
        for (std::int64_t m = 1; m <= n; ++m) {
            auto in = concat<T>({prev, u[t + m - 1]}, 1);
            s1 = cell_step(nets0.predictor.layer1, s1, in);
            s2 = cell_step(nets0.predictor.layer2, s2, s1.hidden);
            prev = project_frame(s1.hidden, s2.hidden, nets0.projections[1]);
            out.pred.push_back(prev);
        }
    }
    return out;
}

template <typename T>
GeneratorOutput<T> generator_forward(const GenerativeModel<T>& model,
                                     const std::vector<TensorT<T>>& obs, std::int64_t n,
                                     ForwardStats* stats = nullptr) {
    switch (model.spec.kind) {
        case GeneratorKind::benchmark: return forward_benchmark(model, obs, n);
        case GeneratorKind::multi_res_layers: return forward_multi_res_layers(model, obs, n, stats);
        case GeneratorKind::multi_res_lstm: return forward_multi_res_lstm(model, obs, n);
    }
    throw ShapeError("invalid generator kind");
}

// ---------------------------------------------------------------------------
// Named parameter registry (deterministic order).

template <typename T>
void append_named_params(const std::string& prefix, GeneratorNetworks<T>& nets,
                         std::vector<std::pair<std::string, TensorT<T>>>& out) {
    append_named_params(prefix + ".enc.l1", nets.encoder.layer1, out);
    append_named_params(prefix + ".enc.l2", nets.encoder.layer2, out);
    append_named_params(prefix + ".dec.l1", nets.decoder.layer1, out);
    append_named_params(prefix + ".dec.l2", nets.decoder.layer2, out);
    append_named_params(prefix + ".pred.l1", nets.predictor.layer1, out);
    append_named_params(prefix + ".pred.l2", nets.predictor.layer2, out);
    for (std::size_t i = 0; i < nets.projections.size(); ++i) {
        out.emplace_back(prefix + ".proj" + std::to_string(i) + ".kernel",
                         nets.projections[i].kernel);
        out.emplace_back(prefix + ".proj" + std::to_string(i) + ".bias",
                         nets.projections[i].bias);
    }
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> named_params(GenerativeModel<T>& model) {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    for (std::size_t s = 0; s < model.scales.size(); ++s)
        append_named_params("g.s" + std::to_string(s), model.scales[s], out);
    return out;
}

}  // namespace nvp
