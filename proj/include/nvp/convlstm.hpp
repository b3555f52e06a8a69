#pragma once

#include "nvp/conv.hpp"

namespace nvp {

inline constexpr std::int64_t kConvLstmKernel = 5;

// Peephole ConvLSTM cell parameters. Peephole maps carry the full spatial
// extent and act by Hadamard product on the cell map; kernels are 5x5 with
// same padding so the frame extent is preserved.
template <typename T>
struct ConvLstmParams {
    TensorT<T> w_xi, w_xf, w_xc, w_xo;  // [C, Cin, 5, 5]
    TensorT<T> w_hi, w_hf, w_hc, w_ho;  // [C, C, 5, 5]
    TensorT<T> w_ci, w_cf, w_co;        // [C, H, W]
    TensorT<T> b_i, b_f, b_c, b_o;      // [C]
    std::int64_t in_channels = 0, channels = 0, height = 0, width = 0;
};

template <typename T>
struct ConvLstmState {
    TensorT<T> hidden;  // [B, C, H, W]
    TensorT<T> cell;    // [B, C, H, W]
};

// Kernels start uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; peephole maps
// and biases start at zero.
template <typename T>
ConvLstmParams<T> make_convlstm_params(std::int64_t in_channels, std::int64_t channels,
                                       std::int64_t height, std::int64_t width, Rng& rng) {
    if (in_channels < 1 || channels < 1 || height < 1 || width < 1)
        throw ShapeError("convlstm: extents must be positive");
    const std::int64_t k = kConvLstmKernel;
    const T bound_x = T(1) / std::sqrt(static_cast<T>(in_channels * k * k));
    const T bound_h = T(1) / std::sqrt(static_cast<T>(channels * k * k));

    auto kx = [&] {
        return TensorT<T>::uniform({channels, in_channels, k, k}, rng, -bound_x, bound_x, true);
    };
    auto kh = [&] {
        return TensorT<T>::uniform({channels, channels, k, k}, rng, -bound_h, bound_h, true);
    };
    auto peep = [&] { return TensorT<T>::zeros({channels, height, width}, true); };
    auto bias = [&] { return TensorT<T>::zeros({channels}, true); };

    ConvLstmParams<T> p;
    p.w_xi = kx();
    p.w_xf = kx();
    p.w_xc = kx();
    p.w_xo = kx();
    p.w_hi = kh();
    p.w_hf = kh();
    p.w_hc = kh();
    p.w_ho = kh();
    p.w_ci = peep();
    p.w_cf = peep();
    p.w_co = peep();
    p.b_i = bias();
    p.b_f = bias();
    p.b_c = bias();
    p.b_o = bias();
    p.in_channels = in_channels;
    p.channels = channels;
    p.height = height;
    p.width = width;
    return p;
}

template <typename T>
ConvLstmState<T> zero_state(const ConvLstmParams<T>& p, std::int64_t batch) {
    return {TensorT<T>::zeros({batch, p.channels, p.height, p.width}),
            TensorT<T>::zeros({batch, p.channels, p.height, p.width})};
}

// One recurrent step:
//   i = sigmoid(w_xi*x + w_hi*H + w_ci o C + b_i)
//   f = sigmoid(w_xf*x + w_hf*H + w_cf o C + b_f)
//   C' = f o C + i o tanh(w_xc*x + w_hc*H + b_c)
//   o = sigmoid(w_xo*x + w_ho*H + w_co o C' + b_o)
//   H' = o o tanh(C')
// The four x-side (and h-side) convolutions run as one stacked convolution.
template <typename T>
ConvLstmState<T> cell_step(const ConvLstmParams<T>& p, const ConvLstmState<T>& state,
                           const TensorT<T>& x) {
    if (x.rank() != 4 || x.extent(1) != p.in_channels)
        throw ShapeError("cell_step: input must be [B," + std::to_string(p.in_channels) +
                         ",H,W], got " + shape_str(x.shape()));
    if (x.extent(2) != p.height || x.extent(3) != p.width)
        throw ShapeError("cell_step: frame extent " + shape_str(x.shape()) +
                         " does not match peephole maps [" + std::to_string(p.height) + "," +
                         std::to_string(p.width) + "]");
    if (state.hidden.shape() != state.cell.shape() || state.hidden.extent(0) != x.extent(0) ||
        state.hidden.extent(1) != p.channels)
        throw ShapeError("cell_step: state shape mismatch");

    const std::int64_t c = p.channels;
    auto kx = concat<T>({p.w_xi, p.w_xf, p.w_xc, p.w_xo}, 0);
    auto kh = concat<T>({p.w_hi, p.w_hf, p.w_hc, p.w_ho}, 0);
    auto bx = concat<T>({p.b_i, p.b_f, p.b_c, p.b_o}, 0);

    auto pre = add(conv2d_same(x, kx, std::optional<TensorT<T>>(bx)),
                   conv2d_same(state.hidden, kh, std::optional<TensorT<T>>{}));
    auto zi = slice(pre, 1, 0, c);
    auto zf = slice(pre, 1, c, c);
    auto zc = slice(pre, 1, 2 * c, c);
    auto zo = slice(pre, 1, 3 * c, c);

    auto gate_i = sigmoid(add(zi, hadamard(state.cell, p.w_ci)));
    auto gate_f = sigmoid(add(zf, hadamard(state.cell, p.w_cf)));
    auto cell_new = add(hadamard(gate_f, state.cell), hadamard(gate_i, tanh(zc)));
    auto gate_o = sigmoid(add(zo, hadamard(cell_new, p.w_co)));
    auto hidden_new = hadamard(gate_o, tanh(cell_new));
    return {hidden_new, cell_new};
}

template <typename T>
struct LayerRun {
    std::vector<TensorT<T>> hidden_seq;
    ConvLstmState<T> final_state;
};

// Left-to-right fold of cell_step over a sequence, emitting every hidden map.
template <typename T>
LayerRun<T> run_layer(const ConvLstmParams<T>& p, ConvLstmState<T> state,
                      const std::vector<TensorT<T>>& inputs) {
    if (inputs.empty()) throw ShapeError("run_layer: empty input sequence");
    LayerRun<T> run;
    run.hidden_seq.reserve(inputs.size());
    for (const auto& x : inputs) {
        state = cell_step(p, state, x);
        run.hidden_seq.push_back(state.hidden);
    }
    run.final_state = std::move(state);
    return run;
}

// Exact parameter count of one layer: 4*k^2*(Cin+C)*C kernels, 4*C biases,
// 3*C*H*W peephole elements. Zero channel counts yield zero.
inline std::int64_t count_layer_params(std::int64_t in_channels, std::int64_t channels,
                                       std::int64_t height, std::int64_t width) {
    if (in_channels < 0 || channels < 0 || height < 0 || width < 0)
        throw ShapeError("count_layer_params: negative extent");
    const std::int64_t k2 = kConvLstmKernel * kConvLstmKernel;
    return 4 * k2 * (in_channels + channels) * channels + 4 * channels +
           3 * channels * height * width;
}

// Deterministic parameter traversal order, shared by optimizers, clipping and
// checkpoints.
template <typename T>
void append_named_params(const std::string& prefix, ConvLstmParams<T>& p,
                         std::vector<std::pair<std::string, TensorT<T>>>& out) {
    out.emplace_back(prefix + ".w_xi", p.w_xi);
    out.emplace_back(prefix + ".w_xf", p.w_xf);
    out.emplace_back(prefix + ".w_xc", p.w_xc);
    out.emplace_back(prefix + ".w_xo", p.w_xo);
    out.emplace_back(prefix + ".w_hi", p.w_hi);
    out.emplace_back(prefix + ".w_hf", p.w_hf);
    out.emplace_back(prefix + ".w_hc", p.w_hc);
    out.emplace_back(prefix + ".w_ho", p.w_ho);
    out.emplace_back(prefix + ".w_ci", p.w_ci);
    out.emplace_back(prefix + ".w_cf", p.w_cf);
    out.emplace_back(prefix + ".w_co", p.w_co);
    out.emplace_back(prefix + ".b_i", p.b_i);
    out.emplace_back(prefix + ".b_f", p.b_f);
    out.emplace_back(prefix + ".b_c", p.b_c);
    out.emplace_back(prefix + ".b_o", p.b_o);
}

}  // namespace nvp
