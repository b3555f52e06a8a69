#pragma once

#include "nvp/batchnorm.hpp"
#include "nvp/conv.hpp"

namespace nvp {

// Encoder-decoder 3D CNN critic. The encoder applies strided convolutions
// (batch norm + leaky ReLU after each); the decoder mirrors them with
// transposed convolutions whose output paddings restore the encoder's input
// extents exactly. The final layer applies tanh and no normalization.
struct CriticSpec {
    std::vector<std::int64_t> encoder_channels{32, 32, 4};
    std::vector<std::int64_t> decoder_hidden{32, 32};  // final layer restores in_channels
    std::int64_t in_channels = 1;
    std::array<std::int64_t, 3> kernel{7, 7, 7};
    std::array<std::int64_t, 3> stride{2, 2, 2};
    std::array<std::int64_t, 3> padding{3, 3, 3};

    static CriticSpec full_scale(std::int64_t in_channels = 1) {
        CriticSpec s;
        s.in_channels = in_channels;
        return s;
    }

    // Two convolution + two deconvolution layers for the half-rate sequence.
    static CriticSpec half_scale(std::int64_t in_channels = 1) {
        CriticSpec s;
        s.encoder_channels = {32, 4};
        s.decoder_hidden = {32};
        s.in_channels = in_channels;
        return s;
    }

    void validate() const {
        if (encoder_channels.empty() || decoder_hidden.size() + 1 != encoder_channels.size())
            throw ShapeError("critic spec: decoder must mirror the encoder");
        if (in_channels < 1) throw ShapeError("critic spec: in_channels must be positive");
        for (int a = 0; a < 3; ++a)
            if (kernel[a] < 1 || stride[a] < 1 || padding[a] < 0)
                throw ShapeError("critic spec: invalid kernel/stride/padding");
    }
};

template <typename T>
struct CriticConvLayer {
    TensorT<T> kernel;  // enc: [Co,Ci,k...]; dec: [Ci,Co,k...]
    TensorT<T> bias;    // [Co]
    TensorT<T> bn_scale, bn_shift;
    BatchNormStats<T> bn_stats;
    bool has_norm = true;
};

template <typename T>
struct CriticModel {
    CriticSpec spec;
    std::vector<CriticConvLayer<T>> encoder;
    std::vector<CriticConvLayer<T>> decoder;
};

template <typename T>
CriticModel<T> init_critic(const CriticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const auto k = spec.kernel;
    const std::int64_t kvol = k[0] * k[1] * k[2];

    auto conv_layer = [&](std::int64_t ci, std::int64_t co, bool transposed, bool norm) {
        CriticConvLayer<T> layer;
        const T bound = T(1) / std::sqrt(static_cast<T>(ci * kvol));
        Shape kshape = transposed ? Shape{ci, co, k[0], k[1], k[2]} : Shape{co, ci, k[0], k[1], k[2]};
        layer.kernel = TensorT<T>::uniform(kshape, rng, -bound, bound, true);
        layer.bias = TensorT<T>::zeros({co}, true);
        layer.has_norm = norm;
        if (norm) {
            layer.bn_scale = TensorT<T>::filled({co}, T(1), true);
            layer.bn_shift = TensorT<T>::zeros({co}, true);
            layer.bn_stats = BatchNormStats<T>(co);
        }
        return layer;
    };

    CriticModel<T> model;
    model.spec = spec;
    std::int64_t ci = spec.in_channels;
    for (std::int64_t co : spec.encoder_channels) {
        model.encoder.push_back(conv_layer(ci, co, false, true));
        ci = co;
    }
    for (std::int64_t co : spec.decoder_hidden) {
        model.decoder.push_back(conv_layer(ci, co, true, true));
        ci = co;
    }
    model.decoder.push_back(conv_layer(ci, spec.in_channels, true, false));
    return model;
}

// Stacks past and future frames ([B,C,H,W] each) along time into
// [B,C,t+n,H,W]. Past frames enter as constants: no gradient ever reaches
// them, only the generated futures stay differentiable.
template <typename T>
TensorT<T> stack_sequence(const std::vector<TensorT<T>>& past,
                          const std::vector<TensorT<T>>& future) {
    if (past.empty() && future.empty()) throw ShapeError("stack_sequence: empty input");
    std::vector<TensorT<T>> parts;
    parts.reserve(past.size() + future.size());
    auto lift = [](const TensorT<T>& f) {
        if (f.rank() != 4) throw ShapeError("stack_sequence: frames must be [B,C,H,W]");
        return reshape(f, {f.extent(0), f.extent(1), 1, f.extent(2), f.extent(3)});
    };
    for (const auto& f : past) parts.push_back(detach(lift(f)));
    for (const auto& f : future) parts.push_back(lift(f));
    return concat<T>(parts, 2);
}

template <typename T>
struct CriticForward {
    TensorT<T> recon;                     // same shape as the input
    std::vector<TensorT<T>> activations;  // post-activation output of every layer
};

template <typename T>
CriticForward<T> critic_forward(CriticModel<T>& model, const TensorT<T>& z, bool training) {
    if (z.rank() != 5) throw ShapeError("critic_forward: input must be [B,C,T,H,W]");
    if (z.extent(1) != model.spec.in_channels)
        throw ShapeError("critic_forward: channel mismatch");
    // Each stride-2 stage must see at least 2 time steps.
    const std::int64_t min_time = std::int64_t(1) << model.encoder.size();
    if (z.extent(2) < min_time)
        throw ShapeError("critic_forward: sequence too short for the stride pyramid, need >= " +
                         std::to_string(min_time) + " time steps, got " +
                         std::to_string(z.extent(2)));

    CriticForward<T> fwd;
    TensorT<T> y = z;
    std::vector<std::array<std::int64_t, 3>> input_extents;
    for (auto& layer : model.encoder) {
        input_extents.push_back({y.extent(2), y.extent(3), y.extent(4)});
        try {
            y = conv3d(y, layer.kernel, std::optional<TensorT<T>>(layer.bias), model.spec.stride,
                       model.spec.padding);
        } catch (const ShapeError& e) {
            throw ShapeError(std::string("critic_forward: sequence too short for the stride "
                                         "pyramid (") +
                             e.what() + ")");
        }
        y = batch_norm3d(y, layer.bn_scale, layer.bn_shift, layer.bn_stats, training);
        y = leaky_relu(y);
        fwd.activations.push_back(y);
    }
    for (std::size_t j = 0; j < model.decoder.size(); ++j) {
        auto& layer = model.decoder[j];
        const auto target = input_extents[model.decoder.size() - 1 - j];
        std::array<std::int64_t, 3> out_pad;
        for (int a = 0; a < 3; ++a)
            out_pad[a] = conv3d_transposed_output_padding(target[a], model.spec.kernel[a],
                                                          model.spec.stride[a],
                                                          model.spec.padding[a]);
        y = conv3d_transposed(y, layer.kernel, std::optional<TensorT<T>>(layer.bias),
                              model.spec.stride, model.spec.padding, out_pad);
        if (layer.has_norm) {
            y = batch_norm3d(y, layer.bn_scale, layer.bn_shift, layer.bn_stats, training);
            y = leaky_relu(y);
        } else {
            y = tanh(y);
        }
        fwd.activations.push_back(y);
    }
    if (y.shape() != z.shape()) throw ShapeError("critic_forward: reconstruction shape mismatch");
    fwd.recon = y;
    return fwd;
}

// Reconstruction energy ||Dec(Enc(S)) - S||^2 (sum of squares), >= 0.
template <typename T>
TensorT<T> energy(CriticModel<T>& model, const TensorT<T>& s, bool training) {
    return mse(critic_forward(model, s, training).recon, s, Reduction::sum);
}

// Critic objective: energy(X_true) - energy(Z_gen). Both inputs are treated
// as constants here; only critic parameters receive gradients.
template <typename T>
TensorT<T> critic_loss(CriticModel<T>& model, const TensorT<T>& x_true, const TensorT<T>& z_gen,
                       bool training = true) {
    if (x_true.shape() != z_gen.shape())
        throw ShapeError("critic_loss: sequence shape mismatch");
    return sub(energy(model, detach(x_true), training), energy(model, detach(z_gen), training));
}

namespace detail {

// Temporarily disables requires_grad on a parameter set.
template <typename T>
class ParamFreezeGuard {
public:
    explicit ParamFreezeGuard(std::vector<TensorT<T>> params) : params_(std::move(params)) {
        for (auto& p : params_) {
            prev_.push_back(p.requires_grad());
            p.set_requires_grad(false);
        }
    }
    ~ParamFreezeGuard() {
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(prev_[i]);
    }
    ParamFreezeGuard(const ParamFreezeGuard&) = delete;
    ParamFreezeGuard& operator=(const ParamFreezeGuard&) = delete;

private:
    std::vector<TensorT<T>> params_;
    std::vector<bool> prev_;
};

}  // namespace detail

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> named_params(CriticModel<T>& model,
                                                             const std::string& prefix);

// Generator-side adversarial term: energy of the generated stack, with critic
// parameters frozen so gradients flow into the generator outputs only.
template <typename T>
TensorT<T> adversarial_loss_for_generator(CriticModel<T>& model, const TensorT<T>& z_gen,
                                          bool training = true) {
    std::vector<TensorT<T>> params;
    for (auto& [name, p] : named_params(model, "d")) params.push_back(p);
    detail::ParamFreezeGuard<T> freeze(std::move(params));
    return energy(model, z_gen, training);
}

// Channel-mean of one recorded layer activation (batch element 0), optionally
// resampled to `time_len` frames by nearest neighbour. time_len == 0 keeps
// the layer's own time extent.
template <typename T>
TensorT<T> extract_activation_map(const CriticForward<T>& fwd, std::size_t layer_index,
                                  std::int64_t time_len = 0) {
    if (layer_index >= fwd.activations.size())
        throw ShapeError("extract_activation_map: invalid layer index");
    const auto& act = fwd.activations[layer_index];
    const std::int64_t channels = act.extent(1);
    const std::int64_t lt = act.extent(2), lh = act.extent(3), lw = act.extent(4);
    const std::int64_t out_t = time_len > 0 ? time_len : lt;

    std::vector<T> map(static_cast<std::size_t>(out_t * lh * lw), T(0));
    const auto& data = act.data();
    for (std::int64_t ot = 0; ot < out_t; ++ot) {
        const std::int64_t st = time_len > 0 ? std::min(ot * lt / out_t, lt - 1) : ot;
        for (std::int64_t c = 0; c < channels; ++c) {
            const T* src = data.data() + (c * lt + st) * lh * lw;  // batch 0
            T* dst = map.data() + ot * lh * lw;
            for (std::int64_t i = 0; i < lh * lw; ++i) dst[i] += src[i];
        }
    }
    for (auto& v : map) v /= static_cast<T>(channels);
    return TensorT<T>::from({out_t, lh, lw}, std::move(map));
}

// Index of the second-to-last layer in the recorded activation list.
template <typename T>
std::size_t second_to_last_layer(const CriticForward<T>& fwd) {
    if (fwd.activations.size() < 2) throw ShapeError("critic has fewer than two layers");
    return fwd.activations.size() - 2;
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> named_params(CriticModel<T>& model,
                                                             const std::string& prefix) {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    auto add_layer = [&](const std::string& name, CriticConvLayer<T>& layer) {
        out.emplace_back(name + ".kernel", layer.kernel);
        out.emplace_back(name + ".bias", layer.bias);
        if (layer.has_norm) {
            out.emplace_back(name + ".bn_scale", layer.bn_scale);
            out.emplace_back(name + ".bn_shift", layer.bn_shift);
        }
    };
    for (std::size_t i = 0; i < model.encoder.size(); ++i)
        add_layer(prefix + ".enc" + std::to_string(i), model.encoder[i]);
    for (std::size_t i = 0; i < model.decoder.size(); ++i)
        add_layer(prefix + ".dec" + std::to_string(i), model.decoder[i]);
    return out;
}

// Running batch-norm statistics (non-trainable state that checkpoints carry).
template <typename T>
std::vector<std::pair<std::string, std::vector<T>*>> named_bn_state(CriticModel<T>& model,
                                                                    const std::string& prefix) {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    auto add_layer = [&](const std::string& name, CriticConvLayer<T>& layer) {
        if (!layer.has_norm) return;
        out.emplace_back(name + ".bn_mean", &layer.bn_stats.mean);
        out.emplace_back(name + ".bn_var", &layer.bn_stats.var);
    };
    for (std::size_t i = 0; i < model.encoder.size(); ++i)
        add_layer(prefix + ".enc" + std::to_string(i), model.encoder[i]);
    for (std::size_t i = 0; i < model.decoder.size(); ++i)
        add_layer(prefix + ".dec" + std::to_string(i), model.decoder[i]);
    return out;
}

}  // namespace nvp
