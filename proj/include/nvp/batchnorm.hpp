#pragma once

#include "nvp/ops.hpp"

namespace nvp {

// Per-channel running statistics. First training step seeds them with the
// batch moments; later steps blend with momentum 0.9. Using them before any
// training step is an error.
template <typename T>
struct BatchNormStats {
    std::vector<T> mean;
    std::vector<T> var;
    bool initialized = false;

    static constexpr T kEps = T(1e-5);
    static constexpr T kMomentum = T(0.9);

    explicit BatchNormStats(std::int64_t channels = 0)
        : mean(static_cast<std::size_t>(channels), T(0)),
          var(static_cast<std::size_t>(channels), T(1)) {}
};

// Batch normalization of [B,C,T,H,W] over (B,T,H,W) per channel. Training
// mode uses biased batch moments and updates `stats` as a side effect; eval
// mode normalizes with the stored running statistics.
template <typename T>
TensorT<T> batch_norm3d(const TensorT<T>& input, const TensorT<T>& scale_param,
                        const TensorT<T>& shift_param, BatchNormStats<T>& stats, bool training) {
    if (input.rank() != 5) throw ShapeError("batch_norm3d: input must be [B,C,T,H,W]");
    const std::int64_t batch = input.extent(0);
    const std::int64_t channels = input.extent(1);
    const std::int64_t spatial = input.extent(2) * input.extent(3) * input.extent(4);
    if (scale_param.rank() != 1 || scale_param.extent(0) != channels ||
        shift_param.rank() != 1 || shift_param.extent(0) != channels)
        throw ShapeError("batch_norm3d: scale/shift must have shape [C]");
    if (static_cast<std::int64_t>(stats.mean.size()) != channels)
        throw ShapeError("batch_norm3d: running stats channel mismatch");

    const std::int64_t per_channel = batch * spatial;
    std::vector<T> mean(channels), var(channels);
    if (training) {
        if (per_channel < 2)
            throw ShapeError("batch_norm3d: training needs at least 2 values per channel");
        const auto& xd = input.data();
        for (std::int64_t c = 0; c < channels; ++c) {
            T sum = T(0);
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* row = xd.data() + (b * channels + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) sum += row[i];
            }
            const T mu = sum / static_cast<T>(per_channel);
            T sq = T(0);
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* row = xd.data() + (b * channels + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) {
                    const T d = row[i] - mu;
                    sq += d * d;
                }
            }
            mean[c] = mu;
            var[c] = sq / static_cast<T>(per_channel);
        }
        if (!stats.initialized) {
            stats.mean.assign(mean.begin(), mean.end());
            stats.var.assign(var.begin(), var.end());
            stats.initialized = true;
        } else {
            for (std::int64_t c = 0; c < channels; ++c) {
                stats.mean[c] = BatchNormStats<T>::kMomentum * stats.mean[c] +
                                (T(1) - BatchNormStats<T>::kMomentum) * mean[c];
                stats.var[c] = BatchNormStats<T>::kMomentum * stats.var[c] +
                               (T(1) - BatchNormStats<T>::kMomentum) * var[c];
            }
        }
    } else {
        if (!stats.initialized)
            throw Error("batch_norm3d: eval mode before any training step");
        mean.assign(stats.mean.begin(), stats.mean.end());
        var.assign(stats.var.begin(), stats.var.end());
    }

    std::vector<T> inv_std(channels);
    for (std::int64_t c = 0; c < channels; ++c)
        inv_std[c] = T(1) / std::sqrt(var[c] + BatchNormStats<T>::kEps);

    const auto& xd = input.data();
    const auto& gamma = scale_param.data();
    const auto& beta = shift_param.data();
    std::vector<T> out(xd.size());
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t c = 0; c < channels; ++c) {
            const T* row = xd.data() + (b * channels + c) * spatial;
            T* orow = out.data() + (b * channels + c) * spatial;
            const T mu = mean[c], is = inv_std[c], g = gamma[c], bt = beta[c];
            for (std::int64_t i = 0; i < spatial; ++i) orow[i] = g * (row[i] - mu) * is + bt;
        }

    auto backward = [batch, channels, spatial, mean, inv_std, training](NodeT<T>& self) {
        auto& x = *self.parents[0];
        auto& gamma_n = *self.parents[1];
        auto& beta_n = *self.parents[2];
        const std::int64_t per_channel = batch * spatial;

        // dbeta, dgamma.
        std::vector<T> sum_gy(channels, T(0)), sum_gy_xhat(channels, T(0));
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t c = 0; c < channels; ++c) {
                const T* gy = self.grad.data() + (b * channels + c) * spatial;
                const T* xr = x.data.data() + (b * channels + c) * spatial;
                T s0 = T(0), s1 = T(0);
                for (std::int64_t i = 0; i < spatial; ++i) {
                    s0 += gy[i];
                    s1 += gy[i] * (xr[i] - mean[c]) * inv_std[c];
                }
                sum_gy[c] += s0;
                sum_gy_xhat[c] += s1;
            }
        if (self.live(2)) {
            beta_n.ensure_grad();
            for (std::int64_t c = 0; c < channels; ++c) beta_n.grad[c] += sum_gy[c];
        }
        if (self.live(1)) {
            gamma_n.ensure_grad();
            for (std::int64_t c = 0; c < channels; ++c) gamma_n.grad[c] += sum_gy_xhat[c];
        }
        if (self.live(0)) {
            x.ensure_grad();
            for (std::int64_t b = 0; b < batch; ++b)
                for (std::int64_t c = 0; c < channels; ++c) {
                    const T* gy = self.grad.data() + (b * channels + c) * spatial;
                    const T* xr = x.data.data() + (b * channels + c) * spatial;
                    T* gx = x.grad.data() + (b * channels + c) * spatial;
                    const T g = gamma_n.data[c] * inv_std[c];
                    if (training) {
                        const T m_gy = sum_gy[c] / static_cast<T>(per_channel);
                        const T m_gy_xhat = sum_gy_xhat[c] / static_cast<T>(per_channel);
                        for (std::int64_t i = 0; i < spatial; ++i) {
                            const T xhat = (xr[i] - mean[c]) * inv_std[c];
                            gx[i] += g * (gy[i] - m_gy - xhat * m_gy_xhat);
                        }
                    } else {
                        for (std::int64_t i = 0; i < spatial; ++i) gx[i] += g * gy[i];
                    }
                }
        }
    };

    return detail::make_op<T>(input.shape(), std::move(out), {input, scale_param, shift_param},
                              std::move(backward), "batch_norm3d");
}

}  // namespace nvp
