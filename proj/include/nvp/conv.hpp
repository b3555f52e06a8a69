#pragma once

#include <array>
#include <optional>

#include <cblas.h>

#include "nvp/ops.hpp"

namespace nvp {

namespace detail {

inline void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                 float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
                 float beta, float* c, std::int64_t ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                 double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
                 double beta, double* c, std::int64_t ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

using Axes3 = std::array<std::int64_t, 3>;

// Shared geometry for all 2-D/3-D convolution paths (2-D runs with a
// singleton leading axis). Cross-correlation over zero-padded input.
struct ConvGeom {
    std::int64_t ci = 0, co = 0;
    Axes3 k{}, s{}, p{};
    Axes3 in{}, out{};

    std::int64_t cols_rows() const { return ci * k[0] * k[1] * k[2]; }
    std::int64_t in_volume() const { return in[0] * in[1] * in[2]; }
    std::int64_t out_volume() const { return out[0] * out[1] * out[2]; }
};

inline ConvGeom make_conv_geom(std::int64_t ci, std::int64_t co, const Axes3& k, const Axes3& s,
                               const Axes3& p, const Axes3& in) {
    ConvGeom g;
    g.ci = ci;
    g.co = co;
    g.k = k;
    g.s = s;
    g.p = p;
    g.in = in;
    for (int a = 0; a < 3; ++a) {
        if (k[a] < 1 || in[a] < 1) throw ShapeError("conv: non-positive kernel or input extent");
        if (s[a] < 1) throw ShapeError("conv: stride must be >= 1");
        if (p[a] < 0) throw ShapeError("conv: negative padding");
        const std::int64_t span = in[a] + 2 * p[a] - k[a];
        if (span < 0)
            throw ShapeError("conv: kernel extent " + std::to_string(k[a]) +
                             " exceeds padded input extent " + std::to_string(in[a] + 2 * p[a]));
        g.out[a] = span / s[a] + 1;
    }
    return g;
}

// Tile width (in output positions) for the column buffer, aligned to whole
// innermost rows so im2col never splits an o2 run.
inline std::int64_t conv_tile_cols(const ConvGeom& g) {
    constexpr std::int64_t kBudget = std::int64_t(4) << 20;  // scalars in the col buffer
    const std::int64_t rows = g.cols_rows();
    std::int64_t tile = std::max<std::int64_t>(1, kBudget / std::max<std::int64_t>(rows, 1));
    tile = (tile / g.out[2]) * g.out[2];
    if (tile < g.out[2]) tile = g.out[2];
    return std::min(tile, g.out_volume());
}

// cols[(ci,k0,k1,k2)][n - n0] for output positions n in [n0, n1).
// n0/n1 must be multiples of out[2].
template <typename T>
void im2col(const T* x, const ConvGeom& g, std::int64_t n0, std::int64_t n1, T* cols) {
    const std::int64_t nt = n1 - n0;
    const std::int64_t o2e = g.out[2];
    const std::int64_t row0 = n0 / o2e;  // flattened (o0,o1) row index
    const std::int64_t row1 = n1 / o2e;
    const std::int64_t in12 = g.in[1] * g.in[2];
    T* dst = cols;
    for (std::int64_t ci = 0; ci < g.ci; ++ci) {
        const T* xc = x + ci * g.in[0] * in12;
        for (std::int64_t k0 = 0; k0 < g.k[0]; ++k0)
            for (std::int64_t k1 = 0; k1 < g.k[1]; ++k1)
                for (std::int64_t k2 = 0; k2 < g.k[2]; ++k2) {
                    for (std::int64_t r = row0; r < row1; ++r) {
                        const std::int64_t o0 = r / g.out[1];
                        const std::int64_t o1 = r % g.out[1];
                        const std::int64_t i0 = o0 * g.s[0] + k0 - g.p[0];
                        const std::int64_t i1 = o1 * g.s[1] + k1 - g.p[1];
                        T* d = dst + (r - row0) * o2e;
                        if (i0 < 0 || i0 >= g.in[0] || i1 < 0 || i1 >= g.in[1]) {
                            std::fill_n(d, o2e, T(0));
                            continue;
                        }
                        const T* src = xc + i0 * in12 + i1 * g.in[2];
                        for (std::int64_t o2 = 0; o2 < o2e; ++o2) {
                            const std::int64_t i2 = o2 * g.s[2] + k2 - g.p[2];
                            d[o2] = (i2 >= 0 && i2 < g.in[2]) ? src[i2] : T(0);
                        }
                    }
                    dst += nt;
                }
    }
}

// Scatter-add transpose of im2col; single-threaded, fixed order.
template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, std::int64_t n0, std::int64_t n1, T* x_acc) {
    const std::int64_t nt = n1 - n0;
    const std::int64_t o2e = g.out[2];
    const std::int64_t row0 = n0 / o2e;
    const std::int64_t row1 = n1 / o2e;
    const std::int64_t in12 = g.in[1] * g.in[2];
    const T* src = cols;
    for (std::int64_t ci = 0; ci < g.ci; ++ci) {
        T* xc = x_acc + ci * g.in[0] * in12;
        for (std::int64_t k0 = 0; k0 < g.k[0]; ++k0)
            for (std::int64_t k1 = 0; k1 < g.k[1]; ++k1)
                for (std::int64_t k2 = 0; k2 < g.k[2]; ++k2) {
                    for (std::int64_t r = row0; r < row1; ++r) {
                        const std::int64_t o0 = r / g.out[1];
                        const std::int64_t o1 = r % g.out[1];
                        const std::int64_t i0 = o0 * g.s[0] + k0 - g.p[0];
                        const std::int64_t i1 = o1 * g.s[1] + k1 - g.p[1];
                        if (i0 < 0 || i0 >= g.in[0] || i1 < 0 || i1 >= g.in[1]) continue;
                        const T* s = src + (r - row0) * o2e;
                        T* dst = xc + i0 * in12 + i1 * g.in[2];
                        for (std::int64_t o2 = 0; o2 < o2e; ++o2) {
                            const std::int64_t i2 = o2 * g.s[2] + k2 - g.p[2];
                            if (i2 >= 0 && i2 < g.in[2]) dst[i2] += s[o2];
                        }
                    }
                    src += nt;
                }
    }
}

// y[b,co,out] = W[co,K] . cols(x[b]); bias added per output channel.
template <typename T>
void conv_forward(const T* x, std::int64_t batch, const T* w, const T* bias, const ConvGeom& g,
                  T* y) {
    const std::int64_t kk = g.cols_rows();
    const std::int64_t n_out = g.out_volume();
    const std::int64_t tile = conv_tile_cols(g);
    std::vector<T> cols(static_cast<std::size_t>(kk * tile));
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* xb = x + b * g.ci * g.in_volume();
        T* yb = y + b * g.co * n_out;
        for (std::int64_t n0 = 0; n0 < n_out; n0 += tile) {
            const std::int64_t n1 = std::min(n0 + tile, n_out);
            im2col(xb, g, n0, n1, cols.data());
            gemm(false, false, g.co, n1 - n0, kk, T(1), w, kk, cols.data(), n1 - n0, T(0),
                 yb + n0, n_out);
        }
        if (bias) {
            for (std::int64_t co = 0; co < g.co; ++co) {
                const T bv = bias[co];
                T* row = yb + co * n_out;
                for (std::int64_t n = 0; n < n_out; ++n) row[n] += bv;
            }
        }
    }
}

// gx[b] += col2im(W^T . gy[b]).
template <typename T>
void conv_backward_input(const T* gy, std::int64_t batch, const T* w, const ConvGeom& g, T* gx) {
    const std::int64_t kk = g.cols_rows();
    const std::int64_t n_out = g.out_volume();
    const std::int64_t tile = conv_tile_cols(g);
    std::vector<T> dcols(static_cast<std::size_t>(kk * tile));
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* gyb = gy + b * g.co * n_out;
        T* gxb = gx + b * g.ci * g.in_volume();
        for (std::int64_t n0 = 0; n0 < n_out; n0 += tile) {
            const std::int64_t n1 = std::min(n0 + tile, n_out);
            gemm(true, false, kk, n1 - n0, g.co, T(1), w, kk, gyb + n0, n_out, T(0), dcols.data(),
                 n1 - n0);
            col2im_add(dcols.data(), g, n0, n1, gxb);
        }
    }
}

// gw[co,K] += sum_b gy[b] . cols(x[b])^T.
template <typename T>
void conv_backward_weight(const T* x, const T* gy, std::int64_t batch, const ConvGeom& g, T* gw) {
    const std::int64_t kk = g.cols_rows();
    const std::int64_t n_out = g.out_volume();
    const std::int64_t tile = conv_tile_cols(g);
    std::vector<T> cols(static_cast<std::size_t>(kk * tile));
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* xb = x + b * g.ci * g.in_volume();
        const T* gyb = gy + b * g.co * n_out;
        for (std::int64_t n0 = 0; n0 < n_out; n0 += tile) {
            const std::int64_t n1 = std::min(n0 + tile, n_out);
            im2col(xb, g, n0, n1, cols.data());
            gemm(false, true, g.co, kk, n1 - n0, T(1), gyb + n0, n_out, cols.data(), n1 - n0, T(1),
                 gw, kk);
        }
    }
}

template <typename T>
void accumulate_bias_grad(const T* gy, std::int64_t batch, std::int64_t co, std::int64_t n_out,
                          T* gbias) {
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t c = 0; c < co; ++c) {
            const T* row = gy + (b * co + c) * n_out;
            T acc = T(0);
            for (std::int64_t n = 0; n < n_out; ++n) acc += row[n];
            gbias[c] += acc;
        }
}

template <typename T>
void check_optional_bias(const std::optional<TensorT<T>>& bias, std::int64_t co, const char* op) {
    if (!bias) return;
    if (bias->rank() != 1 || bias->extent(0) != co)
        throw ShapeError(std::string(op) + ": bias must have shape [" + std::to_string(co) + "]");
}

}  // namespace detail

// 3-D cross-correlation of [B,Ci,T,H,W] with kernel [Co,Ci,kt,kh,kw];
// per-axis output extent is (n + 2p - k) / s + 1.
template <typename T>
TensorT<T> conv3d(const TensorT<T>& input, const TensorT<T>& kernel,
                  const std::optional<TensorT<T>>& bias, const std::array<std::int64_t, 3>& stride,
                  const std::array<std::int64_t, 3>& padding) {
    if (input.rank() != 5) throw ShapeError("conv3d: input must be [B,C,T,H,W]");
    if (kernel.rank() != 5) throw ShapeError("conv3d: kernel must be [Co,Ci,kt,kh,kw]");
    const std::int64_t batch = input.extent(0);
    const std::int64_t ci = input.extent(1);
    if (kernel.extent(1) != ci)
        throw ShapeError("conv3d: channel mismatch, input has " + std::to_string(ci) +
                         ", kernel expects " + std::to_string(kernel.extent(1)));
    const std::int64_t co = kernel.extent(0);
    detail::check_optional_bias(bias, co, "conv3d");

    const detail::ConvGeom g = detail::make_conv_geom(
        ci, co, {kernel.extent(2), kernel.extent(3), kernel.extent(4)}, stride, padding,
        {input.extent(2), input.extent(3), input.extent(4)});

    std::vector<T> out(static_cast<std::size_t>(batch * co * g.out_volume()));
    detail::conv_forward(input.data().data(), batch, kernel.data().data(),
                         bias ? bias->data().data() : nullptr, g, out.data());

    auto backward = [g, batch, has_bias = bias.has_value()](NodeT<T>& self) {
        auto& x = *self.parents[0];
        auto& k = *self.parents[1];
        if (self.live(0)) {
            x.ensure_grad();
            detail::conv_backward_input(self.grad.data(), batch, k.data.data(), g, x.grad.data());
        }
        if (self.live(1)) {
            k.ensure_grad();
            detail::conv_backward_weight(x.data.data(), self.grad.data(), batch, g, k.grad.data());
        }
        if (has_bias && self.live(2)) {
            auto& b = *self.parents[2];
            b.ensure_grad();
            detail::accumulate_bias_grad(self.grad.data(), batch, g.co, g.out_volume(),
                                         b.grad.data());
        }
    };

    Shape out_shape{batch, co, g.out[0], g.out[1], g.out[2]};
    if (bias)
        return detail::make_op<T>(std::move(out_shape), std::move(out), {input, kernel, *bias},
                                  std::move(backward), "conv3d");
    return detail::make_op<T>(std::move(out_shape), std::move(out), {input, kernel},
                              std::move(backward), "conv3d");
}

// 2-D cross-correlation of [B,Ci,H,W] with kernel [Co,Ci,kh,kw], stride 1.
// Kernel extents must be odd so "same" padding (k-1)/2 is well defined.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel,
                  const std::optional<TensorT<T>>& bias, std::int64_t pad_h, std::int64_t pad_w) {
    if (input.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W]");
    if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [Co,Ci,kh,kw]");
    if (kernel.extent(2) % 2 == 0 || kernel.extent(3) % 2 == 0)
        throw ShapeError("conv2d: kernel extents must be odd");
    const std::int64_t batch = input.extent(0);
    const std::int64_t ci = input.extent(1);
    if (kernel.extent(1) != ci)
        throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(ci) +
                         ", kernel expects " + std::to_string(kernel.extent(1)));
    const std::int64_t co = kernel.extent(0);
    detail::check_optional_bias(bias, co, "conv2d");

    // Runs on the 3-D engine with a singleton leading axis; layouts coincide.
    const detail::ConvGeom g = detail::make_conv_geom(
        ci, co, {1, kernel.extent(2), kernel.extent(3)}, {1, 1, 1}, {0, pad_h, pad_w},
        {1, input.extent(2), input.extent(3)});

    std::vector<T> out(static_cast<std::size_t>(batch * co * g.out_volume()));
    detail::conv_forward(input.data().data(), batch, kernel.data().data(),
                         bias ? bias->data().data() : nullptr, g, out.data());

    auto backward = [g, batch, has_bias = bias.has_value()](NodeT<T>& self) {
        auto& x = *self.parents[0];
        auto& k = *self.parents[1];
        if (self.live(0)) {
            x.ensure_grad();
            detail::conv_backward_input(self.grad.data(), batch, k.data.data(), g, x.grad.data());
        }
        if (self.live(1)) {
            k.ensure_grad();
            detail::conv_backward_weight(x.data.data(), self.grad.data(), batch, g, k.grad.data());
        }
        if (has_bias && self.live(2)) {
            auto& b = *self.parents[2];
            b.ensure_grad();
            detail::accumulate_bias_grad(self.grad.data(), batch, g.co, g.out_volume(),
                                         b.grad.data());
        }
    };

    Shape out_shape{batch, co, g.out[1], g.out[2]};
    if (bias)
        return detail::make_op<T>(std::move(out_shape), std::move(out), {input, kernel, *bias},
                                  std::move(backward), "conv2d");
    return detail::make_op<T>(std::move(out_shape), std::move(out), {input, kernel},
                              std::move(backward), "conv2d");
}

// "Same" padding for odd kernels.
template <typename T>
TensorT<T> conv2d_same(const TensorT<T>& input, const TensorT<T>& kernel,
                       const std::optional<TensorT<T>>& bias) {
    return conv2d(input, kernel, bias, (kernel.extent(2) - 1) / 2, (kernel.extent(3) - 1) / 2);
}

// Output padding required for the transposed convolution to restore
// target_extent through a (k, s, p) convolution; throws when impossible.
inline std::int64_t conv3d_transposed_output_padding(std::int64_t target_extent, std::int64_t k,
                                                     std::int64_t s, std::int64_t p) {
    const std::int64_t conv_out = (target_extent + 2 * p - k) / s + 1;
    const std::int64_t op = target_extent - ((conv_out - 1) * s - 2 * p + k);
    if (op < 0 || op >= s)
        throw ShapeError("conv3d_transposed: extent " + std::to_string(target_extent) +
                         " is not reachable with k=" + std::to_string(k) +
                         " s=" + std::to_string(s) + " p=" + std::to_string(p));
    return op;
}

// Transposed 3-D convolution: adjoint of conv3d's linear map (up to bias).
// Kernel layout is [Ci,Co,kt,kh,kw]; output extent per axis is
// (n - 1)*s - 2p + k + output_padding with output_padding < s.
template <typename T>
TensorT<T> conv3d_transposed(const TensorT<T>& input, const TensorT<T>& kernel,
                             const std::optional<TensorT<T>>& bias,
                             const std::array<std::int64_t, 3>& stride,
                             const std::array<std::int64_t, 3>& padding,
                             const std::array<std::int64_t, 3>& output_padding) {
    if (input.rank() != 5) throw ShapeError("conv3d_transposed: input must be [B,C,T,H,W]");
    if (kernel.rank() != 5) throw ShapeError("conv3d_transposed: kernel must be [Ci,Co,kt,kh,kw]");
    const std::int64_t batch = input.extent(0);
    const std::int64_t ci = input.extent(1);
    if (kernel.extent(0) != ci)
        throw ShapeError("conv3d_transposed: channel mismatch, input has " + std::to_string(ci) +
                         ", kernel expects " + std::to_string(kernel.extent(0)));
    const std::int64_t co = kernel.extent(1);
    detail::check_optional_bias(bias, co, "conv3d_transposed");

    detail::Axes3 out_ext;
    for (int a = 0; a < 3; ++a) {
        if (stride[a] < 1) throw ShapeError("conv3d_transposed: stride must be >= 1");
        if (output_padding[a] < 0 || output_padding[a] >= stride[a])
            throw ShapeError("conv3d_transposed: output_padding must be in [0, stride)");
        out_ext[a] = (input.extent(2 + a) - 1) * stride[a] - 2 * padding[a] +
                     kernel.extent(2 + a) + output_padding[a];
        if (out_ext[a] < 1) throw ShapeError("conv3d_transposed: non-positive output extent");
    }

    // Mirror geometry: this op's output plays the conv input role. The kernel
    // tensor [Ci,Co,k...] is exactly the mirror conv's [rows=Ci, K=Co*k] matrix.
    const detail::ConvGeom g = detail::make_conv_geom(
        co, ci, {kernel.extent(2), kernel.extent(3), kernel.extent(4)}, stride, padding, out_ext);
    for (int a = 0; a < 3; ++a)
        if (g.out[a] != input.extent(2 + a))
            throw ShapeError("conv3d_transposed: inconsistent geometry");

    std::vector<T> out(static_cast<std::size_t>(batch * co * g.in_volume()), T(0));
    detail::conv_backward_input(input.data().data(), batch, kernel.data().data(), g, out.data());
    if (bias) {
        const std::int64_t vol = g.in_volume();
        const auto& bd = bias->data();
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t c = 0; c < co; ++c) {
                T* row = out.data() + (b * co + c) * vol;
                for (std::int64_t n = 0; n < vol; ++n) row[n] += bd[c];
            }
    }

    auto backward = [g, batch, co, has_bias = bias.has_value()](NodeT<T>& self) {
        auto& x = *self.parents[0];
        auto& k = *self.parents[1];
        if (self.live(0)) {
            x.ensure_grad();
            // Adjoint of the adjoint: a plain convolution of the output grad.
            std::vector<T> gx(x.data.size());
            detail::conv_forward<T>(self.grad.data(), batch, k.data.data(), nullptr, g, gx.data());
            for (std::size_t i = 0; i < gx.size(); ++i) x.grad[i] += gx[i];
        }
        if (self.live(1)) {
            k.ensure_grad();
            detail::conv_backward_weight(self.grad.data(), x.data.data(), batch, g, k.grad.data());
        }
        if (has_bias && self.live(2)) {
            auto& b = *self.parents[2];
            b.ensure_grad();
            detail::accumulate_bias_grad(self.grad.data(), batch, co, g.in_volume(),
                                         b.grad.data());
        }
    };

    Shape out_shape{batch, co, out_ext[0], out_ext[1], out_ext[2]};
    if (bias)
        return detail::make_op<T>(std::move(out_shape), std::move(out), {input, kernel, *bias},
                                  std::move(backward), "conv3d_transposed");
    return detail::make_op<T>(std::move(out_shape), std::move(out), {input, kernel},
                              std::move(backward), "conv3d_transposed");
}

}  // namespace nvp
