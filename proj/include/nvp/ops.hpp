#pragma once

#include <cmath>

#include "nvp/tensor.hpp"

namespace nvp {

namespace detail {

template <typename T>
TensorT<T> make_op_v(Shape shape, std::vector<T> data, const std::vector<TensorT<T>>& inputs,
                     std::function<void(NodeT<T>&)> backward_fn, const char* op) {
    auto out = TensorT<T>::from(std::move(shape), std::move(data));
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        auto* n = out.node_ptr().get();
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        n->parent_live.reserve(inputs.size());
        for (const auto& in : inputs) {
            n->parents.push_back(in.node_ptr());
            n->parent_live.push_back(in.requires_grad() ? 1 : 0);
        }
        n->backward_fn = std::move(backward_fn);
        n->op = op;
    }
    return out;
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return detail::make_op<T>(
        a.shape(), std::move(out), {a, b},
        [](NodeT<T>& self) {
            for (std::size_t k = 0; k < 2; ++k) {
                if (!self.live(k)) continue;
                auto& p = *self.parents[k];
                p.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
            }
        },
        "add");
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    return detail::make_op<T>(
        a.shape(), std::move(out), {a, b},
        [](NodeT<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (self.live(0)) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
            }
            if (self.live(1)) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
            }
        },
        "sub");
}

// Multiply by a compile-time constant scalar (loss weights, interpolation).
template <typename T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
    std::vector<T> out(a.data());
    for (auto& v : out) v *= factor;
    return detail::make_op<T>(
        a.shape(), std::move(out), {a},
        [factor](NodeT<T>& self) {
            if (!self.live(0)) return;
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
        },
        "scale");
}

// Elementwise product. Either identical shapes, or b matching a's shape with
// the leading batch axis dropped (peephole maps against batched state); the
// broadcast reduction over the batch runs in fixed order.
template <typename T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
    const bool same = a.shape() == b.shape();
    bool batch_bcast = false;
    if (!same) {
        const auto& as = a.shape();
        const auto& bs = b.shape();
        batch_bcast = as.size() == bs.size() + 1 &&
                      std::equal(as.begin() + 1, as.end(), bs.begin(), bs.end());
        if (!batch_bcast)
            throw ShapeError("hadamard: incompatible shapes " + shape_str(as) + " vs " +
                             shape_str(bs));
    }
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<T> out(ad.size());
    const std::size_t inner = bd.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[same ? i : i % inner];

    return detail::make_op<T>(
        a.shape(), std::move(out), {a, b},
        [same, inner](NodeT<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (self.live(0)) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa.grad[i] += self.grad[i] * pb.data[same ? i : i % inner];
            }
            if (self.live(1)) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[same ? i : i % inner] += self.grad[i] * pa.data[i];
            }
        },
        "hadamard");
}

enum class Activation { sigmoid, tanh, leaky_relu };

namespace detail {

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
TensorT<T> pointwise(const TensorT<T>& a, Activation fn, T alpha = T(0.2)) {
    std::vector<T> out(a.data().size());
    const auto& ad = a.data();
    switch (fn) {
        case Activation::sigmoid:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(ad[i]);
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(ad[i]);
            break;
        case Activation::leaky_relu:
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = ad[i] >= T(0) ? ad[i] : alpha * ad[i];
            break;
    }
    return detail::make_op<T>(
        a.shape(), std::move(out), {a},
        [fn, alpha](NodeT<T>& self) {
            if (!self.live(0)) return;
            auto& p = *self.parents[0];
            p.ensure_grad();
            switch (fn) {
                case Activation::sigmoid:
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                        const T y = self.data[i];
                        p.grad[i] += self.grad[i] * y * (T(1) - y);
                    }
                    break;
                case Activation::tanh:
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                        const T y = self.data[i];
                        p.grad[i] += self.grad[i] * (T(1) - y * y);
                    }
                    break;
                case Activation::leaky_relu:
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                        p.grad[i] += self.grad[i] * (p.data[i] >= T(0) ? T(1) : alpha);
                    break;
            }
        },
        "pointwise");
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    return pointwise(a, Activation::sigmoid);
}

template <typename T>
TensorT<T> tanh(const TensorT<T>& a) {
    return pointwise(a, Activation::tanh);
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& a, T alpha = T(0.2)) {
    return pointwise(a, Activation::leaky_relu, alpha);
}

enum class Reduction { sum, mean };

// Squared-error reduction; differentiable in both arguments.
template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b, Reduction reduction) {
    detail::require_same_shape(a, b, "mse");
    const auto& ad = a.data();
    const auto& bd = b.data();
    T acc = T(0);
    for (std::size_t i = 0; i < ad.size(); ++i) {
        const T d = ad[i] - bd[i];
        acc += d * d;
    }
    const T denom = reduction == Reduction::mean ? static_cast<T>(ad.size()) : T(1);
    return detail::make_op<T>(
        Shape{1}, {acc / denom}, {a, b},
        [denom](NodeT<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const T g = self.grad[0] * T(2) / denom;
            if (self.live(0)) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < pa.data.size(); ++i)
                    pa.grad[i] += g * (pa.data[i] - pb.data[i]);
            }
            if (self.live(1)) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < pb.data.size(); ++i)
                    pb.grad[i] -= g * (pa.data[i] - pb.data[i]);
            }
        },
        "mse");
}

// Concatenate along an axis; all other extents must agree.
template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range");

    std::int64_t axis_total = 0;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != s0[d])
                throw ShapeError("concat: extent mismatch at axis " + std::to_string(d));
        axis_total += s[axis];
    }

    Shape out_shape = s0;
    out_shape[axis] = axis_total;
    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    std::vector<T> out(static_cast<std::size_t>(outer * axis_total * inner));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t len = p.shape()[axis] * inner;
        const auto& src = p.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(src.begin() + o * len, len,
                        out.begin() + o * axis_total * inner + offset);
        offset += len;
    }

    std::vector<std::int64_t> part_lens;
    part_lens.reserve(parts.size());
    for (const auto& p : parts) part_lens.push_back(p.shape()[axis] * inner);

    return detail::make_op_v<T>(
        std::move(out_shape), std::move(out), parts,
        [outer, axis_total, inner, part_lens](NodeT<T>& self) {
            std::int64_t offset = 0;
            for (std::size_t k = 0; k < self.parents.size(); ++k) {
                auto& p = *self.parents[k];
                const std::int64_t len = part_lens[k];
                if (self.live(k)) {
                    p.ensure_grad();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const T* g = self.grad.data() + o * axis_total * inner + offset;
                        T* dst = p.grad.data() + o * len;
                        for (std::int64_t i = 0; i < len; ++i) dst[i] += g[i];
                    }
                }
                offset += len;
            }
        },
        "concat");
}

// Contiguous sub-range along one axis.
template <typename T>
TensorT<T> slice(const TensorT<T>& a, std::size_t axis, std::int64_t start, std::int64_t len) {
    const auto& s = a.shape();
    if (axis >= s.size()) throw ShapeError("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > s[axis]) throw ShapeError("slice: range out of bounds");

    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::int64_t axis_ext = s[axis];

    Shape out_shape = s;
    out_shape[axis] = len;
    std::vector<T> out(static_cast<std::size_t>(outer * len * inner));
    const auto& src = a.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(src.begin() + (o * axis_ext + start) * inner, len * inner,
                    out.begin() + o * len * inner);

    return detail::make_op<T>(
        std::move(out_shape), std::move(out), {a},
        [outer, inner, axis_ext, start, len](NodeT<T>& self) {
            if (!self.live(0)) return;
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                const T* g = self.grad.data() + o * len * inner;
                T* dst = p.grad.data() + (o * axis_ext + start) * inner;
                for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        },
        "slice");
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape new_shape) {
    if (numel(new_shape) != a.numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                         shape_str(new_shape));
    return detail::make_op<T>(
        std::move(new_shape), std::vector<T>(a.data()), {a},
        [](NodeT<T>& self) {
            if (!self.live(0)) return;
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        },
        "reshape");
}

// Copy with the graph cut: result is a constant leaf.
template <typename T>
TensorT<T> detach(const TensorT<T>& a) {
    return TensorT<T>::from(a.shape(), std::vector<T>(a.data()));
}

}  // namespace nvp
