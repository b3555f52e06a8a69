#pragma once

#include <functional>
#include <string>

#include "nvp/tensor.hpp"

namespace nvp {

struct GradCheckResult {
    double max_rel_err = 0.0;
    bool pass = false;
    std::string worst;  // "input#k[i]" of the worst element
};

// Compares reverse-mode gradients against central finite differences in
// double precision. `fn` must rebuild the loss from the given leaf tensors on
// every call (their data is perturbed in place). Error metric per element is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename F>
GradCheckResult grad_check(F&& fn, std::vector<TensorT<double>> inputs, double step = 1e-5,
                           double tolerance = 1e-4) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    TensorT<double> loss = fn();
    if (loss.numel() != 1) throw ShapeError("grad_check: fn must return a scalar");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        if (in.grad().empty())
            analytic.emplace_back(in.data().size(), 0.0);
        else
            analytic.push_back(in.grad());
    }

    GradCheckResult result;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& data = inputs[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + step;
            const double up = fn().item();
            data[i] = saved - step;
            const double down = fn().item();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[k][i];
            const double err =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst = "input#" + std::to_string(k) + "[" + std::to_string(i) + "]";
            }
        }
    }
    result.pass = result.max_rel_err < tolerance;
    return result;
}

}  // namespace nvp
