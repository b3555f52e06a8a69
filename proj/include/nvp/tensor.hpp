#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_set>
#include <utility>

#include "nvp/common.hpp"

namespace nvp {

// One node of the recorded operation graph. Leaf nodes (parameters, inputs)
// have no backward_fn; op nodes hold the closure that pushes this node's
// adjoint into its parents' grad buffers.
template <typename T>
struct NodeT {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized lazily; same length as data once touched
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    // Whether each parent participated in differentiation when the op was
    // recorded; closures consult this snapshot, not the parent's current
    // requires_grad (which may change between recording and backward()).
    std::vector<std::uint8_t> parent_live;
    std::function<void(NodeT&)> backward_fn;
    const char* op = "leaf";
    std::size_t backward_runs = 0;  // graph contract: exactly 1 per backward()

    bool is_leaf() const { return !backward_fn; }

    bool live(std::size_t parent_index) const { return parent_live[parent_index] != 0; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

// RAII guard: ops executed in scope run forward-only (no graph recording).
struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Value-semantics handle over a graph node. Dense, row-major, owning storage.
template <typename T>
class TensorT {
public:
    using Node = NodeT<T>;
    using scalar_type = T;

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static TensorT filled(Shape shape, T value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        const auto count = ::nvp::numel(shape);
        if (count < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n->shape = std::move(shape);
        n->data.assign(static_cast<std::size_t>(count), value);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (::nvp::numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT scalar(T value) { return from({1}, {value}); }

    static TensorT uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        const auto count = ::nvp::numel(shape);
        std::vector<T> data(static_cast<std::size_t>(count));
        for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
        return from(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node()->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node()->data.size()); }
    std::int64_t extent(std::size_t axis) const { return node()->shape.at(axis); }
    std::size_t rank() const { return node()->shape.size(); }

    const std::vector<T>& data() const { return node()->data; }
    std::vector<T>& mutable_data() { return node()->data; }
    const std::vector<T>& grad() const { return node()->grad; }

    bool requires_grad() const { return node()->requires_grad; }
    void set_requires_grad(bool flag) { node()->requires_grad = flag; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() requires a scalar tensor, got " + shape_str(shape()));
        return node()->data[0];
    }

    T at(std::initializer_list<std::int64_t> idx) const {
        return node()->data[flat_index(idx)];
    }

    void set_at(std::initializer_list<std::int64_t> idx, T v) {
        node()->data[flat_index(idx)] = v;
    }

    T grad_at(std::initializer_list<std::int64_t> idx) const {
        const auto& g = node()->grad;
        if (g.empty()) throw Error("grad not populated");
        return g[flat_index(idx)];
    }

    void zero_grad() {
        auto* n = node();
        n->grad.assign(n->data.size(), T(0));
    }

    std::size_t backward_runs() const { return node()->backward_runs; }
    const char* op_name() const { return node()->op; }

    std::shared_ptr<Node> node_ptr() const { return node_; }

    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

private:
    Node* node() const {
        if (!node_) throw Error("use of undefined tensor");
        return node_.get();
    }

    std::size_t flat_index(std::initializer_list<std::int64_t> idx) const {
        const auto& s = node()->shape;
        if (idx.size() != s.size())
            throw ShapeError("index rank mismatch for shape " + shape_str(s));
        std::int64_t flat = 0;
        std::size_t k = 0;
        for (auto i : idx) {
            if (i < 0 || i >= s[k]) throw ShapeError("index out of bounds");
            flat = flat * s[k] + i;
            ++k;
        }
        return static_cast<std::size_t>(flat);
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

// Builds an op node; records parents/closure only when grads are live.
template <typename T>
TensorT<T> make_op(Shape shape, std::vector<T> data,
                   std::initializer_list<TensorT<T>> inputs,
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

}  // namespace detail

// Reverse-mode accumulation from a scalar loss. Adjoints of interior nodes
// are per-call scratch (reset here); leaf grads accumulate additively across
// calls and are cleared only by explicit zero_grad().
template <typename T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.shape()));

    using Node = NodeT<T>;
    Node* root = loss.node_ptr().get();

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            const std::size_t idx = next++;
            Node* p = n->parents[idx].get();
            if (n->parent_live[idx] && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        n->ensure_grad();
        if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), T(0));
    }
    root->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->backward_fn(*n);
            ++n->backward_runs;
        }
    }
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
    for (T v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace nvp
