#pragma once

// Dense NCHW tensors and a small reverse-mode differentiation tape.
//
// Every tensor is four-dimensional (batch, channel, height, width); 1D
// signals use height 1 and scalars are 1x1x1x1. A Var wraps a graph node
// holding the forward value, a lazily allocated gradient and the closure
// that pushes the node's gradient into its inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace grl::nn {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct Shape {
    int n = 1, c = 1, h = 1, w = 1;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    friend bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        std::ostringstream os;
        os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
        return os.str();
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape_(s), values_(s.size(), fill) {
        if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) throw ShapeError("tensor dimensions must be positive");
    }
    Tensor(Shape s, std::vector<double> values) : shape_(s), values_(std::move(values)) {
        if (values_.size() != s.size()) throw ShapeError("tensor value count does not match shape " + s.str());
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> data() noexcept { return values_; }
    std::span<const double> data() const noexcept { return values_; }
    double* ptr() noexcept { return values_.data(); }
    const double* ptr() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at(int n, int c, int h, int w) { return values_[index(n, c, h, w)]; }
    double at(int n, int c, int h, int w) const { return values_[index(n, c, h, w)]; }

    std::size_t index(int n, int c, int h, int w) const noexcept {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    bool all_finite() const noexcept {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<double> values_;
};

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor(value.shape());
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Var parameter(Tensor value) { return Var(std::move(value), true); }
    static Var constant(Tensor value) { return Var(std::move(value), false); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    // Var is a handle: mutation goes through the shared node.
    Tensor& mutable_value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }

    /// Gradient accumulated by the last backward pass (zeros if none reached this node).
    Tensor& grad() const { return node_->ensure_grad(); }
    void zero_grad() const {
        if (!node_->grad.empty()) node_->grad.fill(0.0);
    }

    /// Scalar value; throws for non-scalar tensors.
    double item() const {
        if (value().size() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
        return value()[0];
    }

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

/// Creates the output node of an op. The backward closure is attached only
/// when some input takes part in differentiation.
inline Var make_result(Tensor value, std::vector<Var> inputs, const char* op, std::function<void(Node&)> backward) {
    check_finite(value, op);
    Var out(std::move(value), false);
    auto& node = *out.node();
    node.op = op;
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (any) {
        node.requires_grad = true;
        node.inputs.reserve(inputs.size());
        for (auto& v : inputs) node.inputs.push_back(v.node());
        node.backward = std::move(backward);
    }
    return out;
}

inline void accumulate(Node& target, const Tensor& delta) {
    if (!target.requires_grad) return;
    Tensor& g = target.ensure_grad();
    auto d = delta.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += d[i];
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar root. Gradients of leaf
/// parameters accumulate across calls until zeroed.
inline void backward(const Var& root) {
    if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root");
    if (!root.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node* child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    // Interior gradients are per-pass scratch.
    for (Node* n : order)
        if (n->backward) n->grad = Tensor();
    root.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

}  // namespace grl::nn
