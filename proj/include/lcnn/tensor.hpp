#ifndef LCNN_TENSOR_HPP
#define LCNN_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lcnn/errors.hpp"

namespace lcnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

class Tensor;

namespace detail {

// One vertex of the autodiff tape. Parents are held by shared_ptr, so a loss
// tensor keeps its whole forward graph alive until it is dropped.
struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // empty until something accumulates into it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

} // namespace detail

/// Dense row-major tensor of doubles with an optional gradient.
///
/// A Tensor is a cheap handle; copies share the same storage and tape node.
/// Values are fixed once an op has produced them. Leaves (tensors created
/// directly rather than by an op) may be updated in place by an optimizer.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor.
    explicit Tensor(Shape shape) : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0)) {}

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto extent : shape) {
            if (extent == 0) throw DimensionError("tensor extents must be >= 1, got " + to_string(shape));
        }
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor(Shape{1}, {value}, requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }

    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t dim(std::size_t axis) const { return node().shape.at(axis); }
    std::size_t numel() const { return node().values.size(); }

    std::span<const double> values() const { return node().values; }
    double operator[](std::size_t i) const { return node().values[i]; }

    double item() const {
        if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
        return node().values[0];
    }

    bool requires_grad() const { return node().requires_grad; }
    bool has_grad() const { return !node().grad.empty(); }
    std::span<const double> grad() const { return node().grad; }
    const char* op_name() const { return node().op; }
    bool is_leaf() const { return !node().backward; }

    void zero_grad() {
        auto& g = node_->grad;
        std::fill(g.begin(), g.end(), 0.0);
    }

    void clear_grad() { node_->grad.clear(); }

    std::span<double> mutable_values() {
        if (!is_leaf()) throw UsageError("only leaf tensors may be modified in place");
        return node_->values;
    }

    std::span<double> mutable_grad() { return node_->grad_buffer(); }

    /// Copy of the values with no tape history.
    Tensor detach(bool requires_grad = false) const { return Tensor(shape(), node().values, requires_grad); }

    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    const detail::Node& node() const {
        if (!node_) throw UsageError("use of an undefined tensor");
        return *node_;
    }

    std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Creates the result node of an op. Inputs and the backward rule are only
/// recorded when at least one input requires a gradient.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    auto& node = *out.node_ptr();
    node.op = op;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        node.requires_grad = true;
        for (const auto& in : inputs) node.parents.push_back(in.node_ptr());
        node.backward = std::move(backward);
    }
    return out;
}

inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          const std::vector<Tensor>& inputs, std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    auto& node = *out.node_ptr();
    node.op = op;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        node.requires_grad = true;
        for (const auto& in : inputs) node.parents.push_back(in.node_ptr());
        node.backward = std::move(backward);
    }
    return out;
}

/// Gradient buffer of parent i, or nullptr when it does not need one.
inline std::vector<double>* parent_grad(Node& self, std::size_t i) {
    auto& p = *self.parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

} // namespace detail

/// Reverse pass from a scalar loss.
///
/// Gradients of leaves accumulate across calls; intermediate gradients are
/// rebuilt on every call so repeated passes add exactly one more copy.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) throw UsageError("backward() on a loss that depends on no trainable tensor");

    using detail::Node;
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node_ptr().get(), 0}};
    visited.insert(loss.node_ptr().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) {
        if (node->backward) node->grad.assign(node->values.size(), 0.0);
    }
    loss.node_ptr()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

} // namespace lcnn

#endif // LCNN_TENSOR_HPP
