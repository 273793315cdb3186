#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dex {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Dense row-major double tensor with optional reverse-mode gradient.
///
/// Copies are shallow: two Tensor handles may refer to the same node. Values
/// produced by ops are never modified afterwards; only leaves (parameters)
/// are updated in place by optimizers and checkpoint loading.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const;
    bool defined() const { return static_cast<bool>(node_); }

    std::span<const double> data() const;
    /// In-place access for leaves only (optimizer steps, loading, tests).
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    bool has_grad() const;
    /// Gradient buffer; empty span until backward reached this tensor.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Copy of the values with no graph attached.
    Tensor detach() const;
    Tensor clone_leaf(bool requires_grad) const;

    // Internal plumbing used by ops and backward.
    static Tensor from_node(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

/// True while gradient tracking is on for the calling thread.
bool grad_enabled();

/// Disables graph construction on the calling thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Reverse pass from a scalar. Leaf gradients accumulate across calls; the
/// graph behind `loss` is released unless `retain_graph` is set.
void backward(const Tensor& loss, bool retain_graph = false);

namespace detail {

/// Builds an op result. `inputs` become parents only when tracking is on and
/// an input requires grad. Throws NumericError on a non-finite value.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn, const char* op_name);

}  // namespace detail

}  // namespace dex
