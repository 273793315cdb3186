#include "dex/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "dex/errors.hpp"

namespace dex {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }
    for (double v : data) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(make_leaf(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
    if (!node_->is_leaf) throw ContractError("only leaf tensors may be modified in place");
    return node_->data;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= node_->shape[axis]) throw DimensionError("index out of range");
        flat = flat * node_->shape[axis] + i;
        ++axis;
    }
    return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

Tensor Tensor::clone_leaf(bool requires_grad) const { return Tensor(node_->shape, node_->data, requires_grad); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn, const char* op_name) {
    for (double v : data) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op_name);
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->is_leaf = false;
    bool track = false;
    if (t_grad_enabled) {
        for (const auto& in : inputs) track = track || in.requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor::from_node(std::move(node));
}

}  // namespace detail

void backward(const Tensor& loss, bool retain_graph) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward() needs a scalar loss");
    }
    auto root = loss.node();
    if (!root->requires_grad) return;
    if (root->is_leaf) {
        root->grad_buffer()[0] += 1.0;
        return;
    }

    // Post-order DFS, iterative to survive deep graphs (GRU unrolls, samplers).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !parent->is_leaf && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (!node->is_leaf) node->grad.assign(node->data.size(), 0.0);
    }
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
    for (auto* node : order) {
        if (node->is_leaf) continue;
        node->grad.clear();
        node->grad.shrink_to_fit();
        if (!retain_graph) {
            node->backward_fn = nullptr;
            node->parents.clear();
        }
    }
}

}  // namespace dex
