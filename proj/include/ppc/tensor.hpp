#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when a caller breaks an operation's preconditions (bad shapes,
/// out-of-range arguments, unnormalized inputs).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised when backward() is called on a graph that has already been consumed.
class StaleGraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) {
        throw ContractViolation(what);
    }
}

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    std::uint64_t grad_pass = 0;
    bool requires_grad = false;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into inputs' grads.
    std::function<void(Node&)> adjoint;

    // Gradient buffer of an input, allocated on first touch in the current pass.
    std::vector<T>& input_grad(std::size_t i);
};

std::uint64_t current_backward_pass();
std::uint64_t begin_backward_pass();

}  // namespace detail

/// Disables graph recording for its lifetime (inference, validation passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

/// Dense row-major tensor. Copies share the same underlying node, so a
/// parameter handed to an op and the handle kept by its owner refer to the
/// same storage and gradient.
template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;
    using Adjoint = std::function<void(Node&)>;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    // Result of a differentiable op. When recording is off or no input needs a
    // gradient, the node is a constant and the adjoint is dropped.
    static Tensor from_op(Shape shape, std::vector<T> data, const std::vector<Tensor>& inputs,
                          Adjoint adjoint);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    // Only leaves (parameters, inputs) may be written in place.
    std::span<T> mutable_data();
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);
    bool is_leaf() const { return !node_->adjoint && node_->inputs.empty(); }

    /// Gradient from the most recent backward pass, or zeros if this tensor
    /// was not reached by it.
    std::vector<T> grad() const;
    bool has_grad() const;

    /// A constant copy cut off from the graph.
    Tensor detach() const;

    const Node* id() const { return node_.get(); }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a scalar. Every requires_grad tensor reachable
/// from `loss` receives d(loss)/d(tensor); the graph is consumed afterwards.
template <typename T>
void backward(const Tensor<T>& loss);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace ppc
