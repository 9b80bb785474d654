#include "ppc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ppc {

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

// Pass ids are unique across threads; each thread reads grads of its own
// latest pass, so graphs on different threads do not interfere.
std::atomic<std::uint64_t> g_backward_pass{0};
thread_local std::uint64_t t_backward_pass = 0;
thread_local bool t_grad_mode = true;

}  // namespace

namespace detail {

std::uint64_t current_backward_pass() { return t_backward_pass; }
std::uint64_t begin_backward_pass() { return t_backward_pass = ++g_backward_pass; }

template <typename T>
std::vector<T>& Node<T>::input_grad(std::size_t i)
{
    Node& in = *inputs[i];
    const auto pass = current_backward_pass();
    if (in.grad_pass != pass || in.grad.size() != in.data.size()) {
        in.grad.assign(in.data.size(), T(0));
        in.grad_pass = pass;
    }
    return in.grad;
}

template struct Node<float>;
template struct Node<double>;

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }

bool grad_mode_enabled() { return t_grad_mode; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node>())
{
    for (auto d : shape) {
        require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
    }
    require(shape_numel(shape) == data.size(),
            "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad)
{
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad)
{
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad)
{
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> data, const std::vector<Tensor>& inputs,
                             Adjoint adjoint)
{
#ifndef NDEBUG
    for (const auto& v : data) {
        if (!std::isfinite(v)) {
            bool finite_inputs = true;
            for (const auto& in : inputs) {
                for (const auto& x : in.data()) {
                    finite_inputs = finite_inputs && std::isfinite(x);
                }
            }
            require(!finite_inputs, "non-finite value produced from finite inputs");
            break;
        }
    }
#endif
    Tensor out(std::move(shape), std::move(data), false);
    if (!t_grad_mode) {
        return out;
    }
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (!any) {
        return out;
    }
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        out.node_->inputs.push_back(in.node_);
    }
    out.node_->adjoint = std::move(adjoint);
    return out;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data()
{
    require(!node_->adjoint, "cannot write into the output of a recorded op");
    return node_->data;
}

template <typename T>
T Tensor<T>::item() const
{
    require(numel() == 1, "item() on a tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const
{
    require(index.size() == rank(), "index rank mismatch");
    std::size_t flat = 0;
    std::size_t k = 0;
    for (auto i : index) {
        require(i < node_->shape[k], "index out of range");
        flat = flat * node_->shape[k] + i;
        ++k;
    }
    return node_->data[flat];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on)
{
    require(is_leaf(), "requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
}

template <typename T>
bool Tensor<T>::has_grad() const
{
    return node_->grad_pass == detail::current_backward_pass() && !node_->grad.empty();
}

template <typename T>
std::vector<T> Tensor<T>::grad() const
{
    if (has_grad()) {
        return node_->grad;
    }
    return std::vector<T>(numel(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const
{
    return Tensor(shape(), node_->data, false);
}

template <typename T>
void backward(const Tensor<T>& loss)
{
    using Node = detail::Node<T>;
    require(loss.defined(), "backward on an undefined tensor");
    require(loss.numel() == 1, "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (loss.node()->consumed) {
        throw StaleGraphError("backward called twice on the same graph; run a new forward pass");
    }

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    Node* root = loss.node().get();
    if (root->requires_grad) {
        stack.emplace_back(root, 0);
        seen.insert(root);
    }
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) {
                if (child->consumed) {
                    throw StaleGraphError("graph segment already consumed by an earlier backward pass");
                }
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    const auto pass = detail::begin_backward_pass();
    for (Node* n : order) {
        n->grad.assign(n->data.size(), T(0));
        n->grad_pass = pass;
    }
    root->grad.assign(1, T(1));
    root->grad_pass = pass;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->adjoint) {
            n->adjoint(*n);
        }
    }
    for (Node* n : order) {
        if (n->adjoint) {
            n->consumed = true;
            n->adjoint = nullptr;
            n->inputs.clear();
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace ppc
