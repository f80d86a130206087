#include "hlab/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hlab {

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;

    std::span<double> grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};
}  // namespace detail

using detail::Node;

namespace {
thread_local bool g_grad_enabled = true;

Node& checked(const std::shared_ptr<Node>& n) {
    if (!n) throw ContractError("use of an undefined tensor");
    return *n;
}

std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}
}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    if (numel(shape) != data.size())
        throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t i) const {
    const auto& s = shape();
    if (i >= s.size()) throw ShapeError("dim index out of range for " + shape_str(s));
    return s[i];
}

std::size_t Tensor::size() const { return checked(node_).value.size(); }

std::span<const double> Tensor::data() const { return checked(node_).value; }

std::span<double> Tensor::mutable_data() { return checked(node_).value; }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) { checked(node_).requires_grad = on; }

bool Tensor::has_grad() const { return checked(node_).grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return checked(node_).grad_buffer(); }

void Tensor::zero_grad() {
    auto& n = checked(node_);
    n.grad.clear();
}

const char* Tensor::op_name() const { return checked(node_).op; }

Tensor Tensor::detach() const { return from(shape(), std::vector<double>(data().begin(), data().end())); }

Tensor make_op(const char* name, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = name;
    if (numel(node->shape) != node->value.size())
        throw ShapeError(std::string(name) + ": result shape " + shape_str(node->shape) + " mismatches data");
    if (g_grad_enabled) {
        bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->backward = std::move(backward);
            node->inputs.reserve(inputs.size());
            for (auto& t : inputs) node->inputs.push_back(t.node_);
        }
    }
    return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
    Node& root = checked(loss.node());
    if (root.value.size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
    if (!root.requires_grad) return;
    auto order = topo_order(&root);
    root.grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward || n->grad.empty()) continue;
        std::vector<std::span<double>> slots;
        slots.reserve(n->inputs.size());
        for (auto& in : n->inputs) slots.push_back(in->requires_grad ? in->grad_buffer() : std::span<double>{});
        n->backward(n->grad, GradSink(std::move(slots)));
        // interior gradients are not needed once propagated
        if (!n->inputs.empty()) std::vector<double>().swap(n->grad);
    }
}

std::string first_nonfinite_op(const Tensor& root) {
    for (Node* n : topo_order(&checked(root.node()))) {
        for (double v : n->value)
            if (!std::isfinite(v)) return n->op;
    }
    return {};
}

}  // namespace hlab
