#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hlab/numcore/errors.hpp"

namespace hlab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// Gradient buffers of an op's inputs, handed to its backward function.
// Slots for inputs that do not require a gradient are empty spans.
class GradSink {
   public:
    explicit GradSink(std::vector<std::span<double>> slots) : slots_(std::move(slots)) {}
    std::span<double> operator[](std::size_t i) const { return slots_[i]; }
    bool wants(std::size_t i) const { return !slots_[i].empty(); }

   private:
    std::vector<std::span<double>> slots_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, const GradSink& sink)>;

// Dense row-major real array with an optional gradient. Copies share the
// underlying storage; operations build a fresh graph on every forward pass.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t i) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    std::span<const double> data() const;
    // Direct write access, reserved for optimizer updates and finite-difference probes.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    const char* op_name() const;
    // A new leaf holding a copy of the values, detached from any graph.
    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }

   private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    friend Tensor make_op(const char*, Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);

    std::shared_ptr<detail::Node> node_;
};

// Builds the result of a differentiable op. The graph edge is only recorded
// when gradient mode is on and at least one input requires a gradient.
Tensor make_op(const char* name, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               BackwardFn backward);

bool grad_enabled();

class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate.
void backward(const Tensor& loss);

// Name of the first op (in evaluation order) whose output holds a non-finite
// value, or an empty string when the whole graph is finite.
std::string first_nonfinite_op(const Tensor& root);

}  // namespace hlab
