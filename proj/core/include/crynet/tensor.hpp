#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "crynet/errors.hpp"

namespace crynet {

using Shape = std::vector<int>;

long long numel_of(const Shape& shape);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
    std::int64_t id = 0;

    TensorNode(Shape s, std::vector<double> d);
};

}  // namespace detail

// Dense row-major tensor of doubles. Value-semantic handle to a shared
// node; ops never mutate their inputs, so sharing is safe. Scalars use
// shape {1}.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value) { return from({1}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    long long numel() const { return static_cast<long long>(node_->data.size()); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double value() const;  // scalar access, throws ShapeMismatch otherwise
    double operator[](long long i) const { return node_->data[static_cast<size_t>(i)]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient, zero-filled if backward never reached this tensor.
    std::vector<double> grad() const;
    std::vector<double>& grad_ref();  // allocates zeros on demand
    void zero_grad() { node_->grad.clear(); }

    std::int64_t id() const { return node_->id; }

    Tensor clone() const;  // deep copy, fresh node

    detail::TensorNode* node() const { return node_.get(); }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// One recorded operation: the ids are kept for graph inspection, the
// closure pulls the output gradient and accumulates into the inputs.
struct TapeOp {
    std::vector<std::int64_t> input_ids;
    std::int64_t output_id = 0;
    std::function<void()> backward;
};

// Ordered record of a forward computation. Ops append themselves while a
// TapeScope is active; backward() replays in reverse exactly once.
class GraphTape {
public:
    const std::vector<TapeOp>& ops() const { return ops_; }
    bool consumed() const { return consumed_; }
    void record(TapeOp op) { ops_.push_back(std::move(op)); }

private:
    friend void backward(GraphTape&, const Tensor&);
    std::vector<TapeOp> ops_;
    bool consumed_ = false;
};

// RAII activation of a tape for the current thread. Ops run without any
// active tape are pure forward evaluations (inference / finite differences).
class TapeScope {
public:
    TapeScope();
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    GraphTape& tape() { return tape_; }

private:
    GraphTape tape_;
    GraphTape* previous_;
};

GraphTape* active_tape();

// Reverse-topological gradient accumulation. loss must be scalar; a tape
// can only be consumed once.
void backward(GraphTape& tape, const Tensor& loss);

// Central-difference gradient check for a scalar-valued function of one
// tensor. Returns max_i |analytic_i - central_i| / (|central_i| + 1e-8).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               Tensor x, double h = 1e-5);

namespace detail {
// Accumulate into a node's grad, allocating zeros on first touch.
inline std::vector<double>& grad_buffer(TensorNode* n) {
    if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
    return n->grad;
}
// Record an op if a tape is active and any input is grad-tracked; marks the
// output as tracked so gradients flow through compositions.
void maybe_record(std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> backward_fn);
}  // namespace detail

}  // namespace crynet
