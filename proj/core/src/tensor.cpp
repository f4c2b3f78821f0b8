#include "crynet/tensor.hpp"

#include <atomic>
#include <cmath>
#include <string>

namespace crynet {

long long numel_of(const Shape& shape) {
    if (shape.empty()) throw ShapeMismatch("tensor shape must have at least one dimension");
    long long n = 1;
    for (int d : shape) {
        if (d < 1) throw ShapeMismatch("shape dimensions must be >= 1");
        n *= d;
    }
    return n;
}

namespace detail {

namespace {
std::atomic<std::int64_t> g_next_node_id{1};
thread_local GraphTape* g_active_tape = nullptr;
}  // namespace

TensorNode::TensorNode(Shape s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)), id(g_next_node_id.fetch_add(1)) {}

void maybe_record(std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> backward_fn) {
    GraphTape* tape = g_active_tape;
    if (!tape) return;
    bool tracked = false;
    for (const Tensor& t : inputs) tracked = tracked || t.requires_grad();
    if (!tracked) return;
    output.set_requires_grad(true);
    TapeOp op;
    op.input_ids.reserve(inputs.size());
    for (const Tensor& t : inputs) op.input_ids.push_back(t.id());
    op.output_id = output.id();
    op.backward = std::move(backward_fn);
    tape->record(std::move(op));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape) {
    long long n = numel_of(shape);
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>(std::move(shape),
                                                   std::vector<double>(static_cast<size_t>(n), 0.0));
    return t;
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.data()) v = value;
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    long long n = numel_of(shape);
    if (n != static_cast<long long>(values.size()))
        throw ShapeMismatch("data length " + std::to_string(values.size()) +
                            " does not match shape product " + std::to_string(n));
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>(std::move(shape), std::move(values));
    return t;
}

double Tensor::value() const {
    if (numel() != 1) throw ShapeMismatch("value() requires a scalar tensor");
    return node_->data[0];
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
    return node_->grad;
}

std::vector<double>& Tensor::grad_ref() { return detail::grad_buffer(node_.get()); }

Tensor Tensor::clone() const {
    Tensor t = Tensor::from(shape(), data());
    t.set_requires_grad(requires_grad());
    return t;
}

TapeScope::TapeScope() : previous_(detail::g_active_tape) { detail::g_active_tape = &tape_; }

TapeScope::~TapeScope() { detail::g_active_tape = previous_; }

GraphTape* active_tape() { return detail::g_active_tape; }

void backward(GraphTape& tape, const Tensor& loss) {
    if (loss.numel() != 1) throw NonScalarLoss("backward requires a scalar loss");
    if (tape.consumed_) throw DoubleBackward("tape already replayed; build a fresh graph");
    tape.consumed_ = true;
    loss.node()->grad.assign(1, 1.0);
    for (auto it = tape.ops_.rbegin(); it != tape.ops_.rend(); ++it) {
        if (it->backward) it->backward();
    }
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               Tensor x, double h) {
    std::vector<double> analytic;
    {
        TapeScope scope;
        x.zero_grad();
        x.set_requires_grad(true);
        Tensor y = f(x);
        backward(scope.tape(), y);
        analytic = x.grad();
    }
    double worst = 0.0;
    std::vector<double>& xs = x.data();
    for (size_t i = 0; i < xs.size(); ++i) {
        const double saved = xs[i];
        xs[i] = saved + h;
        const double fp = f(x).value();
        xs[i] = saved - h;
        const double fm = f(x).value();
        xs[i] = saved;
        const double central = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - central) / (std::abs(central) + 1e-8);
        if (err > worst) worst = err;
    }
    return worst;
}

}  // namespace crynet
