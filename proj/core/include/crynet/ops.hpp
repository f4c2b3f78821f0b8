#pragma once

#include <vector>

#include "crynet/tensor.hpp"

namespace crynet {

enum class Padding { Valid, Same };
enum class Mode { Train, Eval };

// Feature maps are {C,T} or batched {B,C,T}; vectors are {N} or {B,N}.
// Every op is differentiable w.r.t. all tensor arguments and records onto
// the active tape.

// out[co,t] = bias[co] + sum_{ci,j} w[co,ci,j] * x[ci, t + j*dilation], with
// zero "same" padding split left/floor right/ceil. Pass an undefined Tensor
// to skip the bias.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
              int dilation = 1, Padding padding = Padding::Valid);

// y = W x + b for x {N} or {B,N}, W {M,N}, b {M} (undefined to skip).
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);

// Numerically stabilized by max-subtraction; slices along axis sum to 1.
Tensor softmax(const Tensor& x, int axis);

// {C,T} -> {C} or {B,C,T} -> {B,C}
Tensor global_avg_pool_time(const Tensor& x);

// Sliding max per channel with -inf "same" padding; stride 1 preserves T.
// Gradient routes to the earliest argmax in each window.
Tensor max_pool_time(const Tensor& x, int k, int stride = 1);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor narrow(const Tensor& x, int axis, int start, int len);
std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& sizes);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double c);
// x scaled by a learnable scalar tensor s (shape {1}).
Tensor scale_by(const Tensor& x, const Tensor& s);

// Channel gate: x {C,T} * g {C}, or x {B,C,T} * g {B,C}.
Tensor mul_channels(const Tensor& x, const Tensor& g);
// Time gate: x {C,T} * w {T}, or x {B,C,T} * w {B,T}.
Tensor mul_time(const Tensor& x, const Tensor& w);
// {C,T} -> {1,T} or {B,C,T} -> {B,1,T}
Tensor mean_channels(const Tensor& x);
// {C,T} -> {C} or {B,C,T} -> {B,C}
Tensor sum_time(const Tensor& x);

// sqrt(max(x, floor)); gradient is zero where the floor clips.
Tensor sqrt_floor(const Tensor& x, double floor_value);
Tensor mean_all(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);     // {N,M}x{M,P}
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T, {N,M}x{P,M}

// Mean over rows of -log softmax(logits)[label]; fused log-sum-exp form.
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);

// Per-channel standardization over time (and batch when present), then the
// gamma/beta affine. Train mode uses batch statistics and updates running
// stats with momentum; eval mode uses the running stats.
struct BatchNorm1d {
    Tensor gamma;
    Tensor beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    explicit BatchNorm1d(int channels);
    Tensor forward(const Tensor& x, Mode mode);
    int channels() const { return gamma.dim(0); }
};

}  // namespace crynet
