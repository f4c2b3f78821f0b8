#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crynet/ops.hpp"
#include "crynet/rng.hpp"

namespace crynet {

// Named view over a model's trainable tensors and batch-norm running
// statistics. Names are dot-separated paths; ablation audits test whole
// path segments, so "block1.rse.se.fc1.w" belongs to namespace "rse" while
// "block1.se.fc1.w" does not.
struct ParamRegistry {
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, std::vector<double>*>> stats;

    void add(std::string name, const Tensor& t) { params.emplace_back(std::move(name), t); }
    void add_stats(std::string name, std::vector<double>* v) {
        stats.emplace_back(std::move(name), v);
    }
    long long total_scalars() const;
    bool has_namespace(const std::string& segment) const;
};

Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng);

struct DenseLayer {
    Tensor w;  // {out,in}
    Tensor b;  // {out}, undefined when bias-free

    DenseLayer() = default;
    DenseLayer(int in, int out, Rng& rng, bool bias = true);
    Tensor forward(const Tensor& x) const { return dense(x, w, b); }
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

struct Conv1dLayer {
    Tensor w;  // {cout,cin,k}
    Tensor b;
    int dilation = 1;
    Padding padding = Padding::Same;

    Conv1dLayer() = default;
    Conv1dLayer(int cin, int cout, int k, Rng& rng, int dilation = 1,
                Padding padding = Padding::Same, bool bias = true);
    Tensor forward(const Tensor& x) const { return conv1d(x, w, b, dilation, padding); }
    int cin() const { return w.dim(1); }
    int cout() const { return w.dim(0); }
    int kernel() const { return w.dim(2); }
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

// Squeeze-and-excitation: time mean -> bottleneck -> sigmoid gate -> scale.
struct SEBlock {
    DenseLayer fc1;  // C -> C/r
    DenseLayer fc2;  // C/r -> C

    SEBlock() = default;
    SEBlock(int channels, int reduction, Rng& rng);
    Tensor gate(const Tensor& x) const;     // values strictly in (0,1)
    Tensor forward(const Tensor& x) const;  // gate ⊙ x
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

// x + SE(x)
Tensor rse_block(const Tensor& x, const SEBlock& se);

// Scalar attention over time: channel mean -> conv(k) -> sigmoid.
struct TemporalAttention {
    Conv1dLayer conv;  // 1 -> 1, same padding

    TemporalAttention() = default;
    explicit TemporalAttention(Rng& rng, int k = 7);
    Tensor forward(const Tensor& x) const;  // {T} or {B,T}
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

// Rank-1 temporal/channel mask applied to x_rse, then a kernel-1 conv and
// the residual input.
Tensor tcia_fuse(const Tensor& x, const Tensor& x_rse, const Tensor& a_t,
                 const Tensor& a_c, const Conv1dLayer& fuse);

// Temporal-channel interactive attention: the channel gate comes from the
// RSE path's SE block, the time gate from TemporalAttention.
struct RSEAttention {
    SEBlock se;
    TemporalAttention temporal;
    Conv1dLayer fuse;  // C -> C, k=1, zero-initialized bias

    RSEAttention() = default;
    RSEAttention(int channels, int reduction, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

// Multi-scale channel attention. Four branches of C channels each (shared
// entry conv feeding dilated k=3/5/7 convs, plus a conv+maxpool branch),
// concatenated to 4C and scaled by a 4C-wide sigmoid gate.
struct MCALayer {
    Conv1dLayer entry;      // C -> C, k=1
    Conv1dLayer branch3;
    Conv1dLayer branch5;
    Conv1dLayer branch7;
    Conv1dLayer pool_conv;  // C -> C, k=1
    int pool_k = 3;
    DenseLayer fc1;         // 4C -> 4C/r
    DenseLayer fc2;         // 4C/r -> 4C
    bool gate_bypass = false;  // test hook: skip gating, output F_cat as-is

    MCALayer() = default;
    MCALayer(int channels, int reduction, std::array<int, 3> dilations, Rng& rng);
    Tensor forward(const Tensor& x) const;  // C×T -> 4C×T
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

// Hierarchical residual group convs: first group passes through, later
// groups add the previous output before their dilated k=3 conv.
struct Res2Dilated {
    std::vector<Conv1dLayer> convs;
    int scale = 1;

    Res2Dilated() = default;
    Res2Dilated(int channels, int scale, int dilation, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

// Trunk block: optional RSE attention, 1x1 conv, Res2 dilated conv, 1x1
// conv, SE gate, residual add. With use_rse=false this is the standard
// SE-Res2 block of the baseline.
struct Res2Block {
    std::optional<RSEAttention> rse;
    Conv1dLayer conv1;
    BatchNorm1d bn1;
    Res2Dilated res2;
    BatchNorm1d bn_res;
    Conv1dLayer conv2;
    BatchNorm1d bn2;
    SEBlock se;

    Res2Block(int channels, int reduction, int scale, int dilation, bool use_rse,
              Rng& rng);
    Tensor forward(const Tensor& x, Mode mode);
    void collect(const std::string& prefix, ParamRegistry& reg);
};

// Dual-softmax attention over {N,C}: per head A1 - lambda*A2 applied to V,
// heads concatenated, and the result multiplied elementwise into Z.
struct DiffAttention {
    Tensor wq1, wk1, wq2, wk2, wv;  // {C,C}
    Tensor lambda_;                 // learnable scalar
    int heads = 1;

    DiffAttention() = default;
    DiffAttention(int channels, int heads, Rng& rng);
    Tensor forward(const Tensor& z) const;
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

// Attention-weighted mean and standard deviation over time; scalar weights
// from a tanh bottleneck, softmax-normalized across frames.
struct AttentiveStatsPooling {
    Conv1dLayer conv1;  // C -> bottleneck, k=1
    Conv1dLayer conv2;  // bottleneck -> 1, k=1

    AttentiveStatsPooling() = default;
    AttentiveStatsPooling(int channels, int bottleneck, Rng& rng);
    Tensor forward(const Tensor& x) const;  // {2C} or {B,2C}
    void collect(const std::string& prefix, ParamRegistry& reg) const;
};

}  // namespace crynet
