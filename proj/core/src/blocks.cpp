#include "crynet/blocks.hpp"

#include <cmath>

namespace crynet {

long long ParamRegistry::total_scalars() const {
    long long n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

bool ParamRegistry::has_namespace(const std::string& segment) const {
    for (const auto& [name, t] : params) {
        size_t pos = 0;
        while (pos <= name.size()) {
            const size_t dot = name.find('.', pos);
            const size_t end = dot == std::string::npos ? name.size() : dot;
            if (name.compare(pos, end - pos, segment) == 0) return true;
            if (dot == std::string::npos) break;
            pos = dot + 1;
        }
    }
    return false;
}

Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

namespace {

Tensor bias_uniform(int n, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t = Tensor::zeros({n});
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

DenseLayer::DenseLayer(int in, int out, Rng& rng, bool bias)
    : w(kaiming_uniform({out, in}, in, rng)) {
    if (bias) b = bias_uniform(out, in, rng);
}

void DenseLayer::collect(const std::string& prefix, ParamRegistry& reg) const {
    reg.add(prefix + ".w", w);
    if (b.defined()) reg.add(prefix + ".b", b);
}

Conv1dLayer::Conv1dLayer(int cin, int cout, int k, Rng& rng, int dilation,
                         Padding padding, bool bias)
    : w(kaiming_uniform({cout, cin, k}, cin * k, rng)),
      dilation(dilation),
      padding(padding) {
    if (bias) b = bias_uniform(cout, cin * k, rng);
}

void Conv1dLayer::collect(const std::string& prefix, ParamRegistry& reg) const {
    reg.add(prefix + ".w", w);
    if (b.defined()) reg.add(prefix + ".b", b);
}

SEBlock::SEBlock(int channels, int reduction, Rng& rng) {
    if (channels % reduction != 0)
        throw ConfigInvalid("SE channels must be divisible by the reduction ratio");
    // gate is a pure two-matrix bottleneck, no biases
    fc1 = DenseLayer(channels, channels / reduction, rng, false);
    fc2 = DenseLayer(channels / reduction, channels, rng, false);
}

Tensor SEBlock::gate(const Tensor& x) const {
    Tensor z = global_avg_pool_time(x);
    return sigmoid(fc2.forward(relu(fc1.forward(z))));
}

Tensor SEBlock::forward(const Tensor& x) const { return mul_channels(x, gate(x)); }

void SEBlock::collect(const std::string& prefix, ParamRegistry& reg) const {
    fc1.collect(prefix + ".fc1", reg);
    fc2.collect(prefix + ".fc2", reg);
}

Tensor rse_block(const Tensor& x, const SEBlock& se) { return add(x, se.forward(x)); }

TemporalAttention::TemporalAttention(Rng& rng, int k)
    : conv(1, 1, k, rng, 1, Padding::Same) {}

Tensor TemporalAttention::forward(const Tensor& x) const {
    Tensor scores = sigmoid(conv.forward(mean_channels(x)));  // {1,T} or {B,1,T}
    if (scores.rank() == 2) return reshape(scores, {scores.dim(1)});
    return reshape(scores, {scores.dim(0), scores.dim(2)});
}

void TemporalAttention::collect(const std::string& prefix, ParamRegistry& reg) const {
    conv.collect(prefix + ".conv", reg);
}

Tensor tcia_fuse(const Tensor& x, const Tensor& x_rse, const Tensor& a_t,
                 const Tensor& a_c, const Conv1dLayer& fuse) {
    if (x.shape() != x_rse.shape()) throw ShapeMismatch("tcia_fuse: x and x_rse differ");
    Tensor masked = mul_time(mul_channels(x_rse, a_c), a_t);
    return add(x, fuse.forward(masked));
}

RSEAttention::RSEAttention(int channels, int reduction, Rng& rng)
    : se(channels, reduction, rng),
      temporal(rng),
      fuse(channels, channels, 1, rng, 1, Padding::Same) {
    // residual-friendly start: the fused correction begins bias-free
    for (double& v : fuse.b.data()) v = 0.0;
}

Tensor RSEAttention::forward(const Tensor& x) const {
    Tensor s = se.gate(x);
    Tensor x_rse = add(x, mul_channels(x, s));
    Tensor a_t = temporal.forward(x);
    return tcia_fuse(x, x_rse, a_t, s, fuse);
}

void RSEAttention::collect(const std::string& prefix, ParamRegistry& reg) const {
    se.collect(prefix + ".se", reg);
    temporal.collect(prefix + ".temporal", reg);
    fuse.collect(prefix + ".fuse", reg);
}

MCALayer::MCALayer(int channels, int reduction, std::array<int, 3> dilations, Rng& rng)
    : entry(channels, channels, 1, rng),
      branch3(channels, channels, 3, rng, dilations[0]),
      branch5(channels, channels, 5, rng, dilations[1]),
      branch7(channels, channels, 7, rng, dilations[2]),
      pool_conv(channels, channels, 1, rng) {
    const int g = 4 * channels;
    if (g % reduction != 0)
        throw ConfigInvalid("MCA gate width must be divisible by the reduction ratio");
    fc1 = DenseLayer(g, g / reduction, rng, false);
    fc2 = DenseLayer(g / reduction, g, rng, false);
}

Tensor MCALayer::forward(const Tensor& x) const {
    Tensor e = entry.forward(x);
    Tensor f3 = branch3.forward(e);
    Tensor f5 = branch5.forward(e);
    Tensor f7 = branch7.forward(e);
    Tensor m = max_pool_time(pool_conv.forward(x), pool_k, 1);
    Tensor cat = concat_channels({f3, f5, f7, m});
    if (gate_bypass) return cat;
    Tensor z = global_avg_pool_time(cat);
    Tensor s = sigmoid(fc2.forward(relu(fc1.forward(z))));
    return mul_channels(cat, s);
}

void MCALayer::collect(const std::string& prefix, ParamRegistry& reg) const {
    entry.collect(prefix + ".entry", reg);
    branch3.collect(prefix + ".branch3", reg);
    branch5.collect(prefix + ".branch5", reg);
    branch7.collect(prefix + ".branch7", reg);
    pool_conv.collect(prefix + ".pool_conv", reg);
    fc1.collect(prefix + ".fc1", reg);
    fc2.collect(prefix + ".fc2", reg);
}

Res2Dilated::Res2Dilated(int channels, int scale, int dilation, Rng& rng) : scale(scale) {
    if (scale < 2) throw ConfigInvalid("res2 scale must be >= 2");
    if (channels % scale != 0)
        throw ScaleIndivisible("channels " + std::to_string(channels) +
                               " not divisible by res2 scale " + std::to_string(scale));
    const int g = channels / scale;
    for (int i = 0; i < scale - 1; ++i)
        convs.emplace_back(g, g, 3, rng, dilation, Padding::Same);
}

Tensor Res2Dilated::forward(const Tensor& x) const {
    const int c = x.dim(x.rank() - 2);
    if (c % scale != 0) throw ScaleIndivisible("input channels not divisible by scale");
    const int g = c / scale;
    auto parts = split_channels(x, std::vector<int>(static_cast<size_t>(scale), g));
    std::vector<Tensor> outs(parts.size());
    outs[0] = parts[0];
    for (int i = 1; i < scale; ++i) {
        Tensor in = i == 1 ? parts[1] : add(parts[static_cast<size_t>(i)], outs[static_cast<size_t>(i) - 1]);
        outs[static_cast<size_t>(i)] = relu(convs[static_cast<size_t>(i) - 1].forward(in));
    }
    return concat_channels(outs);
}

void Res2Dilated::collect(const std::string& prefix, ParamRegistry& reg) const {
    for (size_t i = 0; i < convs.size(); ++i)
        convs[i].collect(prefix + ".conv" + std::to_string(i + 1), reg);
}

Res2Block::Res2Block(int channels, int reduction, int scale, int dilation, bool use_rse,
                     Rng& rng)
    : conv1(channels, channels, 1, rng),
      bn1(channels),
      res2(channels, scale, dilation, rng),
      bn_res(channels),
      conv2(channels, channels, 1, rng),
      bn2(channels),
      se(channels, reduction, rng) {
    if (use_rse) rse.emplace(channels, reduction, rng);
}

Tensor Res2Block::forward(const Tensor& x, Mode mode) {
    Tensor a = rse ? rse->forward(x) : x;
    Tensor h = bn1.forward(relu(conv1.forward(a)), mode);
    h = bn_res.forward(res2.forward(h), mode);
    h = bn2.forward(relu(conv2.forward(h)), mode);
    return add(x, se.forward(h));
}

namespace {

void collect_bn(const std::string& prefix, BatchNorm1d& bn, ParamRegistry& reg) {
    reg.add(prefix + ".gamma", bn.gamma);
    reg.add(prefix + ".beta", bn.beta);
    reg.add_stats(prefix + ".running_mean", &bn.running_mean);
    reg.add_stats(prefix + ".running_var", &bn.running_var);
}

}  // namespace

void Res2Block::collect(const std::string& prefix, ParamRegistry& reg) {
    if (rse) rse->collect(prefix + ".rse", reg);
    conv1.collect(prefix + ".conv1", reg);
    collect_bn(prefix + ".bn1", bn1, reg);
    res2.collect(prefix + ".res2", reg);
    collect_bn(prefix + ".bn_res", bn_res, reg);
    conv2.collect(prefix + ".conv2", reg);
    collect_bn(prefix + ".bn2", bn2, reg);
    se.collect(prefix + ".se", reg);
}

DiffAttention::DiffAttention(int channels, int heads, Rng& rng)
    : wq1(kaiming_uniform({channels, channels}, channels, rng)),
      wk1(kaiming_uniform({channels, channels}, channels, rng)),
      wq2(kaiming_uniform({channels, channels}, channels, rng)),
      wk2(kaiming_uniform({channels, channels}, channels, rng)),
      wv(kaiming_uniform({channels, channels}, channels, rng)),
      lambda_(Tensor::scalar(0.5)),
      heads(heads) {
    if (channels % heads != 0)
        throw HeadIndivisible("channels " + std::to_string(channels) +
                              " not divisible by head count " + std::to_string(heads));
}

Tensor DiffAttention::forward(const Tensor& z) const {
    if (z.rank() != 2) throw ShapeMismatch("differential attention expects {N,C}");
    const int c = z.dim(1);
    if (c != wv.dim(0)) throw ShapeMismatch("differential attention channel mismatch");
    if (c % heads != 0) throw HeadIndivisible("channels not divisible by head count");
    const int d = c / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor q1 = matmul(z, wq1);
    Tensor k1 = matmul(z, wk1);
    Tensor q2 = matmul(z, wq2);
    Tensor k2 = matmul(z, wk2);
    Tensor v = matmul(z, wv);

    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const int off = h * d;
        Tensor a1 = softmax(
            mul_scalar(matmul_nt(narrow(q1, 1, off, d), narrow(k1, 1, off, d)), inv_sqrt_d), 1);
        Tensor a2 = softmax(
            mul_scalar(matmul_nt(narrow(q2, 1, off, d), narrow(k2, 1, off, d)), inv_sqrt_d), 1);
        Tensor combined = sub(a1, scale_by(a2, lambda_));
        outs.push_back(matmul(combined, narrow(v, 1, off, d)));
    }
    Tensor r = concat(outs, 1);
    return mul(r, z);
}

void DiffAttention::collect(const std::string& prefix, ParamRegistry& reg) const {
    reg.add(prefix + ".wq1", wq1);
    reg.add(prefix + ".wk1", wk1);
    reg.add(prefix + ".wq2", wq2);
    reg.add(prefix + ".wk2", wk2);
    reg.add(prefix + ".wv", wv);
    reg.add(prefix + ".lambda", lambda_);
}

AttentiveStatsPooling::AttentiveStatsPooling(int channels, int bottleneck, Rng& rng)
    : conv1(channels, bottleneck, 1, rng), conv2(bottleneck, 1, 1, rng) {}

Tensor AttentiveStatsPooling::forward(const Tensor& x) const {
    Tensor h = tanh_act(conv1.forward(x));
    Tensor scores = conv2.forward(h);  // {1,T} or {B,1,T}
    Tensor flat = scores.rank() == 2 ? reshape(scores, {scores.dim(1)})
                                     : reshape(scores, {scores.dim(0), scores.dim(2)});
    Tensor wts = softmax(flat, flat.rank() - 1);
    Tensor mu = sum_time(mul_time(x, wts));
    Tensor m2 = sum_time(mul_time(mul(x, x), wts));
    Tensor sd = sqrt_floor(sub(m2, mul(mu, mu)), 1e-8);
    return concat({mu, sd}, mu.rank() - 1);
}

void AttentiveStatsPooling::collect(const std::string& prefix, ParamRegistry& reg) const {
    conv1.collect(prefix + ".conv1", reg);
    conv2.collect(prefix + ".conv2", reg);
}

}  // namespace crynet
