#include "crynet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "crynet/flops.hpp"

namespace crynet {

namespace flops {
namespace {
thread_local Counter* g_counter = nullptr;
}
Counter* active() { return g_counter; }
CounterScope::CounterScope(Counter& c) : previous_(g_counter) { g_counter = &c; }
CounterScope::~CounterScope() { g_counter = previous_; }
}  // namespace flops

namespace {

struct MapDims {
    int B;
    int C;
    int T;
    bool batched;
};

MapDims map_dims(const Tensor& x, const char* who) {
    if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
    if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
    throw ShapeMismatch(std::string(who) + " expects a {C,T} or {B,C,T} tensor");
}

struct VecDims {
    int B;
    int N;
    bool batched;
};

VecDims vec_dims(const Tensor& x, const char* who) {
    if (x.rank() == 1) return {1, x.dim(0), false};
    if (x.rank() == 2) return {x.dim(0), x.dim(1), true};
    throw ShapeMismatch(std::string(who) + " expects a {N} or {B,N} tensor");
}

std::vector<double> pad_time_zeros(const std::vector<double>& xd, int B, int C, int T,
                                   int pad_l, int pad_r) {
    const int tp = T + pad_l + pad_r;
    std::vector<double> xp(static_cast<size_t>(B) * C * tp, 0.0);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const size_t src = (static_cast<size_t>(b) * C + c) * T;
            const size_t dst = (static_cast<size_t>(b) * C + c) * tp + pad_l;
            std::copy_n(&xd[src], T, &xp[dst]);
        }
    return xp;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
              int dilation, Padding padding) {
    const MapDims d = map_dims(x, "conv1d");
    if (w.rank() != 3) throw ShapeMismatch("conv1d kernel must be {Cout,Cin,k}");
    const int cout = w.dim(0), cin = w.dim(1), k = w.dim(2);
    if (cin != d.C)
        throw ShapeMismatch("conv1d kernel Cin=" + std::to_string(cin) +
                            " does not match input C=" + std::to_string(d.C));
    if (dilation < 1) throw ShapeMismatch("conv1d dilation must be >= 1");
    const bool biased = b.defined();
    if (biased && (b.rank() != 1 || b.dim(0) != cout))
        throw ShapeMismatch("conv1d bias must be {Cout}");

    const int span = (k - 1) * dilation + 1;
    int t_out, pad_l, pad_r;
    if (padding == Padding::Valid) {
        if (d.T < span)
            throw InputTooShort("conv1d valid padding needs T >= " + std::to_string(span) +
                                ", got " + std::to_string(d.T));
        t_out = d.T - span + 1;
        pad_l = pad_r = 0;
    } else {
        t_out = d.T;
        const int total = (k - 1) * dilation;
        pad_l = total / 2;
        pad_r = total - pad_l;
    }
    const int tp = d.T + pad_l + pad_r;

    std::vector<double> xp = pad_time_zeros(x.data(), d.B, d.C, d.T, pad_l, pad_r);
    Tensor out = d.batched ? Tensor::zeros({d.B, cout, t_out}) : Tensor::zeros({cout, t_out});
    auto& od = out.data();
    const auto& wd = w.data();
    for (int bi = 0; bi < d.B; ++bi)
        for (int co = 0; co < cout; ++co) {
            const double bias_v = biased ? b.data()[co] : 0.0;
            for (int t = 0; t < t_out; ++t) {
                double acc = bias_v;
                for (int ci = 0; ci < d.C; ++ci) {
                    const double* xrow = &xp[(static_cast<size_t>(bi) * d.C + ci) * tp + t];
                    const double* wrow = &wd[(static_cast<size_t>(co) * cin + ci) * k];
                    for (int j = 0; j < k; ++j) acc += wrow[j] * xrow[j * dilation];
                }
                od[(static_cast<size_t>(bi) * cout + co) * t_out + t] = acc;
            }
        }
    flops::count(flops::conv1d_cost(d.C, cout, k, static_cast<long long>(d.B) * t_out, biased));

    Tensor xc = x, wc = w, bc = b, oc = out;
    detail::maybe_record(
        biased ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w},
        out,
        [xc, wc, bc, oc, xp = std::move(xp), d, cout, cin, k, t_out, tp, pad_l, dilation,
         biased]() {
            if (!oc.has_grad()) return;
            const auto& g = oc.node()->grad;
            const auto& wd = wc.data();
            const bool need_x = xc.requires_grad();
            const bool need_w = wc.requires_grad();
            std::vector<double> dxp;
            if (need_x) dxp.assign(xp.size(), 0.0);
            std::vector<double>* dw = need_w ? &detail::grad_buffer(wc.node()) : nullptr;
            for (int bi = 0; bi < d.B; ++bi)
                for (int co = 0; co < cout; ++co)
                    for (int t = 0; t < t_out; ++t) {
                        const double gv =
                            g[(static_cast<size_t>(bi) * cout + co) * t_out + t];
                        if (gv == 0.0) continue;
                        for (int ci = 0; ci < d.C; ++ci) {
                            const size_t xbase =
                                (static_cast<size_t>(bi) * d.C + ci) * tp + t;
                            const size_t wbase = (static_cast<size_t>(co) * cin + ci) * k;
                            for (int j = 0; j < k; ++j) {
                                if (need_w) (*dw)[wbase + j] += gv * xp[xbase + j * dilation];
                                if (need_x) dxp[xbase + j * dilation] += gv * wd[wbase + j];
                            }
                        }
                    }
            if (need_x) {
                auto& dx = detail::grad_buffer(xc.node());
                for (int bi = 0; bi < d.B; ++bi)
                    for (int ci = 0; ci < d.C; ++ci)
                        for (int t = 0; t < d.T; ++t)
                            dx[(static_cast<size_t>(bi) * d.C + ci) * d.T + t] +=
                                dxp[(static_cast<size_t>(bi) * d.C + ci) * tp + pad_l + t];
            }
            if (biased && bc.requires_grad()) {
                auto& db = detail::grad_buffer(bc.node());
                for (int bi = 0; bi < d.B; ++bi)
                    for (int co = 0; co < cout; ++co)
                        for (int t = 0; t < t_out; ++t)
                            db[co] += g[(static_cast<size_t>(bi) * cout + co) * t_out + t];
            }
        });
    return out;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    const VecDims d = vec_dims(x, "dense");
    if (w.rank() != 2) throw ShapeMismatch("dense weight must be {M,N}");
    const int m = w.dim(0), n = w.dim(1);
    if (n != d.N)
        throw ShapeMismatch("dense weight N=" + std::to_string(n) + " vs input N=" +
                            std::to_string(d.N));
    const bool biased = b.defined();
    if (biased && (b.rank() != 1 || b.dim(0) != m)) throw ShapeMismatch("dense bias must be {M}");

    Tensor out = d.batched ? Tensor::zeros({d.B, m}) : Tensor::zeros({m});
    auto& od = out.data();
    const auto& xd = x.data();
    const auto& wd = w.data();
    for (int bi = 0; bi < d.B; ++bi)
        for (int i = 0; i < m; ++i) {
            double acc = biased ? b.data()[i] : 0.0;
            const double* wrow = &wd[static_cast<size_t>(i) * n];
            const double* xrow = &xd[static_cast<size_t>(bi) * n];
            for (int j = 0; j < n; ++j) acc += wrow[j] * xrow[j];
            od[static_cast<size_t>(bi) * m + i] = acc;
        }
    flops::count(flops::dense_cost(n, m, biased, d.B));

    Tensor xc = x, wc = w, bc = b, oc = out;
    detail::maybe_record(
        biased ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w}, out,
        [xc, wc, bc, oc, d, m, n, biased]() {
            if (!oc.has_grad()) return;
            const auto& g = oc.node()->grad;
            if (xc.requires_grad()) {
                auto& dx = detail::grad_buffer(xc.node());
                const auto& wd = wc.data();
                for (int bi = 0; bi < d.B; ++bi)
                    for (int i = 0; i < m; ++i) {
                        const double gv = g[static_cast<size_t>(bi) * m + i];
                        for (int j = 0; j < n; ++j)
                            dx[static_cast<size_t>(bi) * n + j] +=
                                gv * wd[static_cast<size_t>(i) * n + j];
                    }
            }
            if (wc.requires_grad()) {
                auto& dw = detail::grad_buffer(wc.node());
                const auto& xd = xc.data();
                for (int bi = 0; bi < d.B; ++bi)
                    for (int i = 0; i < m; ++i) {
                        const double gv = g[static_cast<size_t>(bi) * m + i];
                        for (int j = 0; j < n; ++j)
                            dw[static_cast<size_t>(i) * n + j] +=
                                gv * xd[static_cast<size_t>(bi) * n + j];
                    }
            }
            if (biased && bc.requires_grad()) {
                auto& db = detail::grad_buffer(bc.node());
                for (int bi = 0; bi < d.B; ++bi)
                    for (int i = 0; i < m; ++i) db[i] += g[static_cast<size_t>(bi) * m + i];
            }
        });
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor pointwise_op(const Tensor& x, long long cost_per_elem, Fwd fwd, Bwd dydx) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (size_t i = 0; i < xd.size(); ++i) od[i] = fwd(xd[i]);
    flops::count(cost_per_elem * x.numel());
    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, dydx]() {
        if (!oc.has_grad()) return;
        if (!xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        const auto& xd = xc.data();
        const auto& yd = oc.data();
        auto& dx = detail::grad_buffer(xc.node());
        for (size_t i = 0; i < xd.size(); ++i) dx[i] += g[i] * dydx(xd[i], yd[i]);
    });
    return out;
}

double sigmoid_scalar(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

Tensor relu(const Tensor& x) {
    return pointwise_op(
        x, 1, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return pointwise_op(
        x, 4, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_act(const Tensor& x) {
    return pointwise_op(
        x, 1, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) throw ShapeMismatch("softmax axis out of range");
    const int len = x.dim(axis);
    long long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (long long o = 0; o < outer; ++o)
        for (long long in = 0; in < inner; ++in) {
            const size_t base = static_cast<size_t>(o) * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (int l = 0; l < len; ++l) mx = std::max(mx, xd[base + l * inner]);
            double sum = 0.0;
            for (int l = 0; l < len; ++l) {
                const double e = std::exp(xd[base + l * inner] - mx);
                od[base + l * inner] = e;
                sum += e;
            }
            for (int l = 0; l < len; ++l) od[base + l * inner] /= sum;
        }
    flops::count(flops::softmax_cost(outer * inner, len));

    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, outer, inner, len]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        const auto& yd = oc.data();
        auto& dx = detail::grad_buffer(xc.node());
        for (long long o = 0; o < outer; ++o)
            for (long long in = 0; in < inner; ++in) {
                const size_t base = static_cast<size_t>(o) * len * inner + in;
                double dot = 0.0;
                for (int l = 0; l < len; ++l) dot += g[base + l * inner] * yd[base + l * inner];
                for (int l = 0; l < len; ++l)
                    dx[base + l * inner] += yd[base + l * inner] * (g[base + l * inner] - dot);
            }
    });
    return out;
}

Tensor global_avg_pool_time(const Tensor& x) {
    const MapDims d = map_dims(x, "global_avg_pool_time");
    if (d.T < 1) throw EmptyTime("global_avg_pool_time needs T >= 1");
    Tensor out = d.batched ? Tensor::zeros({d.B, d.C}) : Tensor::zeros({d.C});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int b = 0; b < d.B; ++b)
        for (int c = 0; c < d.C; ++c) {
            double acc = 0.0;
            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
            for (int t = 0; t < d.T; ++t) acc += xd[base + t];
            od[static_cast<size_t>(b) * d.C + c] = acc / d.T;
        }
    flops::count(flops::gap_cost(static_cast<long long>(d.B) * d.C, d.T));

    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, d]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        auto& dx = detail::grad_buffer(xc.node());
        const double inv = 1.0 / d.T;
        for (int b = 0; b < d.B; ++b)
            for (int c = 0; c < d.C; ++c) {
                const double gv = g[static_cast<size_t>(b) * d.C + c] * inv;
                const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                for (int t = 0; t < d.T; ++t) dx[base + t] += gv;
            }
    });
    return out;
}

Tensor max_pool_time(const Tensor& x, int k, int stride) {
    const MapDims d = map_dims(x, "max_pool_time");
    if (k < 1) throw ShapeMismatch("max_pool_time window must be >= 1");
    if (stride < 1) throw ShapeMismatch("max_pool_time stride must be >= 1");
    const int t_out = (d.T + stride - 1) / stride;
    const int total_pad = std::max(0, (t_out - 1) * stride + k - d.T);
    const int pad_l = total_pad / 2;

    Tensor out = d.batched ? Tensor::zeros({d.B, d.C, t_out}) : Tensor::zeros({d.C, t_out});
    std::vector<int> argmax(static_cast<size_t>(d.B) * d.C * t_out, -1);
    const auto& xd = x.data();
    auto& od = out.data();
    for (int b = 0; b < d.B; ++b)
        for (int c = 0; c < d.C; ++c) {
            const size_t ibase = (static_cast<size_t>(b) * d.C + c) * d.T;
            const size_t obase = (static_cast<size_t>(b) * d.C + c) * t_out;
            for (int t = 0; t < t_out; ++t) {
                double best = -std::numeric_limits<double>::infinity();
                int best_i = -1;
                for (int j = 0; j < k; ++j) {
                    const int src = t * stride - pad_l + j;
                    if (src < 0 || src >= d.T) continue;  // -inf pad
                    if (xd[ibase + src] > best) {
                        best = xd[ibase + src];
                        best_i = src;
                    }
                }
                od[obase + t] = best;
                argmax[obase + t] = static_cast<int>(ibase) + best_i;
            }
        }
    flops::count(flops::max_pool_cost(static_cast<long long>(d.B) * d.C * t_out, k));

    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, argmax = std::move(argmax)]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        auto& dx = detail::grad_buffer(xc.node());
        for (size_t i = 0; i < argmax.size(); ++i)
            if (argmax[i] >= 0) dx[argmax[i]] += g[i];
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeMismatch("concat needs at least one tensor");
    const int rank = parts[0].rank();
    if (axis < 0 || axis >= rank) throw ShapeMismatch("concat axis out of range");
    Shape shape = parts[0].shape();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank) throw ShapeMismatch("concat rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && p.dim(i) != shape[static_cast<size_t>(i)])
                throw ShapeMismatch("concat non-axis dimension mismatch");
        total += p.dim(axis);
    }
    shape[static_cast<size_t>(axis)] = total;

    long long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= shape[static_cast<size_t>(i)];

    Tensor out = Tensor::zeros(shape);
    auto& od = out.data();
    std::vector<int> sizes;
    int offset = 0;
    for (const Tensor& p : parts) {
        const int len = p.dim(axis);
        sizes.push_back(len);
        const auto& pd = p.data();
        for (long long o = 0; o < outer; ++o)
            std::copy_n(&pd[static_cast<size_t>(o) * len * inner],
                        static_cast<size_t>(len) * inner,
                        &od[(static_cast<size_t>(o) * total + offset) * inner]);
        offset += len;
    }

    std::vector<Tensor> inputs = parts;
    Tensor oc = out;
    detail::maybe_record(parts, out, [inputs, oc, sizes, outer, inner, total]() {
        if (!oc.has_grad()) return;
        const auto& g = oc.node()->grad;
        int offset = 0;
        for (size_t p = 0; p < inputs.size(); ++p) {
            const int len = sizes[p];
            if (inputs[p].requires_grad()) {
                auto& dx = detail::grad_buffer(inputs[p].node());
                for (long long o = 0; o < outer; ++o) {
                    const size_t src = (static_cast<size_t>(o) * total + offset) * inner;
                    const size_t dst = static_cast<size_t>(o) * len * inner;
                    for (long long i = 0; i < static_cast<long long>(len) * inner; ++i)
                        dx[dst + i] += g[src + i];
                }
            }
            offset += len;
        }
    });
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_channels needs at least one part");
    const int rank = parts[0].rank();
    const int time_axis = rank - 1;
    for (const Tensor& p : parts)
        if (p.rank() != rank || p.dim(time_axis) != parts[0].dim(time_axis))
            throw TimeMismatch("concat_channels parts must share T");
    return concat(parts, rank - 2);
}

Tensor narrow(const Tensor& x, int axis, int start, int len) {
    if (axis < 0 || axis >= x.rank()) throw ShapeMismatch("narrow axis out of range");
    if (start < 0 || len < 1 || start + len > x.dim(axis))
        throw ShapeMismatch("narrow range out of bounds");
    Shape shape = x.shape();
    const int full = shape[static_cast<size_t>(axis)];
    shape[static_cast<size_t>(axis)] = len;
    long long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    Tensor out = Tensor::zeros(shape);
    auto& od = out.data();
    const auto& xd = x.data();
    for (long long o = 0; o < outer; ++o)
        std::copy_n(&xd[(static_cast<size_t>(o) * full + start) * inner],
                    static_cast<size_t>(len) * inner,
                    &od[static_cast<size_t>(o) * len * inner]);

    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, outer, inner, full, start, len]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        auto& dx = detail::grad_buffer(xc.node());
        for (long long o = 0; o < outer; ++o) {
            const size_t dst = (static_cast<size_t>(o) * full + start) * inner;
            const size_t src = static_cast<size_t>(o) * len * inner;
            for (long long i = 0; i < static_cast<long long>(len) * inner; ++i)
                dx[dst + i] += g[src + i];
        }
    });
    return out;
}

std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& sizes) {
    const int axis = x.rank() - 2;
    std::vector<Tensor> parts;
    int offset = 0;
    for (int s : sizes) {
        parts.push_back(narrow(x, axis, offset, s));
        offset += s;
    }
    if (offset != x.dim(axis)) throw ShapeMismatch("split_channels sizes must cover C");
    return parts;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) throw ShapeMismatch("reshape changes element count");
    Tensor out = Tensor::from(std::move(shape), x.data());
    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        auto& dx = detail::grad_buffer(xc.node());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    });
    return out;
}

namespace {

template <typename Combine, typename BackA, typename BackB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* who, Combine fwd,
                 BackA da, BackB db) {
    if (!same_shape(a, b)) throw ShapeMismatch(std::string(who) + " shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    for (size_t i = 0; i < ad.size(); ++i) od[i] = fwd(ad[i], bd[i]);
    flops::count(a.numel());
    Tensor ac = a, bc = b, oc = out;
    detail::maybe_record({a, b}, out, [ac, bc, oc, da, db]() {
        if (!oc.has_grad()) return;
        const auto& g = oc.node()->grad;
        if (ac.requires_grad()) {
            auto& ga = detail::grad_buffer(ac.node());
            const auto& ad = ac.data();
            const auto& bd = bc.data();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * da(ad[i], bd[i]);
        }
        if (bc.requires_grad()) {
            auto& gb = detail::grad_buffer(bc.node());
            const auto& ad = ac.data();
            const auto& bd = bc.data();
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * db(ad[i], bd[i]);
        }
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor mul_scalar(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] * c;
    flops::count(x.numel());
    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, c]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        auto& dx = detail::grad_buffer(xc.node());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * c;
    });
    return out;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ShapeMismatch("scale_by expects a scalar tensor");
    const double sv = s.data()[0];
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] * sv;
    flops::count(x.numel());
    Tensor xc = x, sc = s, oc = out;
    detail::maybe_record({x, s}, out, [xc, sc, oc, sv]() {
        if (!oc.has_grad()) return;
        const auto& g = oc.node()->grad;
        if (xc.requires_grad()) {
            auto& dx = detail::grad_buffer(xc.node());
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * sv;
        }
        if (sc.requires_grad()) {
            auto& ds = detail::grad_buffer(sc.node());
            const auto& xd = xc.data();
            double acc = 0.0;
            for (size_t i = 0; i < xd.size(); ++i) acc += g[i] * xd[i];
            ds[0] += acc;
        }
    });
    return out;
}

Tensor mul_channels(const Tensor& x, const Tensor& gate) {
    const MapDims d = map_dims(x, "mul_channels");
    const VecDims v = vec_dims(gate, "mul_channels gate");
    if (v.N != d.C || v.B != d.B)
        throw ShapeMismatch("mul_channels gate must be {C} / {B,C} matching x");
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    const auto& gd = gate.data();
    auto& od = out.data();
    for (int b = 0; b < d.B; ++b)
        for (int c = 0; c < d.C; ++c) {
            const double gv = gd[static_cast<size_t>(b) * d.C + c];
            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
            for (int t = 0; t < d.T; ++t) od[base + t] = xd[base + t] * gv;
        }
    flops::count(x.numel());
    Tensor xc = x, gc = gate, oc = out;
    detail::maybe_record({x, gate}, out, [xc, gc, oc, d]() {
        if (!oc.has_grad()) return;
        const auto& g = oc.node()->grad;
        if (xc.requires_grad()) {
            auto& dx = detail::grad_buffer(xc.node());
            const auto& gd = gc.data();
            for (int b = 0; b < d.B; ++b)
                for (int c = 0; c < d.C; ++c) {
                    const double gv = gd[static_cast<size_t>(b) * d.C + c];
                    const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                    for (int t = 0; t < d.T; ++t) dx[base + t] += g[base + t] * gv;
                }
        }
        if (gc.requires_grad()) {
            auto& dg = detail::grad_buffer(gc.node());
            const auto& xd = xc.data();
            for (int b = 0; b < d.B; ++b)
                for (int c = 0; c < d.C; ++c) {
                    const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                    double acc = 0.0;
                    for (int t = 0; t < d.T; ++t) acc += g[base + t] * xd[base + t];
                    dg[static_cast<size_t>(b) * d.C + c] += acc;
                }
        }
    });
    return out;
}

Tensor mul_time(const Tensor& x, const Tensor& w) {
    const MapDims d = map_dims(x, "mul_time");
    const VecDims v = vec_dims(w, "mul_time weights");
    if (v.N != d.T || v.B != d.B)
        throw ShapeMismatch("mul_time weights must be {T} / {B,T} matching x");
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    const auto& wd = w.data();
    auto& od = out.data();
    for (int b = 0; b < d.B; ++b)
        for (int c = 0; c < d.C; ++c) {
            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
            const size_t wbase = static_cast<size_t>(b) * d.T;
            for (int t = 0; t < d.T; ++t) od[base + t] = xd[base + t] * wd[wbase + t];
        }
    flops::count(x.numel());
    Tensor xc = x, wc = w, oc = out;
    detail::maybe_record({x, w}, out, [xc, wc, oc, d]() {
        if (!oc.has_grad()) return;
        const auto& g = oc.node()->grad;
        if (xc.requires_grad()) {
            auto& dx = detail::grad_buffer(xc.node());
            const auto& wd = wc.data();
            for (int b = 0; b < d.B; ++b)
                for (int c = 0; c < d.C; ++c) {
                    const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                    const size_t wbase = static_cast<size_t>(b) * d.T;
                    for (int t = 0; t < d.T; ++t) dx[base + t] += g[base + t] * wd[wbase + t];
                }
        }
        if (wc.requires_grad()) {
            auto& dw = detail::grad_buffer(wc.node());
            const auto& xd = xc.data();
            for (int b = 0; b < d.B; ++b)
                for (int t = 0; t < d.T; ++t) {
                    double acc = 0.0;
                    for (int c = 0; c < d.C; ++c) {
                        const size_t i = (static_cast<size_t>(b) * d.C + c) * d.T + t;
                        acc += g[i] * xd[i];
                    }
                    dw[static_cast<size_t>(b) * d.T + t] += acc;
                }
        }
    });
    return out;
}

Tensor mean_channels(const Tensor& x) {
    const MapDims d = map_dims(x, "mean_channels");
    Tensor out = d.batched ? Tensor::zeros({d.B, 1, d.T}) : Tensor::zeros({1, d.T});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int b = 0; b < d.B; ++b)
        for (int t = 0; t < d.T; ++t) {
            double acc = 0.0;
            for (int c = 0; c < d.C; ++c)
                acc += xd[(static_cast<size_t>(b) * d.C + c) * d.T + t];
            od[static_cast<size_t>(b) * d.T + t] = acc / d.C;
        }
    flops::count(flops::mean_channels_cost(static_cast<long long>(d.B) * d.T, d.C));
    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, d]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        auto& dx = detail::grad_buffer(xc.node());
        const double inv = 1.0 / d.C;
        for (int b = 0; b < d.B; ++b)
            for (int c = 0; c < d.C; ++c)
                for (int t = 0; t < d.T; ++t)
                    dx[(static_cast<size_t>(b) * d.C + c) * d.T + t] +=
                        g[static_cast<size_t>(b) * d.T + t] * inv;
    });
    return out;
}

Tensor sum_time(const Tensor& x) {
    const MapDims d = map_dims(x, "sum_time");
    Tensor out = d.batched ? Tensor::zeros({d.B, d.C}) : Tensor::zeros({d.C});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int b = 0; b < d.B; ++b)
        for (int c = 0; c < d.C; ++c) {
            double acc = 0.0;
            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
            for (int t = 0; t < d.T; ++t) acc += xd[base + t];
            od[static_cast<size_t>(b) * d.C + c] = acc;
        }
    flops::count(flops::sum_time_cost(static_cast<long long>(d.B) * d.C, d.T));
    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, d]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        auto& dx = detail::grad_buffer(xc.node());
        for (int b = 0; b < d.B; ++b)
            for (int c = 0; c < d.C; ++c) {
                const double gv = g[static_cast<size_t>(b) * d.C + c];
                const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                for (int t = 0; t < d.T; ++t) dx[base + t] += gv;
            }
    });
    return out;
}

Tensor sqrt_floor(const Tensor& x, double floor_value) {
    Tensor out = Tensor::zeros(x.shape());
    const auto& xd = x.data();
    auto& od = out.data();
    for (size_t i = 0; i < xd.size(); ++i) od[i] = std::sqrt(std::max(xd[i], floor_value));
    flops::count(2 * x.numel());
    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc, floor_value]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const auto& g = oc.node()->grad;
        const auto& xd = xc.data();
        const auto& yd = oc.data();
        auto& dx = detail::grad_buffer(xc.node());
        for (size_t i = 0; i < xd.size(); ++i)
            if (xd[i] > floor_value) dx[i] += g[i] * 0.5 / yd[i];
    });
    return out;
}

Tensor mean_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    out.data()[0] = acc / static_cast<double>(x.numel());
    flops::count(x.numel());
    Tensor xc = x, oc = out;
    detail::maybe_record({x}, out, [xc, oc]() {
        if (!oc.has_grad() || !xc.requires_grad()) return;
        const double gv = oc.node()->grad[0] / static_cast<double>(xc.numel());
        auto& dx = detail::grad_buffer(xc.node());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
    });
    return out;
}

namespace {

void require_matrix(const Tensor& t, const char* who) {
    if (t.rank() != 2) throw ShapeMismatch(std::string(who) + " expects rank-2 tensors");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const int n = a.dim(0), m = a.dim(1), p = b.dim(1);
    if (b.dim(0) != m) throw ShapeMismatch("matmul inner dimensions disagree");
    Tensor out = Tensor::zeros({n, p});
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    for (int i = 0; i < n; ++i)
        for (int kk = 0; kk < m; ++kk) {
            const double av = ad[static_cast<size_t>(i) * m + kk];
            if (av == 0.0) continue;
            for (int j = 0; j < p; ++j)
                od[static_cast<size_t>(i) * p + j] += av * bd[static_cast<size_t>(kk) * p + j];
        }
    flops::count(flops::matmul_cost(n, m, p));
    Tensor ac = a, bc = b, oc = out;
    detail::maybe_record({a, b}, out, [ac, bc, oc, n, m, p]() {
        if (!oc.has_grad()) return;
        const auto& g = oc.node()->grad;
        if (ac.requires_grad()) {
            auto& da = detail::grad_buffer(ac.node());
            const auto& bd = bc.data();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < p; ++j) {
                    const double gv = g[static_cast<size_t>(i) * p + j];
                    for (int kk = 0; kk < m; ++kk)
                        da[static_cast<size_t>(i) * m + kk] +=
                            gv * bd[static_cast<size_t>(kk) * p + j];
                }
        }
        if (bc.requires_grad()) {
            auto& db = detail::grad_buffer(bc.node());
            const auto& ad = ac.data();
            for (int i = 0; i < n; ++i)
                for (int kk = 0; kk < m; ++kk) {
                    const double av = ad[static_cast<size_t>(i) * m + kk];
                    for (int j = 0; j < p; ++j)
                        db[static_cast<size_t>(kk) * p + j] +=
                            av * g[static_cast<size_t>(i) * p + j];
                }
        }
    });
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const int n = a.dim(0), m = a.dim(1), p = b.dim(0);
    if (b.dim(1) != m) throw ShapeMismatch("matmul_nt inner dimensions disagree");
    Tensor out = Tensor::zeros({n, p});
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < m; ++kk)
                acc += ad[static_cast<size_t>(i) * m + kk] * bd[static_cast<size_t>(j) * m + kk];
            od[static_cast<size_t>(i) * p + j] = acc;
        }
    flops::count(flops::matmul_cost(n, m, p));
    Tensor ac = a, bc = b, oc = out;
    detail::maybe_record({a, b}, out, [ac, bc, oc, n, m, p]() {
        if (!oc.has_grad()) return;
        const auto& g = oc.node()->grad;
        if (ac.requires_grad()) {
            auto& da = detail::grad_buffer(ac.node());
            const auto& bd = bc.data();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < p; ++j) {
                    const double gv = g[static_cast<size_t>(i) * p + j];
                    for (int kk = 0; kk < m; ++kk)
                        da[static_cast<size_t>(i) * m + kk] +=
                            gv * bd[static_cast<size_t>(j) * m + kk];
                }
        }
        if (bc.requires_grad()) {
            auto& db = detail::grad_buffer(bc.node());
            const auto& ad = ac.data();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < p; ++j) {
                    const double gv = g[static_cast<size_t>(i) * p + j];
                    for (int kk = 0; kk < m; ++kk)
                        db[static_cast<size_t>(j) * m + kk] +=
                            gv * ad[static_cast<size_t>(i) * m + kk];
                }
        }
    });
    return out;
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeMismatch("cross_entropy_logits expects {B,K} logits");
    const int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw ShapeMismatch("labels length must equal batch size");
    for (int lab : labels)
        if (lab < 0 || lab >= K)
            throw LabelOutOfRange("label " + std::to_string(lab) + " outside [0," +
                                  std::to_string(K) + ")");
    const auto& zd = logits.data();
    // Per row: loss = logsumexp(z) - z[label]; keep softmax for backward.
    std::vector<double> soft(static_cast<size_t>(B) * K);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const size_t base = static_cast<size_t>(b) * K;
        double mx = zd[base];
        for (int k = 1; k < K; ++k) mx = std::max(mx, zd[base + k]);
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            soft[base + k] = std::exp(zd[base + k] - mx);
            sum += soft[base + k];
        }
        for (int k = 0; k < K; ++k) soft[base + k] /= sum;
        total += mx + std::log(sum) - zd[base + labels[static_cast<size_t>(b)]];
    }
    Tensor out = Tensor::scalar(total / B);
    flops::count(static_cast<long long>(B) * (5 * K + 2));
    Tensor zc = logits, oc = out;
    detail::maybe_record({logits}, out, [zc, oc, soft = std::move(soft), labels, B, K]() {
        if (!oc.has_grad() || !zc.requires_grad()) return;
        const double gv = oc.node()->grad[0] / B;
        auto& dz = detail::grad_buffer(zc.node());
        for (int b = 0; b < B; ++b) {
            const size_t base = static_cast<size_t>(b) * K;
            for (int k = 0; k < K; ++k) {
                double v = soft[base + k];
                if (k == labels[static_cast<size_t>(b)]) v -= 1.0;
                dz[base + k] += gv * v;
            }
        }
    });
    return out;
}

BatchNorm1d::BatchNorm1d(int channels)
    : gamma(Tensor::full({channels}, 1.0)),
      beta(Tensor::zeros({channels})),
      running_mean(static_cast<size_t>(channels), 0.0),
      running_var(static_cast<size_t>(channels), 1.0) {}

Tensor BatchNorm1d::forward(const Tensor& x, Mode mode) {
    const MapDims d = map_dims(x, "batch_norm_1d");
    if (d.C != channels()) throw ShapeMismatch("batch_norm_1d channel mismatch");
    const auto& xd = x.data();
    Tensor out = Tensor::zeros(x.shape());
    auto& od = out.data();
    const long long n = static_cast<long long>(d.B) * d.T;

    if (mode == Mode::Train) {
        std::vector<double> mean(static_cast<size_t>(d.C), 0.0);
        std::vector<double> var(static_cast<size_t>(d.C), 0.0);
        std::vector<double> invstd(static_cast<size_t>(d.C), 0.0);
        for (int c = 0; c < d.C; ++c) {
            double acc = 0.0;
            for (int b = 0; b < d.B; ++b) {
                const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                for (int t = 0; t < d.T; ++t) acc += xd[base + t];
            }
            mean[c] = acc / n;
            double v = 0.0;
            for (int b = 0; b < d.B; ++b) {
                const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                for (int t = 0; t < d.T; ++t) {
                    const double dlt = xd[base + t] - mean[c];
                    v += dlt * dlt;
                }
            }
            var[c] = v / n;
            invstd[c] = 1.0 / std::sqrt(var[c] + eps);
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
            const double unbiased = n > 1 ? var[c] * n / (n - 1.0) : var[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
        }
        std::vector<double> xhat(xd.size());
        const auto& gd = gamma.data();
        const auto& bd = beta.data();
        for (int b = 0; b < d.B; ++b)
            for (int c = 0; c < d.C; ++c) {
                const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                for (int t = 0; t < d.T; ++t) {
                    xhat[base + t] = (xd[base + t] - mean[c]) * invstd[c];
                    od[base + t] = gd[c] * xhat[base + t] + bd[c];
                }
            }
        flops::count(flops::batch_norm_train_cost(d.C, x.numel()));
        Tensor xc = x, gc = gamma, bc = beta, oc = out;
        detail::maybe_record(
            {x, gamma, beta}, out,
            [xc, gc, bc, oc, xhat = std::move(xhat), invstd = std::move(invstd), d, n]() {
                if (!oc.has_grad()) return;
                const auto& g = oc.node()->grad;
                if (gc.requires_grad()) {
                    auto& dg = detail::grad_buffer(gc.node());
                    for (int b = 0; b < d.B; ++b)
                        for (int c = 0; c < d.C; ++c) {
                            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                            double acc = 0.0;
                            for (int t = 0; t < d.T; ++t) acc += g[base + t] * xhat[base + t];
                            dg[c] += acc;
                        }
                }
                if (bc.requires_grad()) {
                    auto& db = detail::grad_buffer(bc.node());
                    for (int b = 0; b < d.B; ++b)
                        for (int c = 0; c < d.C; ++c) {
                            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                            double acc = 0.0;
                            for (int t = 0; t < d.T; ++t) acc += g[base + t];
                            db[c] += acc;
                        }
                }
                if (xc.requires_grad()) {
                    auto& dx = detail::grad_buffer(xc.node());
                    const auto& gd = gc.data();
                    // dx = invstd/n * gamma * (n*g - sum(g) - xhat * sum(g*xhat))
                    for (int c = 0; c < d.C; ++c) {
                        double sum_g = 0.0, sum_gx = 0.0;
                        for (int b = 0; b < d.B; ++b) {
                            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                            for (int t = 0; t < d.T; ++t) {
                                sum_g += g[base + t];
                                sum_gx += g[base + t] * xhat[base + t];
                            }
                        }
                        const double scale = gd[c] * invstd[c] / n;
                        for (int b = 0; b < d.B; ++b) {
                            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                            for (int t = 0; t < d.T; ++t)
                                dx[base + t] += scale * (n * g[base + t] - sum_g -
                                                         xhat[base + t] * sum_gx);
                        }
                    }
                }
            });
        return out;
    }

    // Eval: affine transform with frozen running statistics.
    std::vector<double> invstd(static_cast<size_t>(d.C));
    for (int c = 0; c < d.C; ++c) invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    std::vector<double> xhat(xd.size());
    for (int b = 0; b < d.B; ++b)
        for (int c = 0; c < d.C; ++c) {
            const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
            for (int t = 0; t < d.T; ++t) {
                xhat[base + t] = (xd[base + t] - running_mean[c]) * invstd[c];
                od[base + t] = gd[c] * xhat[base + t] + bd[c];
            }
        }
    flops::count(flops::batch_norm_eval_cost(d.C, x.numel()));
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    detail::maybe_record(
        {x, gamma, beta}, out,
        [xc, gc, bc, oc, xhat = std::move(xhat), invstd = std::move(invstd), d]() {
            if (!oc.has_grad()) return;
            const auto& g = oc.node()->grad;
            if (gc.requires_grad()) {
                auto& dg = detail::grad_buffer(gc.node());
                for (int b = 0; b < d.B; ++b)
                    for (int c = 0; c < d.C; ++c) {
                        const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                        for (int t = 0; t < d.T; ++t) dg[c] += g[base + t] * xhat[base + t];
                    }
            }
            if (bc.requires_grad()) {
                auto& db = detail::grad_buffer(bc.node());
                for (int b = 0; b < d.B; ++b)
                    for (int c = 0; c < d.C; ++c) {
                        const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                        for (int t = 0; t < d.T; ++t) db[c] += g[base + t];
                    }
            }
            if (xc.requires_grad()) {
                auto& dx = detail::grad_buffer(xc.node());
                const auto& gd = gc.data();
                for (int b = 0; b < d.B; ++b)
                    for (int c = 0; c < d.C; ++c) {
                        const double s = gd[c] * invstd[c];
                        const size_t base = (static_cast<size_t>(b) * d.C + c) * d.T;
                        for (int t = 0; t < d.T; ++t) dx[base + t] += g[base + t] * s;
                    }
            }
        });
    return out;
}

}  // namespace crynet
