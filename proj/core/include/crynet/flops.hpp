#pragma once

namespace crynet::flops {

// Runtime multiply-add counter. When a Counter is active every tensor op
// adds its cost, computed from the shapes it actually executed with. The
// analytic analyzer in analysis.hpp predicts the same totals from the model
// structure alone, which is what makes the comparison a real check.
//
// Counting rules (one multiply-add = 2 FLOPs):
//   conv1d          2*Cin*Cout*k*Tout, +Cout*Tout if biased
//   dense           2*in*out per sample, +out if biased
//   matmul NxM.MxP  2*N*M*P
//   add/sub/mul     1 per output element (scalar broadcasts included)
//   relu            1 per element
//   sigmoid         4 per element (negate, exp, add, divide)
//   tanh            1 per element
//   softmax         5L-2 per length-L slice (max, shift, exp, sum, divide)
//   max pool        k-1 comparisons per output element
//   global avg pool T per output value (T-1 adds + divide)
//   sum over time   T-1 per output value
//   mean over chans C per output value
//   sqrt w/ floor   2 per element
//   batch norm eval 4 per element + 3 per channel (inv-std precompute)
//   batch norm train 8 per element + 7 per channel
//   cross entropy   5K+2 per row of width K
//   concat/narrow/reshape  0 (data movement)
struct Counter {
    long long total = 0;
    void add(long long n) { total += n; }
};

Counter* active();

class CounterScope {
public:
    explicit CounterScope(Counter& c);
    ~CounterScope();
    CounterScope(const CounterScope&) = delete;
    CounterScope& operator=(const CounterScope&) = delete;

private:
    Counter* previous_;
};

inline void count(long long n) {
    if (Counter* c = active()) c->add(n);
}

// Shared cost formulas, used both by the runtime counter and the analyzer.
inline long long conv1d_cost(long long cin, long long cout, long long k,
                             long long t_out, bool bias) {
    return 2 * cin * cout * k * t_out + (bias ? cout * t_out : 0);
}
inline long long dense_cost(long long in, long long out, bool bias, long long batch) {
    return batch * (2 * in * out + (bias ? out : 0));
}
inline long long matmul_cost(long long n, long long m, long long p) { return 2 * n * m * p; }
inline long long softmax_cost(long long slices, long long len) {
    return slices * (5 * len - 2);
}
inline long long max_pool_cost(long long out_elems, long long k) {
    return out_elems * (k - 1);
}
inline long long gap_cost(long long out_values, long long t) { return out_values * t; }
inline long long sum_time_cost(long long out_values, long long t) {
    return out_values * (t - 1);
}
inline long long mean_channels_cost(long long out_values, long long c) {
    return out_values * c;
}
inline long long batch_norm_eval_cost(long long c, long long elems) {
    return 4 * elems + 3 * c;
}
inline long long batch_norm_train_cost(long long c, long long elems) {
    return 8 * elems + 7 * c;
}

}  // namespace crynet::flops
