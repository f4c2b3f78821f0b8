#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "crynet/blocks.hpp"

using namespace crynet;

namespace {

Tensor random_map(int c, int t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor x = Tensor::zeros({c, t});
    for (double& v : x.data()) v = rng.uniform(lo, hi);
    return x;
}

void zero_all(Tensor& t) {
    for (double& v : t.data()) v = 0.0;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Straight-line reference of the SE equations on raw arrays: z is the time
// mean, the gate is sigmoid(W2 relu(W1 z)), output is gate-scaled input.
std::vector<double> se_reference(const std::vector<double>& x, int c, int t,
                                 const std::vector<double>& w1, int cr,
                                 const std::vector<double>& w2) {
    std::vector<double> z(static_cast<size_t>(c), 0.0);
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < t; ++j) z[i] += x[static_cast<size_t>(i) * t + j];
        z[i] /= t;
    }
    std::vector<double> h(static_cast<size_t>(cr), 0.0);
    for (int i = 0; i < cr; ++i) {
        for (int j = 0; j < c; ++j) h[i] += w1[static_cast<size_t>(i) * c + j] * z[j];
        h[i] = std::max(h[i], 0.0);
    }
    std::vector<double> s(static_cast<size_t>(c), 0.0);
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < cr; ++j) s[i] += w2[static_cast<size_t>(i) * cr + j] * h[j];
        s[i] = sig(s[i]);
    }
    std::vector<double> out(x.size());
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < t; ++j)
            out[static_cast<size_t>(i) * t + j] = s[i] * x[static_cast<size_t>(i) * t + j];
    return out;
}

// Plain same-padded dilated convolution on raw arrays.
std::vector<double> conv_reference(const std::vector<double>& x, int cin, int t,
                                   const std::vector<double>& w, int cout, int k,
                                   const std::vector<double>& bias, int dilation) {
    std::vector<double> out(static_cast<size_t>(cout) * t, 0.0);
    const int total_pad = (k - 1) * dilation;
    const int pad_l = total_pad / 2;
    for (int co = 0; co < cout; ++co)
        for (int tt = 0; tt < t; ++tt) {
            double acc = bias.empty() ? 0.0 : bias[co];
            for (int ci = 0; ci < cin; ++ci)
                for (int j = 0; j < k; ++j) {
                    const int src = tt - pad_l + j * dilation;
                    if (src < 0 || src >= t) continue;
                    acc += w[(static_cast<size_t>(co) * cin + ci) * k + j] *
                           x[static_cast<size_t>(ci) * t + src];
                }
            out[static_cast<size_t>(co) * t + tt] = acc;
        }
    return out;
}

std::vector<double> maxpool_reference(const std::vector<double>& x, int c, int t, int k) {
    std::vector<double> out(x.size());
    const int pad_l = (k - 1) / 2;
    for (int ci = 0; ci < c; ++ci)
        for (int tt = 0; tt < t; ++tt) {
            double best = -1e300;
            for (int j = 0; j < k; ++j) {
                const int src = tt - pad_l + j;
                if (src < 0 || src >= t) continue;
                best = std::max(best, x[static_cast<size_t>(ci) * t + src]);
            }
            out[static_cast<size_t>(ci) * t + tt] = best;
        }
    return out;
}

}  // namespace

TEST_CASE("se block examples") {
    Rng rng(101);
    SEBlock se(4, 2, rng);
    zero_all(se.fc1.w);
    zero_all(se.fc2.w);
    Tensor x = random_map(4, 6, rng);
    Tensor y = se.forward(x);
    for (long long i = 0; i < x.numel(); ++i)
        CHECK(y[i] == doctest::Approx(0.5 * x[i]).epsilon(1e-15));

    SEBlock se2(4, 2, rng);
    Tensor zero = Tensor::zeros({4, 6});
    Tensor y2 = se2.forward(zero);
    for (long long i = 0; i < y2.numel(); ++i) CHECK(y2[i] == 0.0);

    Tensor g = se2.gate(x);
    for (long long i = 0; i < g.numel(); ++i) {
        CHECK(g[i] > 0.0);
        CHECK(g[i] < 1.0);
    }
}

TEST_CASE("se block matches the straight-line reference on 50 seeds") {
    for (int seed = 1; seed <= 50; ++seed) {
        Rng rng(seed * 37);
        const int c = 4 + 2 * rng.below(3);
        const int t = 3 + rng.below(8);
        SEBlock se(c, 2, rng);
        Tensor x = random_map(c, t, rng, -2.0, 2.0);
        Tensor y = se.forward(x);
        auto ref = se_reference(x.data(), c, t, se.fc1.w.data(), c / 2, se.fc2.w.data());
        for (long long i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("rse block examples") {
    Rng rng(103);
    SEBlock se(4, 2, rng);
    zero_all(se.fc1.w);
    zero_all(se.fc2.w);
    Tensor x = random_map(4, 5, rng);
    Tensor y = rse_block(x, se);
    for (long long i = 0; i < y.numel(); ++i)
        CHECK(y[i] == doctest::Approx(1.5 * x[i]).epsilon(1e-15));

    SEBlock se2(4, 2, rng);
    Tensor zero = Tensor::zeros({4, 5});
    Tensor yz = rse_block(zero, se2);
    for (long long i = 0; i < yz.numel(); ++i) CHECK(yz[i] == 0.0);

    // defining identity, bit-exact: rse(x) == x + se(x)
    Tensor ys = rse_block(x, se2);
    Tensor direct = add(x, se2.forward(x));
    for (long long i = 0; i < ys.numel(); ++i) CHECK(ys[i] == direct[i]);
}

TEST_CASE("mca block shape and neutral gate") {
    Rng rng(105);
    MCALayer mca(8, 4, {1, 2, 3}, rng);
    Tensor x = random_map(8, 16, rng);
    Tensor y = mca.forward(x);
    CHECK(y.shape() == Shape{32, 16});

    MCALayer bypass(8, 4, {1, 2, 3}, rng);
    bypass.gate_bypass = true;
    Tensor cat = bypass.forward(x);
    CHECK(cat.shape() == Shape{32, 16});
    // with the gate bypassed the output is exactly the concatenation
    bypass.gate_bypass = false;
    Tensor gated = bypass.forward(x);
    bool any_diff = false;
    for (long long i = 0; i < cat.numel(); ++i)
        if (gated[i] != cat[i]) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("mca block matches a straight-line reference on 50 seeds") {
    for (int seed = 1; seed <= 50; ++seed) {
        Rng rng(seed * 71 + 5);
        const int c = 4;
        const int t = 5 + rng.below(6);
        MCALayer mca(c, 4, {1, 2, 3}, rng);
        Tensor x = random_map(c, t, rng, -1.5, 1.5);

        const auto e = conv_reference(x.data(), c, t, mca.entry.w.data(), c, 1,
                                      mca.entry.b.data(), 1);
        const auto f3 = conv_reference(e, c, t, mca.branch3.w.data(), c, 3,
                                       mca.branch3.b.data(), 1);
        const auto f5 = conv_reference(e, c, t, mca.branch5.w.data(), c, 5,
                                       mca.branch5.b.data(), 2);
        const auto f7 = conv_reference(e, c, t, mca.branch7.w.data(), c, 7,
                                       mca.branch7.b.data(), 3);
        const auto pooled_in = conv_reference(x.data(), c, t, mca.pool_conv.w.data(), c, 1,
                                              mca.pool_conv.b.data(), 1);
        const auto m = maxpool_reference(pooled_in, c, t, 3);

        std::vector<double> cat;
        for (const auto* part : {&f3, &f5, &f7, &m})
            cat.insert(cat.end(), part->begin(), part->end());

        const int g = 4 * c;
        std::vector<double> z(static_cast<size_t>(g), 0.0);
        for (int i = 0; i < g; ++i) {
            for (int j = 0; j < t; ++j) z[i] += cat[static_cast<size_t>(i) * t + j];
            z[i] /= t;
        }
        const int gr = g / 4;
        std::vector<double> h(static_cast<size_t>(gr), 0.0);
        for (int i = 0; i < gr; ++i) {
            for (int j = 0; j < g; ++j)
                h[i] += mca.fc1.w.data()[static_cast<size_t>(i) * g + j] * z[j];
            h[i] = std::max(h[i], 0.0);
        }
        std::vector<double> s(static_cast<size_t>(g), 0.0);
        for (int i = 0; i < g; ++i) {
            for (int j = 0; j < gr; ++j)
                s[i] += mca.fc2.w.data()[static_cast<size_t>(i) * gr + j] * h[j];
            s[i] = sig(s[i]);
        }
        std::vector<double> expect(cat.size());
        for (int i = 0; i < g; ++i)
            for (int j = 0; j < t; ++j)
                expect[static_cast<size_t>(i) * t + j] =
                    s[i] * cat[static_cast<size_t>(i) * t + j];

        Tensor y = mca.forward(x);
        REQUIRE(y.numel() == static_cast<long long>(expect.size()));
        for (long long i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i] - expect[i]) < 1e-12);
    }
}

TEST_CASE("temporal attention") {
    Rng rng(107);
    TemporalAttention ta(rng);
    zero_all(ta.conv.w);
    zero_all(ta.conv.b);
    Tensor x = random_map(5, 9, rng);
    Tensor at = ta.forward(x);
    CHECK(at.shape() == Shape{9});
    for (long long i = 0; i < at.numel(); ++i) CHECK(at[i] == 0.5);

    TemporalAttention ta2(rng);
    Tensor constant = Tensor::full({3, 20}, 0.7);
    Tensor atc = ta2.forward(constant);
    // interior values equal; boundary affected by zero padding
    for (int i = 4; i < 16; ++i) CHECK(atc[i] == doctest::Approx(atc[4]).epsilon(1e-12));

    Tensor tall = random_map(11, 4, rng);
    CHECK(ta2.forward(tall).shape() == Shape{4});
}

TEST_CASE("tcia fuse") {
    Rng rng(109);
    const int c = 3, t = 6;
    Tensor x = random_map(c, t, rng);
    Tensor x_rse = random_map(c, t, rng);

    // identity kernel-1 conv
    Conv1dLayer identity(c, c, 1, rng);
    zero_all(identity.w);
    for (int i = 0; i < c; ++i) identity.w.data()[static_cast<size_t>(i) * c + i] = 1.0;
    zero_all(identity.b);

    Tensor ones_t = Tensor::full({t}, 1.0);
    Tensor ones_c = Tensor::full({c}, 1.0);
    Tensor y = tcia_fuse(x, x_rse, ones_t, ones_c, identity);
    for (long long i = 0; i < y.numel(); ++i)
        CHECK(y[i] == doctest::Approx(x[i] + x_rse[i]).epsilon(1e-15));

    Conv1dLayer conv(c, c, 1, rng);
    zero_all(conv.b);
    Tensor zeros_t = Tensor::zeros({t});
    Tensor y2 = tcia_fuse(x, x_rse, zeros_t, ones_c, conv);
    for (long long i = 0; i < y2.numel(); ++i) CHECK(y2[i] == x[i]);

    // the mask A_t A_c^T has rank one
    Tensor a_t = random_map(1, t, rng, 0.1, 0.9);
    Tensor a_c = random_map(1, c, rng, 0.1, 0.9);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < t; ++j) {
            const double mij = a_c[i] * a_t[j];
            const double m00 = a_c[0] * a_t[0];
            const double mi0 = a_c[i] * a_t[0];
            const double m0j = a_c[0] * a_t[j];
            CHECK(std::abs(mij * m00 - mi0 * m0j) < 1e-12);  // all 2x2 minors vanish
        }
}

TEST_CASE("res2 trunk block preserves shape at the working width") {
    Rng rng(111);
    Res2Block block(128, 4, 4, 2, true, rng);
    Tensor x = random_map(128, 10, rng);
    Tensor y = block.forward(x, Mode::Eval);
    CHECK(y.shape() == Shape{128, 10});
}

TEST_CASE("zero-weight res2 block is the identity") {
    Rng rng(113);
    Res2Block block(8, 4, 4, 2, true, rng);
    ParamRegistry reg;
    block.collect("block", reg);
    for (auto& [name, t] : reg.params) {
        if (name.find(".gamma") != std::string::npos) continue;  // keep gamma=1
        for (double& v : t.data()) v = 0.0;
    }
    Tensor x = random_map(8, 7, rng);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        Tensor y = block.forward(x, mode);
        for (long long i = 0; i < y.numel(); ++i)
            CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
}

TEST_CASE("res2 block keeps gradient flow to its input") {
    Rng rng(115);
    Res2Block block(8, 4, 4, 3, true, rng);
    // saturate the SE gates hard negative so the gated path is near dead
    for (double& v : block.se.fc2.w.data()) v = -50.0;
    Tensor x = random_map(8, 6, rng);
    TapeScope scope;
    x.set_requires_grad(true);
    Tensor y = block.forward(x, Mode::Eval);
    Tensor loss = mean_all(mul(y, y));
    backward(scope.tape(), loss);
    double norm = 0.0;
    for (double g : x.grad()) norm += g * g;
    CHECK(norm > 0.0);
}

TEST_CASE("differential attention with lambda zero equals single softmax path") {
    for (int seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 131);
        const int n = 3 + rng.below(3);
        const int c = 8;
        DiffAttention attn(c, 4, rng);
        attn.lambda_ = Tensor::scalar(0.0);
        Tensor z = random_map(n, c, rng);
        Tensor y = attn.forward(z);

        // independent single-path reference on raw arrays
        const int d = c / 4;
        auto matmul_ref = [&](const std::vector<double>& a, const std::vector<double>& w) {
            std::vector<double> out(static_cast<size_t>(n) * c, 0.0);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    for (int k = 0; k < c; ++k)
                        out[static_cast<size_t>(i) * c + j] +=
                            a[static_cast<size_t>(i) * c + k] *
                            w[static_cast<size_t>(k) * c + j];
            return out;
        };
        const auto q = matmul_ref(z.data(), attn.wq1.data());
        const auto k = matmul_ref(z.data(), attn.wk1.data());
        const auto v = matmul_ref(z.data(), attn.wv.data());
        std::vector<double> r(static_cast<size_t>(n) * c, 0.0);
        for (int h = 0; h < 4; ++h) {
            const int off = h * d;
            for (int i = 0; i < n; ++i) {
                std::vector<double> row(static_cast<size_t>(n), 0.0);
                double mx = -1e300;
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int e = 0; e < d; ++e)
                        acc += q[static_cast<size_t>(i) * c + off + e] *
                               k[static_cast<size_t>(j) * c + off + e];
                    row[j] = acc / std::sqrt(static_cast<double>(d));
                    mx = std::max(mx, row[j]);
                }
                double sum = 0.0;
                for (int j = 0; j < n; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                for (int j = 0; j < n; ++j) row[j] /= sum;
                for (int e = 0; e < d; ++e) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j)
                        acc += row[j] * v[static_cast<size_t>(j) * c + off + e];
                    r[static_cast<size_t>(i) * c + off + e] = acc;
                }
            }
        }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                const double expect =
                    r[static_cast<size_t>(i) * c + j] * z.data()[static_cast<size_t>(i) * c + j];
                CHECK(std::abs(y.data()[static_cast<size_t>(i) * c + j] - expect) < 1e-12);
            }
    }
}

TEST_CASE("differential attention degenerate cases") {
    Rng rng(137);
    // equal projections and lambda=1 cancel exactly
    DiffAttention attn(8, 4, rng);
    attn.wq2 = attn.wq1.clone();
    attn.wk2 = attn.wk1.clone();
    attn.lambda_ = Tensor::scalar(1.0);
    Tensor z = random_map(3, 8, rng);
    Tensor y = attn.forward(z);
    for (long long i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i]) < 1e-14);

    // N=1: every softmax collapses to 1, output is (1-lambda) * V ⊙ Z
    DiffAttention attn2(8, 4, rng);
    const double lam = 0.3;
    attn2.lambda_ = Tensor::scalar(lam);
    Tensor z1 = random_map(1, 8, rng);
    Tensor y1 = attn2.forward(z1);
    std::vector<double> v(8, 0.0);
    for (int j = 0; j < 8; ++j)
        for (int k = 0; k < 8; ++k)
            v[j] += z1.data()[k] * attn2.wv.data()[static_cast<size_t>(k) * 8 + j];
    for (int j = 0; j < 8; ++j)
        CHECK(y1[j] == doctest::Approx((1.0 - lam) * v[j] * z1[j]).epsilon(1e-12));

    CHECK_THROWS_AS(DiffAttention(10, 4, rng), HeadIndivisible);
}

TEST_CASE("attentive stats pooling") {
    Rng rng(139);
    AttentiveStatsPooling asp(4, 2, rng);
    zero_all(asp.conv2.w);
    zero_all(asp.conv2.b);  // uniform attention

    Tensor constant = Tensor::full({4, 10}, 2.5);
    Tensor y = asp.forward(constant);
    REQUIRE(y.shape() == Shape{8});
    for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(2.5).epsilon(1e-12));
    for (int i = 4; i < 8; ++i) CHECK(y[i] == doctest::Approx(1e-4).epsilon(1e-12));

    // uniform attention reproduces the plain mean/std
    Tensor x = random_map(4, 12, rng);
    Tensor stats = asp.forward(x);
    for (int c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (int t = 0; t < 12; ++t) mean += x.data()[static_cast<size_t>(c) * 12 + t];
        mean /= 12.0;
        double var = 0.0;
        for (int t = 0; t < 12; ++t) {
            const double d = x.data()[static_cast<size_t>(c) * 12 + t] - mean;
            var += d * d;
        }
        var /= 12.0;
        CHECK(std::abs(stats[c] - mean) < 1e-12);
        CHECK(std::abs(stats[4 + c] - std::sqrt(var)) < 1e-12);
    }

    // attention weights sum to one: probe via a per-channel constant map,
    // whose weighted mean must reproduce the constant for any weights
    AttentiveStatsPooling asp2(4, 2, rng);
    Tensor c2 = Tensor::zeros({4, 7});
    for (int c = 0; c < 4; ++c)
        for (int t = 0; t < 7; ++t) c2.data()[static_cast<size_t>(c) * 7 + t] = 1.0 + c;
    Tensor s2 = asp2.forward(c2);
    for (int c = 0; c < 4; ++c) CHECK(s2[c] == doctest::Approx(1.0 + c).epsilon(1e-12));
}

TEST_CASE("blocks preserve declared shapes") {
    for (int c : {8, 16, 128}) {
        for (int t : {1, 7, 100}) {
            Rng rng(c * 1000 + t);
            Tensor x = random_map(c, t, rng);

            SEBlock se(c, 4, rng);
            CHECK(se.forward(x).shape() == Shape{c, t});
            CHECK(rse_block(x, se).shape() == Shape{c, t});

            RSEAttention rsea(c, 4, rng);
            CHECK(rsea.forward(x).shape() == Shape{c, t});

            MCALayer mca(c, 4, {1, 2, 3}, rng);
            CHECK(mca.forward(x).shape() == Shape{4 * c, t});

            Res2Block block(c, 4, 4, 2, true, rng);
            CHECK(block.forward(x, Mode::Eval).shape() == Shape{c, t});

            DiffAttention attn(c, 4, rng);
            Tensor z = random_map(3, c, rng);
            CHECK(attn.forward(z).shape() == Shape{3, c});
        }
    }
}

TEST_CASE("block gradients agree with finite differences") {
    for (int seed = 1; seed <= 5; ++seed) {
        Rng rng(seed * 211);
        const int c = 8, t = 6;

        SEBlock se(c, 4, rng);
        auto f_se = [&](const Tensor& x) { return mean_all(mul(se.forward(x), se.forward(x))); };
        CHECK(finite_difference_check(f_se, random_map(c, t, rng)) < 1e-4);

        RSEAttention rsea(c, 4, rng);
        auto f_rse = [&](const Tensor& x) { return mean_all(mul(rsea.forward(x), rsea.forward(x))); };
        CHECK(finite_difference_check(f_rse, random_map(c, t, rng)) < 1e-4);

        MCALayer mca(c, 4, {1, 2, 3}, rng);
        Tensor sel = random_map(4 * c, t, rng);
        auto f_mca = [&](const Tensor& x) { return mean_all(mul(mca.forward(x), sel)); };
        // spaced inputs keep the max-pool branch argmax stable under probes
        Tensor spaced = Tensor::zeros({c, t});
        auto perm = rng.permutation(c * t);
        for (long long i = 0; i < spaced.numel(); ++i) spaced.data()[i] = 0.05 * perm[i];
        CHECK(finite_difference_check(f_mca, spaced) < 1e-4);

        DiffAttention attn(c, 4, rng);
        Tensor sel2 = random_map(3, c, rng);
        auto f_attn = [&](const Tensor& z) { return mean_all(mul(attn.forward(z), sel2)); };
        CHECK(finite_difference_check(f_attn, random_map(3, c, rng)) < 1e-4);

        AttentiveStatsPooling asp(c, 4, rng);
        Tensor sel3 = Tensor::zeros({2 * c});
        for (double& v : sel3.data()) v = rng.uniform(-1, 1);
        auto f_asp = [&](const Tensor& x) { return mean_all(mul(asp.forward(x), sel3)); };
        CHECK(finite_difference_check(f_asp, random_map(c, t, rng)) < 1e-4);
    }
}
