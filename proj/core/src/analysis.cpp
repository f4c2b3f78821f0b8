#include "crynet/analysis.hpp"

#include <map>
#include <sstream>

#include "crynet/flops.hpp"

namespace crynet {

long long count_params(Model& model) { return model.registry().total_scalars(); }

std::vector<std::pair<std::string, long long>> params_by_module(Model& model) {
    ParamRegistry reg = model.registry();
    std::vector<std::pair<std::string, long long>> out;
    std::map<std::string, size_t> seen;
    for (const auto& [name, t] : reg.params) {
        const std::string module = name.substr(0, name.find('.'));
        auto it = seen.find(module);
        if (it == seen.end()) {
            seen[module] = out.size();
            out.emplace_back(module, t.numel());
        } else {
            out[it->second].second += t.numel();
        }
    }
    return out;
}

namespace {

using namespace flops;

struct Walk {
    long long total = 0;
    long long conv_trunk = 0;

    void op(long long cost) { total += cost; }
    void trunk_conv(long long cost) {
        total += cost;
        conv_trunk += cost;
    }
};

// Mirrors SEBlock::gate + the closing channel scale.
void walk_se(Walk& w, int c, int r, long long t, bool apply) {
    w.op(gap_cost(c, t));                 // squeeze
    w.op(dense_cost(c, c / r, false, 1));  // fc1
    w.op(c / r);                           // relu
    w.op(dense_cost(c / r, c, false, 1));  // fc2
    w.op(4LL * c);                         // sigmoid
    if (apply) w.op(static_cast<long long>(c) * t);  // gate ⊙ x
}

void walk_bn_eval(Walk& w, int c, long long t) {
    w.op(batch_norm_eval_cost(c, static_cast<long long>(c) * t));
}

void walk_rse(Walk& w, int c, int r, long long t) {
    const long long ct = static_cast<long long>(c) * t;
    walk_se(w, c, r, t, false);  // gate only; reused as the channel attention
    w.op(ct);                    // x ⊙ s
    w.op(ct);                    // x + se(x)
    w.op(mean_channels_cost(t, c));          // temporal attention input
    w.trunk_conv(conv1d_cost(1, 1, 7, t, true));
    w.op(4 * t);                             // sigmoid over scores
    w.op(ct);                                // mask: channel gate
    w.op(ct);                                // mask: time gate
    w.trunk_conv(conv1d_cost(c, c, 1, t, true));  // fuse conv
    w.op(ct);                                // residual add
}

void walk_res2_block(Walk& w, const ModelConfig& cfg, bool rse, long long t) {
    const int c = cfg.channels;
    const long long ct = static_cast<long long>(c) * t;
    if (rse) walk_rse(w, c, cfg.reduction, t);

    w.trunk_conv(conv1d_cost(c, c, 1, t, true));
    w.op(ct);
    walk_bn_eval(w, c, t);

    const int g = c / cfg.res2_scale;
    const long long gt = static_cast<long long>(g) * t;
    for (int i = 1; i < cfg.res2_scale; ++i) {
        if (i >= 2) w.op(gt);  // hierarchical add
        w.trunk_conv(conv1d_cost(g, g, 3, t, true));
        w.op(gt);  // relu
    }
    walk_bn_eval(w, c, t);

    w.trunk_conv(conv1d_cost(c, c, 1, t, true));
    w.op(ct);
    walk_bn_eval(w, c, t);

    walk_se(w, c, cfg.reduction, t, true);
    w.op(ct);  // block residual
}

void walk_mca(Walk& w, const ModelConfig& cfg, long long t) {
    const int c = cfg.channels;
    w.trunk_conv(conv1d_cost(c, c, 1, t, true));   // entry
    w.trunk_conv(conv1d_cost(c, c, 3, t, true));
    w.trunk_conv(conv1d_cost(c, c, 5, t, true));
    w.trunk_conv(conv1d_cost(c, c, 7, t, true));
    w.trunk_conv(conv1d_cost(c, c, 1, t, true));   // pool branch conv
    w.op(max_pool_cost(static_cast<long long>(c) * t, 3));
    walk_se(w, 4 * c, cfg.reduction, t, true);     // 4C-wide gate and scale
}

void walk_diff_attn(Walk& w, int c4, int heads) {
    for (int i = 0; i < 5; ++i) w.op(matmul_cost(1, c4, c4));  // q1,k1,q2,k2,v
    const int d = c4 / heads;
    for (int h = 0; h < heads; ++h) {
        for (int path = 0; path < 2; ++path) {
            w.op(matmul_cost(1, d, 1));  // scores
            w.op(1);                     // 1/sqrt(d) scale
            w.op(softmax_cost(1, 1));
        }
        w.op(1);                 // lambda * A2
        w.op(1);                 // A1 - lambda A2
        w.op(matmul_cost(1, 1, d));
    }
    w.op(c4);  // R ⊙ Z
}

void walk_asp(Walk& w, int c4, int bottleneck, long long t) {
    const long long c4t = static_cast<long long>(c4) * t;
    w.op(conv1d_cost(c4, bottleneck, 1, t, true));
    w.op(static_cast<long long>(bottleneck) * t);  // tanh
    w.op(conv1d_cost(bottleneck, 1, 1, t, true));
    w.op(softmax_cost(1, t));
    w.op(c4t);                    // x ⊙ w
    w.op(sum_time_cost(c4, t));   // weighted mean
    w.op(c4t);                    // x ⊙ x
    w.op(c4t);                    // (x⊙x) ⊙ w
    w.op(sum_time_cost(c4, t));   // weighted second moment
    w.op(c4);                     // mu^2
    w.op(c4);                     // m2 - mu^2
    w.op(2LL * c4);               // floored sqrt
}

}  // namespace

ComplexityReport count_flops(Model& model, int frames) {
    const ModelConfig& cfg = model.config();
    const long long t = frames;
    const int c = cfg.channels;
    Walk w;

    w.trunk_conv(conv1d_cost(cfg.input_coeffs, c, 5, t, true));  // stem
    w.op(static_cast<long long>(c) * t);
    walk_bn_eval(w, c, t);

    const bool rse = model.arch() == Arch::Improved && cfg.use_rse;
    for (int i = 0; i < 3; ++i) walk_res2_block(w, cfg, rse, t);

    if (model.arch() == Arch::Improved) {
        w.trunk_conv(conv1d_cost(3 * c, c, 1, t, true));  // aggregation
        w.op(static_cast<long long>(c) * t);
        walk_bn_eval(w, c, t);

        if (cfg.use_mca)
            walk_mca(w, cfg, t);
        else
            w.trunk_conv(conv1d_cost(c, 4 * c, 1, t, true));

        w.op(gap_cost(4 * c, t));
        if (cfg.use_diff_attn) walk_diff_attn(w, 4 * c, cfg.heads);
        w.op(dense_cost(4 * c, cfg.num_classes, true, 1));
    } else {
        w.trunk_conv(conv1d_cost(3 * c, 4 * c, 1, t, true));
        w.op(static_cast<long long>(4 * c) * t);
        walk_bn_eval(w, 4 * c, t);
        walk_asp(w, 4 * c, c, t);
        w.op(dense_cost(8 * c, cfg.num_classes, true, 1));
    }
    w.op(softmax_cost(1, cfg.num_classes));

    ComplexityReport report;
    report.total_flops = w.total;
    report.conv_trunk_flops = w.conv_trunk;
    report.frames = frames;
    return report;
}

ComplexityReport analyze(Model& model, int frames) {
    ComplexityReport report = count_flops(model, frames);
    report.total_params = count_params(model);
    report.params_by_module = params_by_module(model);
    return report;
}

long long measured_flops(Model& model, int frames) {
    Tensor x = Tensor::zeros({model.config().input_coeffs, frames});
    // value content is irrelevant to the counter, but keep it nontrivial
    for (long long i = 0; i < x.numel(); ++i)
        x.data()[static_cast<size_t>(i)] = 0.001 * static_cast<double>((i * 2654435761ull) % 1997) - 1.0;
    flops::Counter counter;
    {
        flops::CounterScope scope(counter);
        model.forward(x, Mode::Eval);
    }
    return counter.total;
}

std::string complexity_report_text(const ComplexityReport& improved,
                                   const ComplexityReport& baseline) {
    std::ostringstream os;
    char buf[160];
    auto emit = [&](const char* name, const ComplexityReport& r, double ref_params_m,
                    double ref_gflops) {
        os << name << ".params.total = " << r.total_params << "\n";
        std::snprintf(buf, sizeof(buf), "%s.params.millions = %.4f", name,
                      static_cast<double>(r.total_params) / 1e6);
        os << buf << "\n";
        for (const auto& [module, n] : r.params_by_module)
            os << name << ".params." << module << " = " << n << "\n";
        os << name << ".flops.total = " << r.total_flops << "\n";
        std::snprintf(buf, sizeof(buf), "%s.flops.giga = %.4f", name,
                      static_cast<double>(r.total_flops) / 1e9);
        os << buf << "\n";
        os << name << ".flops.conv_trunk = " << r.conv_trunk_flops << "\n";
        os << name << ".frames = " << r.frames << "\n";
        std::snprintf(buf, sizeof(buf), "%s.reference.params_millions = %.2f", name,
                      ref_params_m);
        os << buf << "\n";
        std::snprintf(buf, sizeof(buf), "%s.reference.flops_giga = %.2f", name, ref_gflops);
        os << buf << "\n";
    };
    emit("improved", improved, kReferenceImprovedParamsM, kReferenceImprovedGflops);
    emit("baseline", baseline, kReferenceBaselineParamsM, kReferenceBaselineGflops);
    return os.str();
}

}  // namespace crynet
