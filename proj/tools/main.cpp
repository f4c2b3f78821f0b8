// Command-line front end: feature extraction, training, evaluation,
// single-clip inference, and complexity analysis.
//
// Exit codes: 0 success, 1 input/config error, 2 domain error (silent clip).

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "crynet/analysis.hpp"
#include "crynet/audio.hpp"
#include "crynet/config.hpp"
#include "crynet/train.hpp"

namespace fs = std::filesystem;
using namespace crynet;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> ablations;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_ablate = true) {
    cmd->add_option("-c,--config", args.config_path,
                    "Run configuration file (key = value lines)");
    cmd->add_option("--seed", args.seed, "Seed for all randomness (default 42)");
    if (with_ablate)
        cmd->add_option("--ablate", args.ablations,
                        "Remove a module: mca, rse or diffattn (repeatable)")
            ->check(CLI::IsMember({"mca", "rse", "diffattn"}));
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg =
        args.config_path.empty() ? RunConfig() : RunConfig::from_file(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    for (const std::string& a : args.ablations) {
        if (a == "mca") cfg.model.use_mca = false;
        if (a == "rse") cfg.model.use_rse = false;
        if (a == "diffattn") cfg.model.use_diff_attn = false;
    }
    return cfg;
}

audio::MfccConfig mfcc_config(const RunConfig& cfg) {
    audio::MfccConfig mc;
    mc.n_coeffs = cfg.model.input_coeffs;
    mc.n_mels = cfg.n_mels;
    mc.sample_rate = cfg.sample_rate;
    return mc;
}

Model build_model(const RunConfig& cfg) {
    return cfg.arch == Arch::Improved ? build_improved(cfg.model, cfg.seed)
                                      : build_baseline(cfg.model, cfg.seed);
}

int cmd_features(const RunConfig& cfg, const std::string& manifest) {
    DatasetIndex index = manifest.empty() ? scan_by_class_dirs(cfg.data_root, ".wav")
                                          : read_manifest(manifest);
    if (index.entries.empty()) {
        std::cerr << "features: no wav files found under " << cfg.data_root << "\n";
        return 1;
    }
    if (cfg.cache_dir.empty()) {
        std::cerr << "features: cache_dir is not set\n";
        return 1;
    }
    const audio::MfccConfig mc = mfcc_config(cfg);
    long long processed = 0, skipped = 0;
    for (const DatasetEntry& entry : index.entries) {
        try {
            audio::AudioClip clip = audio::load_wav(entry.path);
            clip = audio::remove_silence(clip, cfg.silence_threshold_db, cfg.silence_window_s);
            clip = audio::normalize_length(clip, cfg.target_seconds);
            audio::FeatureMap fm = audio::mfcc(clip, mc);
            const fs::path out_dir = fs::path(cfg.cache_dir) / emotion_name(entry.label);
            fs::create_directories(out_dir);
            const fs::path out =
                out_dir / (fs::path(entry.path).stem().string() + ".cryf");
            audio::save_feature_map(out.string(), fm);
            ++processed;
        } catch (const Error& e) {
            std::cerr << "features: skipping " << entry.path << ": " << e.what() << "\n";
            ++skipped;
        }
    }
    std::printf("features: processed %lld clips, skipped %lld, cache %s\n", processed,
                skipped, cfg.cache_dir.c_str());
    return processed > 0 ? 0 : 1;
}

int cmd_train(const RunConfig& cfg, const std::string& out_path, const std::string& log_path) {
    DatasetIndex index = scan_by_class_dirs(cfg.cache_dir, ".cryf");
    if (index.entries.empty()) {
        std::cerr << "train: no cached features under " << cfg.cache_dir << "\n";
        return 1;
    }
    index = split_dataset(index, cfg.seed);
    std::vector<Sample> train_set = load_split(index, true);
    std::vector<Sample> test_set = load_split(index, false);
    std::printf("train: %zu train / %zu test clips\n", train_set.size(), test_set.size());

    Model model = build_model(cfg);
    TrainOptions opt;
    opt.lr = cfg.lr;
    opt.epochs = cfg.epochs;
    opt.batch_size = cfg.batch;
    opt.seed = cfg.seed;
    opt.checkpoint_path = out_path;
    opt.log_path = log_path.empty() ? out_path + ".log" : log_path;
    TrainResult result = train(model, train_set, test_set, opt);
    std::printf("train: final test accuracy %.4f (best %.4f), checkpoint %s\n",
                result.epochs.empty() ? 0.0 : result.epochs.back().test_acc,
                result.best_test_acc, out_path.c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg, bool config_given, const std::string& ckpt,
             const std::string& out_dir) {
    Model model = checkpoint_load(ckpt);
    if (config_given && !(model.config() == cfg.model)) {
        std::cerr << "eval: checkpoint config disagrees with --config; the checkpoint "
                     "defines the architecture\n";
        return 1;
    }
    DatasetIndex index = scan_by_class_dirs(cfg.cache_dir, ".cryf");
    if (index.entries.empty()) {
        std::cerr << "eval: no cached features under " << cfg.cache_dir << "\n";
        return 1;
    }
    index = split_dataset(index, cfg.seed);
    std::vector<Sample> test_set = load_split(index, false);
    ConfusionMatrix cm = evaluate(model, test_set);
    fs::create_directories(out_dir);
    const std::string counts = (fs::path(out_dir) / "confusion_counts.csv").string();
    const std::string percent = (fs::path(out_dir) / "confusion_percent.csv").string();
    write_confusion_counts(counts, cm);
    write_confusion_percent(percent, cm);
    std::printf("eval: accuracy %.4f over %lld clips; matrices in %s\n", cm.accuracy(),
                cm.total(), out_dir.c_str());
    return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& ckpt, const std::string& wav) {
    Model model = checkpoint_load(ckpt);
    audio::AudioClip clip = audio::load_wav(wav);
    clip = audio::remove_silence(clip, cfg.silence_threshold_db, cfg.silence_window_s);
    clip = audio::normalize_length(clip, cfg.target_seconds);
    audio::MfccConfig mc = mfcc_config(cfg);
    mc.n_coeffs = model.config().input_coeffs;
    audio::FeatureMap fm = audio::mfcc(clip, mc);
    Tensor probs = model.forward(fm.values, Mode::Eval);
    int best = 0;
    for (int k = 1; k < model.config().num_classes; ++k)
        if (probs[k] > probs[best]) best = k;
    std::printf("label=%s", emotion_name(best));
    for (int k = 0; k < model.config().num_classes; ++k)
        std::printf(" %s=%.6f", emotion_name(k), probs[k]);
    std::printf("\n");
    return 0;
}

int cmd_analyze(const RunConfig& cfg, int frames) {
    Model improved = build_improved(cfg.model, cfg.seed);
    Model baseline = build_baseline(cfg.model, cfg.seed);
    const ComplexityReport ri = analyze(improved, frames);
    const ComplexityReport rb = analyze(baseline, frames);
    std::cout << complexity_report_text(ri, rb);
    std::printf("comparison.params.improved_exceeds_baseline = %s\n",
                ri.total_params > rb.total_params ? "true" : "false");
    const ComplexityReport ri2 = count_flops(improved, 2 * frames);
    std::printf("comparison.conv_trunk_ratio_at_double_frames = %.4f\n",
                static_cast<double>(ri2.conv_trunk_flops) /
                    static_cast<double>(ri.conv_trunk_flops));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"infant cry emotion recognition pipeline"};
    app.require_subcommand(1);

    CommonArgs feat_args, train_args, eval_args, infer_args, analyze_args;

    auto* features = app.add_subcommand("features", "Convert a wav dataset into a feature cache");
    std::string data_root, cache_dir, manifest;
    features->add_option("--data", data_root, "Dataset root: <root>/<label>/<clip>.wav");
    features->add_option("--manifest", manifest, "Alternative 'path,label' manifest file");
    features->add_option("--cache", cache_dir, "Feature cache output directory")->required();
    add_common(features, feat_args, false);

    auto* train_cmd = app.add_subcommand("train", "Train on a feature cache");
    std::string train_cache, train_out, train_log;
    int opt_epochs = -1, opt_batch = -1;
    double opt_lr = -1.0;
    bool baseline_flag = false;
    train_cmd->add_option("--cache", train_cache, "Feature cache directory")->required();
    train_cmd->add_option("--out", train_out, "Checkpoint output path")->required();
    train_cmd->add_option("--log", train_log, "Epoch log path (default <out>.log)");
    train_cmd->add_option("--epochs", opt_epochs, "Override epoch count (default 700)");
    train_cmd->add_option("--batch", opt_batch, "Override batch size (default 64)");
    train_cmd->add_option("--lr", opt_lr, "Override learning rate (default 2e-5)");
    train_cmd->add_flag("--baseline", baseline_flag, "Train the reference architecture");
    add_common(train_cmd, train_args);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    std::string eval_ckpt, eval_cache, eval_out = ".";
    eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
    eval_cmd->add_option("--cache", eval_cache, "Feature cache directory")->required();
    eval_cmd->add_option("--out-dir", eval_out, "Directory for confusion matrix files");
    add_common(eval_cmd, eval_args, false);

    auto* infer_cmd = app.add_subcommand("infer", "Classify one wav clip");
    std::string infer_ckpt, infer_wav;
    infer_cmd->add_option("--ckpt", infer_ckpt, "Checkpoint path")->required();
    infer_cmd->add_option("--wav", infer_wav, "Input clip")->required();
    add_common(infer_cmd, infer_args, false);

    auto* analyze_cmd = app.add_subcommand("analyze", "Parameter and FLOP report");
    int frames = 298;
    analyze_cmd->add_option("--frames", frames, "Frame count for the FLOP walk (default 298)");
    add_common(analyze_cmd, analyze_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (features->parsed()) {
            RunConfig cfg = resolve_config(feat_args);
            if (!data_root.empty()) cfg.data_root = data_root;
            if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
            return cmd_features(cfg, manifest);
        }
        if (train_cmd->parsed()) {
            RunConfig cfg = resolve_config(train_args);
            cfg.cache_dir = train_cache;
            if (opt_epochs >= 0) cfg.epochs = opt_epochs;
            if (opt_batch > 0) cfg.batch = opt_batch;
            if (opt_lr >= 0.0) cfg.lr = opt_lr;
            if (baseline_flag) cfg.arch = Arch::Baseline;
            return cmd_train(cfg, train_out, train_log);
        }
        if (eval_cmd->parsed()) {
            RunConfig cfg = resolve_config(eval_args);
            cfg.cache_dir = eval_cache;
            return cmd_eval(cfg, !eval_args.config_path.empty(), eval_ckpt, eval_out);
        }
        if (infer_cmd->parsed()) {
            RunConfig cfg = resolve_config(infer_args);
            return cmd_infer(cfg, infer_ckpt, infer_wav);
        }
        if (analyze_cmd->parsed()) {
            RunConfig cfg = resolve_config(analyze_args);
            return cmd_analyze(cfg, frames);
        }
    } catch (const AllSilent& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
