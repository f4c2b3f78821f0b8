#include "crynet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "crynet/audio.hpp"

namespace crynet {

namespace fs = std::filesystem;

long long DatasetIndex::count(bool train) const {
    long long n = 0;
    for (const auto& e : entries)
        if (e.is_train == train) ++n;
    return n;
}

DatasetIndex scan_by_class_dirs(const std::string& root, const std::string& extension) {
    if (!fs::is_directory(root)) throw FileNotFound("dataset root not found: " + root);
    DatasetIndex index;
    for (size_t label = 0; label < kEmotionNames.size(); ++label) {
        const fs::path dir = fs::path(root) / kEmotionNames[label];
        if (!fs::is_directory(dir)) continue;
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == extension)
                files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        for (auto& f : files)
            index.entries.push_back({std::move(f), static_cast<int>(label), true});
    }
    return index;
}

DatasetIndex read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("manifest not found: " + path);
    DatasetIndex index;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const size_t comma = line.rfind(',');
        if (comma == std::string::npos)
            throw ConfigInvalid("manifest line missing label: " + line);
        std::string file = line.substr(0, comma);
        std::string label = line.substr(comma + 1);
        auto strip = [](std::string& s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            s = a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        strip(file);
        strip(label);
        index.entries.push_back({file, emotion_from_string(label), true});
    }
    return index;
}

DatasetIndex split_dataset(DatasetIndex index, std::uint64_t seed) {
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < index.entries.size(); ++i)
        by_class[index.entries[i].label].push_back(i);

    Rng rng(seed);
    for (auto& [label, members] : by_class) {
        const int n = static_cast<int>(members.size());
        if (n < 5)
            throw EmptyClass("class '" + std::string(emotion_name(label)) + "' has " +
                             std::to_string(n) + " samples; need at least 5 for an 8:2 split");
        // round(n/5) test samples keeps the ratio within one sample per class
        const int n_test = static_cast<int>(std::llround(n / 5.0));
        std::vector<int> order = rng.permutation(n);
        for (int i = 0; i < n; ++i)
            index.entries[members[static_cast<size_t>(order[i])]].is_train = i >= n_test;
    }
    return index;
}

Sample load_sample(const DatasetEntry& entry) {
    audio::FeatureMap fm = audio::load_feature_map(entry.path);
    return {fm.values, entry.label};
}

std::vector<Sample> load_split(const DatasetIndex& index, bool train) {
    std::vector<Sample> out;
    for (const auto& e : index.entries)
        if (e.is_train == train) out.push_back(load_sample(e));
    return out;
}

void Adam::step(std::vector<std::pair<std::string, Tensor>>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].second.data().size(), 0.0);
            v_[i].assign(params[i].second.data().size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ShapeMismatch("optimizer state size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].second;
        if (m_[i].size() != p.data().size())
            throw ShapeMismatch("optimizer moment shape mismatch for " + params[i].first);
        const std::vector<double> g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        auto& w = p.data();
        for (size_t j = 0; j < w.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

long long ConfusionMatrix::total() const {
    long long n = 0;
    for (long long c : counts) n += c;
    return n;
}

long long ConfusionMatrix::trace() const {
    long long n = 0;
    for (int i = 0; i < num_classes; ++i) n += at(i, i);
    return n;
}

long long ConfusionMatrix::row_sum(int truth) const {
    long long n = 0;
    for (int j = 0; j < num_classes; ++j) n += at(truth, j);
    return n;
}

double ConfusionMatrix::accuracy() const {
    const long long n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

std::vector<double> ConfusionMatrix::row_normalized() const {
    std::vector<double> out(counts.size(), 0.0);
    for (int i = 0; i < num_classes; ++i) {
        const long long rs = row_sum(i);
        if (rs == 0) continue;
        for (int j = 0; j < num_classes; ++j)
            out[static_cast<size_t>(i) * num_classes + j] =
                100.0 * static_cast<double>(at(i, j)) / static_cast<double>(rs);
    }
    return out;
}

ConfusionMatrix evaluate(Model& model, const std::vector<Sample>& test_set) {
    ConfusionMatrix cm(model.config().num_classes);
    for (const Sample& s : test_set) {
        Tensor p = model.forward(s.features, Mode::Eval);
        int best = 0;  // ties break to the lowest class id
        for (int k = 1; k < model.config().num_classes; ++k)
            if (p[k] > p[best]) best = k;
        ++cm.at(s.label, best);
    }
    return cm;
}

namespace {

const char* class_header_name(const ConfusionMatrix& cm, int j) {
    return cm.num_classes == 6 ? kEmotionNames[static_cast<size_t>(j)] : nullptr;
}

void write_grid(const std::string& path, const ConfusionMatrix& cm, bool percent) {
    std::ofstream out(path);
    if (!out) throw FileNotFound("cannot open for writing: " + path);
    out << "true\\pred";
    for (int j = 0; j < cm.num_classes; ++j) {
        if (const char* name = class_header_name(cm, j))
            out << "," << name;
        else
            out << ",class" << j;
    }
    out << "\n";
    const std::vector<double> norm = percent ? cm.row_normalized() : std::vector<double>();
    for (int i = 0; i < cm.num_classes; ++i) {
        if (const char* name = class_header_name(cm, i))
            out << name;
        else
            out << "class" << i;
        for (int j = 0; j < cm.num_classes; ++j) {
            if (percent) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.2f",
                              norm[static_cast<size_t>(i) * cm.num_classes + j]);
                out << "," << buf;
            } else {
                out << "," << cm.at(i, j);
            }
        }
        out << "\n";
    }
}

}  // namespace

void write_confusion_counts(const std::string& path, const ConfusionMatrix& cm) {
    write_grid(path, cm, false);
}

void write_confusion_percent(const std::string& path, const ConfusionMatrix& cm) {
    write_grid(path, cm, true);
}

void write_epoch_log(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<EpochLog>& epochs) {
    std::ofstream out(path);
    if (!out) throw FileNotFound("cannot open for writing: " + path);
    for (const auto& line : header) out << "# " << line << "\n";
    out << "epoch,train_loss,test_acc,wall_seconds\n";
    char buf[128];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.3f\n", e.epoch, e.train_loss,
                      e.test_acc, e.wall_seconds);
        out << buf;
    }
}

TrainResult train(Model& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& test_set, const TrainOptions& opt) {
    if (train_set.empty()) throw ConfigInvalid("empty training set");
    const int c = train_set[0].features.dim(0);
    const int t = train_set[0].features.dim(1);
    for (const Sample& s : train_set)
        if (s.features.dim(0) != c || s.features.dim(1) != t)
            throw ShapeMismatch("training features must share one shape");

    ParamRegistry reg = model.registry();
    for (auto& [name, tns] : reg.params) tns.set_requires_grad(true);
    Adam adam(opt.lr);
    Rng shuffle_rng(opt.seed);

    TrainResult result;
    double best_acc = -1.0;
    const auto t0 = std::chrono::steady_clock::now();

    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::vector<int> order = shuffle_rng.permutation(static_cast<int>(train_set.size()));
        double loss_sum = 0.0;
        int batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(opt.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(opt.batch_size));
            const int b = static_cast<int>(end - begin);
            Tensor batch = Tensor::zeros({b, c, t});
            std::vector<int> labels(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) {
                const Sample& s = train_set[static_cast<size_t>(order[begin + static_cast<size_t>(i)])];
                std::copy(s.features.data().begin(), s.features.data().end(),
                          batch.data().begin() + static_cast<long long>(i) * c * t);
                labels[static_cast<size_t>(i)] = s.label;
            }

            double loss_value;
            {
                TapeScope scope;
                Tensor logits = model.forward_logits(batch, Mode::Train);
                Tensor loss = cross_entropy_logits(logits, labels);
                loss_value = loss.value();
                if (!std::isfinite(loss_value))
                    throw NaNLoss("non-finite loss at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(batches));
                for (auto& [name, tns] : reg.params) tns.zero_grad();
                backward(scope.tape(), loss);
            }
            adam.step(reg.params);
            result.step_losses.push_back(loss_value);
            loss_sum += loss_value;
            ++batches;
        }

        const double test_acc = test_set.empty() ? 0.0 : evaluate(model, test_set).accuracy();
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.epochs.push_back({epoch, loss_sum / batches, test_acc, wall});

        if (!opt.checkpoint_path.empty() && test_acc > best_acc) {
            best_acc = test_acc;
            checkpoint_save(model, opt.checkpoint_path + ".best");
        }
    }
    result.best_test_acc = std::max(best_acc, 0.0);

    if (!opt.checkpoint_path.empty()) checkpoint_save(model, opt.checkpoint_path);
    if (!opt.log_path.empty()) {
        std::vector<std::string> header;
        ParamRegistry audit = model.registry();
        header.push_back("params.total = " + std::to_string(audit.total_scalars()));
        for (const char* ns : {"mca", "rse", "diff_attn"})
            header.push_back(std::string("params.namespace.") + ns + " = " +
                             (audit.has_namespace(ns) ? "present" : "absent"));
        header.push_back("seed = " + std::to_string(opt.seed));
        header.push_back("lr = " + std::to_string(opt.lr));
        header.push_back("batch = " + std::to_string(opt.batch_size));
        write_epoch_log(opt.log_path, header, result.epochs);
    }
    return result;
}

}  // namespace crynet
