#pragma once

#include <string>
#include <vector>

#include "crynet/model.hpp"

namespace crynet {

struct DatasetEntry {
    std::string path;
    int label = -1;
    bool is_train = true;
};

struct DatasetIndex {
    std::vector<DatasetEntry> entries;
    long long count(bool train) const;
};

// <root>/<label>/<clip><extension>; unknown directory names are skipped.
DatasetIndex scan_by_class_dirs(const std::string& root, const std::string& extension);
// one "path,label" pair per line; '#' lines are comments
DatasetIndex read_manifest(const std::string& path);

// Stratified per-class 80/20 split, seeded shuffle, deterministic.
// Classes with fewer than 5 samples cannot honor the ratio.
DatasetIndex split_dataset(DatasetIndex index, std::uint64_t seed);

struct Sample {
    Tensor features;  // {C,T}
    int label = -1;
};

Sample load_sample(const DatasetEntry& entry);
std::vector<Sample> load_split(const DatasetIndex& index, bool train);

// Adam with bias correction over a model's trainable parameters. Moments
// mirror parameter shapes; step() consumes the gradients currently stored
// on the tensors.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<std::pair<std::string, Tensor>>& params);
    long long steps() const { return t_; }
    double lr() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<long long> counts;  // row-major, rows = true class

    explicit ConfusionMatrix(int k) : num_classes(k), counts(static_cast<size_t>(k) * k, 0) {}
    long long& at(int truth, int pred) {
        return counts[static_cast<size_t>(truth) * num_classes + pred];
    }
    long long at(int truth, int pred) const {
        return counts[static_cast<size_t>(truth) * num_classes + pred];
    }
    long long total() const;
    long long trace() const;
    long long row_sum(int truth) const;
    double accuracy() const;  // trace/total
    // row percentages, 0 when a class has no test samples
    std::vector<double> row_normalized() const;
};

ConfusionMatrix evaluate(Model& model, const std::vector<Sample>& test_set);

void write_confusion_counts(const std::string& path, const ConfusionMatrix& cm);
void write_confusion_percent(const std::string& path, const ConfusionMatrix& cm);

struct TrainOptions {
    double lr = 2e-5;  // stated power-of-two rate reads as 2^-5; see README
    int epochs = 700;
    int batch_size = 64;
    std::uint64_t seed = 42;
    std::string log_path;         // epoch csv, empty to skip
    std::string checkpoint_path;  // final; ".best" suffix tracks best accuracy
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::vector<double> step_losses;
    double best_test_acc = 0.0;
};

// Seeded shuffling each epoch, full batches plus the kept remainder,
// cross-entropy on logits, one Adam step per batch. Non-finite loss aborts.
TrainResult train(Model& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& test_set, const TrainOptions& opt);

// "# key = value" header lines then one "epoch,train_loss,test_acc,wall_seconds"
// row per epoch; doubles carry full precision.
void write_epoch_log(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<EpochLog>& epochs);

}  // namespace crynet
