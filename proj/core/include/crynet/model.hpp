#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "crynet/blocks.hpp"

namespace crynet {

// Class ids are fixed alphabetically; the encoding is part of every file
// format that stores labels.
inline constexpr std::array<const char*, 6> kEmotionNames = {
    "awake", "diaper", "hug", "hungry", "sleepy", "uncomfortable"};

int emotion_from_string(const std::string& name);  // throws LabelOutOfRange
const char* emotion_name(int id);

enum class Arch { Improved, Baseline };

struct ModelConfig {
    int input_coeffs = 13;
    int channels = 128;
    int num_classes = 6;
    std::array<int, 3> block_dilations = {2, 3, 4};
    std::array<int, 3> mca_dilations = {1, 2, 3};
    int reduction = 4;
    int res2_scale = 4;
    int heads = 4;
    bool use_mca = true;
    bool use_rse = true;
    bool use_diff_attn = true;
    int target_frames = 298;

    void validate() const;  // throws ConfigInvalid
    bool operator==(const ModelConfig&) const = default;
};

// Trunk: stem conv -> three Res2 blocks with cross-layer concatenation and
// a 1x1 reduction conv -> four-branch channel-attention expansion to 4C ->
// global average pooling. Head: differential attention over the pooled
// {N,C} rows, then a dense softmax classifier. The baseline swaps the
// expansion and pooled head for attentive statistics pooling.
class Model {
public:
    Model(const ModelConfig& cfg, Arch arch, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return cfg_; }
    Arch arch() const { return arch_; }

    // {B,coeffs,T} -> {B,classes} logits; a {coeffs,T} input yields {classes}.
    Tensor forward_logits(const Tensor& x, Mode mode);
    // softmax over classes; rows sum to 1 within 1e-12
    Tensor forward(const Tensor& x, Mode mode);

    ParamRegistry registry();

    // layers are public for tests and the complexity analyzer
    Conv1dLayer stem;
    BatchNorm1d stem_bn;
    std::vector<Res2Block> blocks;
    Conv1dLayer agg;
    BatchNorm1d agg_bn;
    std::optional<MCALayer> mca;
    std::optional<Conv1dLayer> expand;  // plain 1x1 substitute when MCA is ablated
    std::optional<DiffAttention> diff_attn;
    std::optional<AttentiveStatsPooling> asp;
    DenseLayer head;

private:
    ModelConfig cfg_;
    Arch arch_;
};

Model build_improved(const ModelConfig& cfg, std::uint64_t seed);
Model build_baseline(const ModelConfig& cfg, std::uint64_t seed);

// Checkpoint: "CRYM", u16 version, canonical config text block, then every
// named parameter and running statistic with shape and raw doubles (LE).
void checkpoint_save(Model& model, const std::string& path);
Model checkpoint_load(const std::string& path);

std::string config_to_text(const ModelConfig& cfg, Arch arch);
std::pair<ModelConfig, Arch> config_from_text(const std::string& text);

}  // namespace crynet
