#pragma once

#include <string>

#include "crynet/model.hpp"

namespace crynet {

// Flat "key = value" run configuration. Every key has a default; an empty
// file is valid; unknown keys are rejected. '#' starts a comment line.
struct RunConfig {
    ModelConfig model;
    Arch arch = Arch::Improved;

    double lr = 2e-5;
    int epochs = 700;
    int batch = 64;
    std::uint64_t seed = 42;

    double target_seconds = 3.0;
    double silence_threshold_db = -35.0;
    double silence_window_s = 0.05;
    int sample_rate = 16000;
    int n_mels = 26;

    std::string data_root;
    std::string cache_dir;

    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text);
    std::string to_text() const;
};

}  // namespace crynet
