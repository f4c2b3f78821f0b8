#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crynet/model.hpp"

namespace crynet {

// Parameter and FLOP accounting for a single-sample eval-mode forward.
// FLOP rules are the ones documented in flops.hpp (one multiply-add = 2).
// conv_trunk_flops covers only the convolutions up to the pooling stage;
// those scale exactly linearly in the frame count.
struct ComplexityReport {
    long long total_params = 0;
    std::vector<std::pair<std::string, long long>> params_by_module;
    long long total_flops = 0;
    long long conv_trunk_flops = 0;
    int frames = 0;
};

// Trainable scalars only; running statistics excluded, lambda included.
long long count_params(Model& model);
std::vector<std::pair<std::string, long long>> params_by_module(Model& model);

// Analytic walk over the model structure at the given frame count.
ComplexityReport count_flops(Model& model, int frames);

ComplexityReport analyze(Model& model, int frames);

// Executes one eval forward of a {coeffs, frames} input with the runtime
// FLOP counter enabled. Independent of the analytic walk; the two must
// agree exactly.
long long measured_flops(Model& model, int frames);

// Reference complexity targets for this architecture family at 298 frames
// (millions of parameters / GFLOPs); the analyzer prints its results next
// to these for orientation.
inline constexpr double kReferenceImprovedParamsM = 1.43;
inline constexpr double kReferenceBaselineParamsM = 0.84;
inline constexpr double kReferenceImprovedGflops = 0.32;
inline constexpr double kReferenceBaselineGflops = 0.20;

std::string complexity_report_text(const ComplexityReport& improved,
                                   const ComplexityReport& baseline);

}  // namespace crynet
