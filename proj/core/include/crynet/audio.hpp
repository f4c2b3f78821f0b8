#pragma once

#include <string>
#include <vector>

#include "crynet/tensor.hpp"

namespace crynet::audio {

struct AudioClip {
    std::vector<double> samples;  // in [-1, 1]
    int sample_rate = 0;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

// RIFF/WAVE reader: PCM, 16-bit, mono or stereo, any sample rate. Values
// decode as s/32768; multi-channel audio is downmixed by channel mean.
AudioClip load_wav(const std::string& path);

// 16-bit mono writer, mainly for fixtures and round trips.
void write_wav16(const std::string& path, const AudioClip& clip);

// Drops fixed windows whose RMS falls more than |threshold_db| below the
// loudest window; survivors are concatenated in order.
AudioClip remove_silence(const AudioClip& clip, double threshold_db = -35.0,
                         double window_s = 0.05);

// Center-crop or symmetric zero-pad to exactly floor(target_s * rate)
// samples; when the pad split is odd the extra sample goes to the right.
AudioClip normalize_length(const AudioClip& clip, double target_s = 3.0);

AudioClip resample_linear(const AudioClip& clip, int target_rate);

struct MfccConfig {
    int n_coeffs = 13;
    int n_mels = 26;
    double frame_s = 0.025;
    double hop_s = 0.010;
    int sample_rate = 16000;    // clips are resampled to this rate first
    double pre_emphasis = 0.97;
    bool normalize = true;      // per-coefficient mean/variance over the clip
};

struct FeatureMap {
    Tensor values;  // {C,T}
    int num_coeffs = 0;
    int num_frames = 0;
    double frame_hop_s = 0.0;
};

// |FFT|^2 / nfft over bins 0..nfft/2. nfft must be a power of two.
std::vector<double> power_spectrum(const std::vector<double>& frame, int nfft);

// Mel filterbank log-energies, {n_mels, T}. Exposed separately so the
// stationarity of the pre-DCT representation can be checked directly.
Tensor log_mel_spectrogram(const AudioClip& clip, const MfccConfig& cfg = {});

FeatureMap mfcc(const AudioClip& clip, const MfccConfig& cfg = {});

// Feature cache: "CRYF", version byte, C and T as u32 LE, then C*T doubles
// LE, row-major by channel.
void save_feature_map(const std::string& path, const FeatureMap& fm);
FeatureMap load_feature_map(const std::string& path);

}  // namespace crynet::audio
