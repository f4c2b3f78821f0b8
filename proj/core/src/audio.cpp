#include "crynet/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace crynet::audio {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CorruptHeader("unexpected end of file");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw CorruptHeader("unexpected end of file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace

AudioClip load_wav(const std::string& path) {
    if (!std::filesystem::exists(path)) throw FileNotFound(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound(path);

    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw CorruptHeader("missing RIFF tag");
    read_u32(in);  // riff size, unreliable in the wild
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw CorruptHeader("missing WAVE tag");

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::vector<char> payload;

    while (in.read(tag, 4)) {
        const std::uint32_t size = read_u32(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (size < 16) throw CorruptHeader("fmt chunk too small");
            format = read_u16(in);
            channels = read_u16(in);
            rate = read_u32(in);
            read_u32(in);  // byte rate
            read_u16(in);  // block align
            bits = read_u16(in);
            in.ignore(size - 16);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            payload.resize(size);
            in.read(payload.data(), size);
            if (static_cast<std::uint32_t>(in.gcount()) != size)
                throw CorruptHeader("data chunk truncated");
            break;
        } else {
            in.ignore(size + (size & 1));  // chunks are word aligned
        }
    }
    if (!have_fmt) throw CorruptHeader("no fmt chunk");
    if (payload.empty()) throw CorruptHeader("no data chunk");
    if (format != 1) throw UnsupportedFormat("only PCM wav is supported");
    if (bits != 16) throw UnsupportedFormat("only 16-bit samples are supported");
    if (channels < 1) throw CorruptHeader("zero channels");
    if (rate == 0) throw CorruptHeader("zero sample rate");

    const size_t frames = payload.size() / (2u * channels);
    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.samples.resize(frames);
    const auto* raw = reinterpret_cast<const unsigned char*>(payload.data());
    for (size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            const size_t off = (i * channels + c) * 2;
            const std::int16_t s =
                static_cast<std::int16_t>(raw[off] | (raw[off + 1] << 8));
            acc += static_cast<double>(s) / 32768.0;
        }
        clip.samples[i] = acc / channels;
    }
    return clip;
}

void write_wav16(const std::string& path, const AudioClip& clip) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileNotFound("cannot open for writing: " + path);
    const std::uint32_t data_size = static_cast<std::uint32_t>(clip.samples.size() * 2);
    out.write("RIFF", 4);
    write_u32(out, 36 + data_size);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, 1);  // PCM
    write_u16(out, 1);  // mono
    write_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
    write_u32(out, static_cast<std::uint32_t>(clip.sample_rate * 2));
    write_u16(out, 2);
    write_u16(out, 16);
    out.write("data", 4);
    write_u32(out, data_size);
    for (double v : clip.samples) {
        const double clamped = std::clamp(v, -1.0, 1.0);
        const std::int16_t s = static_cast<std::int16_t>(std::lrint(clamped * 32767.0));
        write_u16(out, static_cast<std::uint16_t>(s));
    }
}

AudioClip remove_silence(const AudioClip& clip, double threshold_db, double window_s) {
    if (window_s <= 0.0) throw ShapeMismatch("silence window must be positive");
    const size_t win =
        std::max<size_t>(1, static_cast<size_t>(window_s * clip.sample_rate));
    const size_t n = clip.samples.size();
    const size_t num_win = (n + win - 1) / win;

    std::vector<double> rms(num_win, 0.0);
    double peak = 0.0;
    for (size_t w = 0; w < num_win; ++w) {
        const size_t begin = w * win;
        const size_t end = std::min(begin + win, n);
        double acc = 0.0;
        for (size_t i = begin; i < end; ++i) acc += clip.samples[i] * clip.samples[i];
        rms[w] = std::sqrt(acc / static_cast<double>(end - begin));
        peak = std::max(peak, rms[w]);
    }
    if (peak <= 0.0) throw AllSilent("clip has no energy above zero");

    const double cutoff = peak * std::pow(10.0, threshold_db / 20.0);
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    for (size_t w = 0; w < num_win; ++w) {
        if (rms[w] < cutoff) continue;
        const size_t begin = w * win;
        const size_t end = std::min(begin + win, n);
        out.samples.insert(out.samples.end(), clip.samples.begin() + begin,
                           clip.samples.begin() + end);
    }
    if (out.samples.empty()) throw AllSilent("every window fell below the threshold");
    return out;
}

AudioClip normalize_length(const AudioClip& clip, double target_s) {
    const size_t target = static_cast<size_t>(target_s * clip.sample_rate);
    const size_t n = clip.samples.size();
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    if (n == target) {
        out.samples = clip.samples;
    } else if (n > target) {
        const size_t start = (n - target) / 2;
        out.samples.assign(clip.samples.begin() + start,
                           clip.samples.begin() + start + target);
    } else {
        const size_t pad_left = (target - n) / 2;
        out.samples.assign(target, 0.0);
        std::copy(clip.samples.begin(), clip.samples.end(), out.samples.begin() + pad_left);
    }
    return out;
}

AudioClip resample_linear(const AudioClip& clip, int target_rate) {
    if (clip.sample_rate == target_rate) return clip;
    const size_t n = clip.samples.size();
    AudioClip out;
    out.sample_rate = target_rate;
    if (n == 0) return out;
    if (n == 1) {
        out.samples.assign(1, clip.samples[0]);
        return out;
    }
    const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
    const size_t n_out = static_cast<size_t>(static_cast<double>(n - 1) / ratio) + 1;
    out.samples.resize(n_out);
    for (size_t i = 0; i < n_out; ++i) {
        const double pos = i * ratio;
        const size_t i0 = std::min(static_cast<size_t>(pos), n - 2);
        const double frac = pos - static_cast<double>(i0);
        out.samples[i] = clip.samples[i0] * (1.0 - frac) + clip.samples[i0 + 1] * frac;
    }
    return out;
}

namespace {

void fft_inplace(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters over FFT bins, spanning 0 Hz to Nyquist.
std::vector<std::vector<double>> mel_filterbank(int n_mels, int nfft, int rate) {
    const int n_bins = nfft / 2 + 1;
    const double mel_max = hz_to_mel(rate / 2.0);
    std::vector<double> bin_points(static_cast<size_t>(n_mels) + 2);
    for (int m = 0; m < n_mels + 2; ++m) {
        const double hz = mel_to_hz(mel_max * m / (n_mels + 1));
        bin_points[m] = std::floor((nfft + 1) * hz / rate);
    }
    std::vector<std::vector<double>> bank(n_mels, std::vector<double>(n_bins, 0.0));
    for (int m = 0; m < n_mels; ++m) {
        const double lo = bin_points[m], mid = bin_points[m + 1], hi = bin_points[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            if (k > lo && k <= mid && mid > lo)
                bank[m][static_cast<size_t>(k)] = (k - lo) / (mid - lo);
            else if (k > mid && k < hi && hi > mid)
                bank[m][static_cast<size_t>(k)] = (hi - k) / (hi - mid);
        }
    }
    return bank;
}

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace

std::vector<double> power_spectrum(const std::vector<double>& frame, int nfft) {
    if (nfft & (nfft - 1)) throw ShapeMismatch("nfft must be a power of two");
    std::vector<std::complex<double>> buf(static_cast<size_t>(nfft), {0.0, 0.0});
    for (size_t i = 0; i < frame.size() && i < static_cast<size_t>(nfft); ++i)
        buf[i] = {frame[i], 0.0};
    fft_inplace(buf);
    std::vector<double> power(static_cast<size_t>(nfft / 2 + 1));
    for (size_t k = 0; k < power.size(); ++k)
        power[k] = std::norm(buf[k]) / static_cast<double>(nfft);
    return power;
}

Tensor log_mel_spectrogram(const AudioClip& clip, const MfccConfig& cfg) {
    AudioClip rs = resample_linear(clip, cfg.sample_rate);

    // Pre-emphasis; the first sample uses itself as predecessor so a
    // constant signal stays constant.
    std::vector<double> x = rs.samples;
    for (size_t i = x.size(); i-- > 0;) {
        const double prev = i > 0 ? x[i - 1] : x[0];
        x[i] -= cfg.pre_emphasis * prev;
    }

    const int frame_len = static_cast<int>(cfg.frame_s * cfg.sample_rate);
    const int hop_len = static_cast<int>(cfg.hop_s * cfg.sample_rate);
    if (static_cast<int>(x.size()) < frame_len)
        throw TooShort("clip shorter than one analysis frame");
    const int n_frames = 1 + (static_cast<int>(x.size()) - frame_len) / hop_len;
    const int nfft = next_pow2(frame_len);

    std::vector<double> window(static_cast<size_t>(frame_len));
    for (int i = 0; i < frame_len; ++i)
        window[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (frame_len - 1));

    const auto bank = mel_filterbank(cfg.n_mels, nfft, cfg.sample_rate);
    Tensor out = Tensor::zeros({cfg.n_mels, n_frames});
    std::vector<double> frame(static_cast<size_t>(frame_len));
    for (int t = 0; t < n_frames; ++t) {
        for (int i = 0; i < frame_len; ++i)
            frame[i] = x[static_cast<size_t>(t) * hop_len + i] * window[i];
        const auto power = power_spectrum(frame, nfft);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double e = 0.0;
            for (size_t k = 0; k < power.size(); ++k) e += bank[m][k] * power[k];
            out.data()[static_cast<size_t>(m) * n_frames + t] = std::log(std::max(e, 1e-10));
        }
    }
    return out;
}

FeatureMap mfcc(const AudioClip& clip, const MfccConfig& cfg) {
    Tensor logmel = log_mel_spectrogram(clip, cfg);
    const int n_frames = logmel.dim(1);
    const int m = cfg.n_mels;
    if (cfg.n_coeffs > m) throw ShapeMismatch("n_coeffs cannot exceed n_mels");

    // Orthonormal DCT-II down the mel axis, first n_coeffs rows kept.
    Tensor coeffs = Tensor::zeros({cfg.n_coeffs, n_frames});
    for (int k = 0; k < cfg.n_coeffs; ++k) {
        const double scale = k == 0 ? std::sqrt(1.0 / m) : std::sqrt(2.0 / m);
        for (int t = 0; t < n_frames; ++t) {
            double acc = 0.0;
            for (int j = 0; j < m; ++j)
                acc += logmel.data()[static_cast<size_t>(j) * n_frames + t] *
                       std::cos(kPi * k * (2.0 * j + 1.0) / (2.0 * m));
            coeffs.data()[static_cast<size_t>(k) * n_frames + t] = scale * acc;
        }
    }

    if (cfg.normalize) {
        for (int k = 0; k < cfg.n_coeffs; ++k) {
            double* row = &coeffs.data()[static_cast<size_t>(k) * n_frames];
            double mean = 0.0;
            for (int t = 0; t < n_frames; ++t) mean += row[t];
            mean /= n_frames;
            double var = 0.0;
            for (int t = 0; t < n_frames; ++t) var += (row[t] - mean) * (row[t] - mean);
            var /= n_frames;
            const double denom = var < 1e-24 ? 1.0 : std::sqrt(var);
            for (int t = 0; t < n_frames; ++t) row[t] = (row[t] - mean) / denom;
        }
    }

    FeatureMap fm;
    fm.values = coeffs;
    fm.num_coeffs = cfg.n_coeffs;
    fm.num_frames = n_frames;
    fm.frame_hop_s = cfg.hop_s;
    return fm;
}

void save_feature_map(const std::string& path, const FeatureMap& fm) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileNotFound("cannot open for writing: " + path);
    out.write("CRYF", 4);
    const unsigned char version = 1;
    out.write(reinterpret_cast<const char*>(&version), 1);
    write_u32(out, static_cast<std::uint32_t>(fm.num_coeffs));
    write_u32(out, static_cast<std::uint32_t>(fm.num_frames));
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(fm.values.data().data()),
              static_cast<std::streamsize>(fm.values.data().size() * 8));
}

FeatureMap load_feature_map(const std::string& path) {
    if (!std::filesystem::exists(path)) throw FileNotFound(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound(path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CRYF", 4) != 0)
        throw CorruptHeader("bad feature cache magic");
    unsigned char version = 0;
    in.read(reinterpret_cast<char*>(&version), 1);
    if (!in || version != 1) throw CorruptHeader("unsupported feature cache version");
    const int c = static_cast<int>(read_u32(in));
    const int t = static_cast<int>(read_u32(in));
    if (c < 1 || t < 1) throw CorruptHeader("degenerate feature dimensions");
    std::vector<double> values(static_cast<size_t>(c) * t);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * 8));
    if (static_cast<size_t>(in.gcount()) != values.size() * 8)
        throw CorruptHeader("feature payload truncated");
    FeatureMap fm;
    fm.values = Tensor::from({c, t}, std::move(values));
    fm.num_coeffs = c;
    fm.num_frames = t;
    fm.frame_hop_s = 0.010;
    return fm;
}

}  // namespace crynet::audio
