#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "crynet/audio.hpp"

using namespace crynet;
using namespace crynet::audio;

namespace {

constexpr double kTau = 6.28318530717958647692;

void push_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<unsigned char>((x >> (8 * i)) & 0xff));
}
void push_u16(std::vector<unsigned char>& v, std::uint16_t x) {
    v.push_back(static_cast<unsigned char>(x & 0xff));
    v.push_back(static_cast<unsigned char>((x >> 8) & 0xff));
}

std::vector<unsigned char> wav_bytes(const std::vector<std::int16_t>& interleaved,
                                     int channels, int rate, std::uint16_t format = 1,
                                     std::uint16_t bits = 16) {
    std::vector<unsigned char> v;
    const std::uint32_t data_size = static_cast<std::uint32_t>(interleaved.size() * 2);
    v.insert(v.end(), {'R', 'I', 'F', 'F'});
    push_u32(v, 36 + data_size);
    v.insert(v.end(), {'W', 'A', 'V', 'E'});
    v.insert(v.end(), {'f', 'm', 't', ' '});
    push_u32(v, 16);
    push_u16(v, format);
    push_u16(v, static_cast<std::uint16_t>(channels));
    push_u32(v, static_cast<std::uint32_t>(rate));
    push_u32(v, static_cast<std::uint32_t>(rate * channels * 2));
    push_u16(v, static_cast<std::uint16_t>(channels * 2));
    push_u16(v, bits);
    v.insert(v.end(), {'d', 'a', 't', 'a'});
    push_u32(v, data_size);
    for (std::int16_t s : interleaved) push_u16(v, static_cast<std::uint16_t>(s));
    return v;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void dump(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

AudioClip tone(double freq, double seconds, int rate, double amp = 0.5) {
    AudioClip c;
    c.sample_rate = rate;
    const size_t n = static_cast<size_t>(seconds * rate);
    c.samples.resize(n);
    for (size_t i = 0; i < n; ++i)
        c.samples[i] = amp * std::sin(kTau * freq * static_cast<double>(i) / rate);
    return c;
}

}  // namespace

TEST_CASE("load_wav decodes pcm16") {
    const std::string path = temp_path("crynet_zeros.wav");
    dump(path, wav_bytes(std::vector<std::int16_t>(64, 0), 1, 16000));
    AudioClip c = load_wav(path);
    CHECK(c.sample_rate == 16000);
    REQUIRE(c.samples.size() == 64);
    for (double v : c.samples) CHECK(v == 0.0);

    dump(path, wav_bytes({-32768}, 1, 8000));
    AudioClip mn = load_wav(path);
    CHECK(mn.samples[0] == -1.0);

    // stereo downmix by channel mean
    dump(path, wav_bytes({6554, 13107}, 2, 16000));
    AudioClip st = load_wav(path);
    REQUIRE(st.samples.size() == 1);
    CHECK(st.samples[0] == doctest::Approx((6554.0 + 13107.0) / 2.0 / 32768.0).epsilon(1e-15));
}

TEST_CASE("load_wav error paths") {
    CHECK_THROWS_AS(load_wav("/nonexistent/clip.wav"), FileNotFound);

    const std::string path = temp_path("crynet_bad.wav");
    auto good = wav_bytes({0, 0, 0, 0}, 1, 16000);
    good.resize(10);  // truncated header
    dump(path, good);
    CHECK_THROWS_AS(load_wav(path), CorruptHeader);

    dump(path, wav_bytes({0, 0}, 1, 16000, /*format=*/3));
    CHECK_THROWS_AS(load_wav(path), UnsupportedFormat);

    dump(path, wav_bytes({0, 0}, 1, 16000, 1, /*bits=*/8));
    CHECK_THROWS_AS(load_wav(path), UnsupportedFormat);
}

TEST_CASE("remove_silence gates on rms") {
    AudioClip loud = tone(440.0, 1.0, 16000);
    AudioClip kept = remove_silence(loud);
    CHECK(kept.samples.size() == loud.samples.size());

    // 1 s of zeros then 2 s of tone -> about 2 s survive
    AudioClip mixed;
    mixed.sample_rate = 16000;
    mixed.samples.assign(16000, 0.0);
    AudioClip t = tone(440.0, 2.0, 16000);
    mixed.samples.insert(mixed.samples.end(), t.samples.begin(), t.samples.end());
    AudioClip cut = remove_silence(mixed);
    CHECK(cut.duration_s() == doctest::Approx(2.0).epsilon(0.05));

    AudioClip silent;
    silent.sample_rate = 16000;
    silent.samples.assign(8000, 0.0);
    CHECK_THROWS_AS(remove_silence(silent), AllSilent);
}

TEST_CASE("remove_silence keeps order and never grows") {
    AudioClip clip;
    clip.sample_rate = 1000;
    // quiet, loud, quiet, loud; loud windows carry a ramp to check order
    for (int w = 0; w < 4; ++w)
        for (int i = 0; i < 50; ++i)
            clip.samples.push_back(w % 2 == 1 ? 0.5 + 0.001 * (w * 50 + i) : 1e-6);
    AudioClip cut = remove_silence(clip, -35.0, 0.05);
    CHECK(cut.samples.size() <= clip.samples.size());
    CHECK(cut.samples.size() == 100);
    for (size_t i = 1; i < cut.samples.size(); ++i) CHECK(cut.samples[i] > cut.samples[i - 1]);
}

TEST_CASE("normalize_length crop and pad") {
    AudioClip exact = tone(100.0, 3.0, 16000);
    AudioClip same = normalize_length(exact, 3.0);
    CHECK(same.samples == exact.samples);

    AudioClip five;
    five.sample_rate = 16000;
    five.samples.resize(5 * 16000);
    for (size_t i = 0; i < five.samples.size(); ++i)
        five.samples[i] = static_cast<double>(i);
    AudioClip cropped = normalize_length(five, 3.0);
    REQUIRE(cropped.samples.size() == 48000);
    CHECK(cropped.samples.front() == 16000.0);  // center crop skips 1 s
    CHECK(cropped.samples.back() == 63999.0);

    AudioClip two;
    two.sample_rate = 16000;
    two.samples.assign(2 * 16000, 0.25);
    AudioClip padded = normalize_length(two, 3.0);
    REQUIRE(padded.samples.size() == 48000);
    for (int i = 0; i < 8000; ++i) CHECK(padded.samples[i] == 0.0);
    CHECK(padded.samples[8000] == 0.25);
    CHECK(padded.samples[8000 + 32000 - 1] == 0.25);
    for (size_t i = 40000; i < 48000; ++i) CHECK(padded.samples[i] == 0.0);
}

TEST_CASE("power spectrum matches a naive dft") {
    std::vector<double> frame(100);
    for (size_t i = 0; i < frame.size(); ++i)
        frame[i] = std::sin(0.37 * i) + 0.3 * std::cos(1.3 * i);
    const int nfft = 128;
    auto fast = power_spectrum(frame, nfft);
    for (int k = 0; k <= nfft / 2; ++k) {
        double re = 0.0, im = 0.0;
        for (int n = 0; n < nfft; ++n) {
            const double x = n < static_cast<int>(frame.size()) ? frame[n] : 0.0;
            re += x * std::cos(kTau * k * n / nfft);
            im -= x * std::sin(kTau * k * n / nfft);
        }
        CHECK(fast[static_cast<size_t>(k)] ==
              doctest::Approx((re * re + im * im) / nfft).epsilon(1e-9));
    }
}

TEST_CASE("mfcc shape for a 3 s clip") {
    AudioClip c = tone(300.0, 3.0, 16000);
    FeatureMap fm = mfcc(c);
    CHECK(fm.num_coeffs == 13);
    CHECK(fm.num_frames == 298);  // 1 + (48000-400)/160
    CHECK(fm.values.shape() == Shape{13, 298});
}

TEST_CASE("constant input gives identical log-mel columns") {
    AudioClip dc;
    dc.sample_rate = 16000;
    dc.samples.assign(16000, 0.125);
    Tensor lm = log_mel_spectrogram(dc);
    const int t = lm.dim(1);
    for (int m = 0; m < lm.dim(0); ++m)
        for (int i = 1; i < t; ++i)
            CHECK(lm.data()[static_cast<size_t>(m) * t + i] ==
                  doctest::Approx(lm.data()[static_cast<size_t>(m) * t]).epsilon(1e-12));
}

TEST_CASE("mfcc rows are mean-variance normalized") {
    AudioClip c = tone(520.0, 3.0, 16000, 0.4);
    for (size_t i = 0; i < c.samples.size(); ++i)
        c.samples[i] += 0.2 * std::sin(kTau * 97.0 * static_cast<double>(i) / 16000.0);
    FeatureMap fm = mfcc(c);
    const int t = fm.num_frames;
    for (int k = 0; k < fm.num_coeffs; ++k) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < t; ++i) mean += fm.values.data()[static_cast<size_t>(k) * t + i];
        mean /= t;
        for (int i = 0; i < t; ++i) {
            const double d = fm.values.data()[static_cast<size_t>(k) * t + i] - mean;
            var += d * d;
        }
        var /= t;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("mfcc is deterministic") {
    AudioClip c = tone(251.0, 1.0, 16000);
    FeatureMap a = mfcc(c);
    FeatureMap b = mfcc(c);
    CHECK(std::memcmp(a.values.data().data(), b.values.data().data(),
                      a.values.data().size() * sizeof(double)) == 0);
}

TEST_CASE("hop shift moves feature columns by one") {
    // Period 480 samples = 3 hops, so consecutive frames differ but frames
    // 3 apart agree; shifting the signal by one hop maps frame t -> t+1.
    const int rate = 16000;
    const int hop = 160;
    const int n = 16000;
    auto make = [&](int shift) {
        AudioClip c;
        c.sample_rate = rate;
        c.samples.resize(n);
        for (int i = 0; i < n; ++i) {
            const double ph = kTau * static_cast<double>(i + shift);
            c.samples[i] = 0.4 * std::sin(ph / 480.0) + 0.2 * std::sin(ph / 160.0);
        }
        return c;
    };
    MfccConfig cfg;
    cfg.normalize = false;  // compare raw coefficients
    FeatureMap base = mfcc(make(0), cfg);
    FeatureMap shifted = mfcc(make(hop), cfg);
    const int t = base.num_frames;
    for (int k = 0; k < base.num_coeffs; ++k)
        for (int i = 1; i + 1 < t - 1; ++i)  // interior columns
            CHECK(shifted.values.data()[static_cast<size_t>(k) * t + i] ==
                  doctest::Approx(base.values.data()[static_cast<size_t>(k) * t + i + 1])
                      .epsilon(1e-6));
}

TEST_CASE("feature cache round trip") {
    AudioClip c = tone(330.0, 1.0, 16000);
    FeatureMap fm = mfcc(c);
    const std::string path = temp_path("crynet_feat.cryf");
    save_feature_map(path, fm);
    FeatureMap back = load_feature_map(path);
    CHECK(back.num_coeffs == fm.num_coeffs);
    CHECK(back.num_frames == fm.num_frames);
    CHECK(std::memcmp(back.values.data().data(), fm.values.data().data(),
                      fm.values.data().size() * sizeof(double)) == 0);

    // truncated cache rejected
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    in.close();
    bytes.resize(bytes.size() / 2);
    const std::string bad = temp_path("crynet_feat_bad.cryf");
    std::ofstream out(bad, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_feature_map(bad), CorruptHeader);
}

TEST_CASE("wav writer round trips through the reader") {
    AudioClip c = tone(500.0, 0.25, 16000, 0.9);
    const std::string path = temp_path("crynet_rt.wav");
    write_wav16(path, c);
    AudioClip back = load_wav(path);
    REQUIRE(back.samples.size() == c.samples.size());
    for (size_t i = 0; i < c.samples.size(); ++i)
        CHECK(back.samples[i] == doctest::Approx(c.samples[i]).epsilon(1e-3));
}
