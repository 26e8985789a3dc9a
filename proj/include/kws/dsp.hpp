#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "kws/audio.hpp"
#include "kws/common.hpp"

namespace kws {

inline constexpr int kFrameLen = 400;   // 25 ms @ 16 kHz
inline constexpr int kFrameStep = 160;  // 10 ms @ 16 kHz
inline constexpr int kFftSize = 512;
inline constexpr int kSpectrumBins = kFftSize / 2 + 1;
inline constexpr int kNumMfcc = 40;
inline constexpr int kNumMels = 64;
inline constexpr double kPreEmphasis = 0.97;
inline constexpr double kLogFloor = 1e-10;

// T x 40 MFCC grid; the network input.
struct FeatureMatrix {
    int num_frames = 0;
    int num_coeffs = kNumMfcc;
    std::vector<double> data;  // row-major [num_frames][num_coeffs]
    double frame_step_s = 0.010;
    double frame_width_s = 0.025;

    double& at(int t, int c) { return data[static_cast<std::size_t>(t) * num_coeffs + c]; }
    double at(int t, int c) const { return data[static_cast<std::size_t>(t) * num_coeffs + c]; }
};

inline int frame_count(std::size_t num_samples) {
    if (num_samples < kFrameLen) return 0;
    return 1 + static_cast<int>((num_samples - kFrameLen) / kFrameStep);
}

inline std::vector<double> hamming_window(int len = kFrameLen) {
    std::vector<double> w(len);
    for (int n = 0; n < len; ++n)
        w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (len - 1));
    return w;
}

// Frame t covers samples [160*t, 160*t + 400), each multiplied by the
// hamming window.
inline std::vector<std::vector<double>> frame_and_window(const AudioClip& clip) {
    require(clip.sample_rate_hz == kCanonicalRateHz, "frame_and_window: clip must be 16 kHz");
    require(clip.samples.size() >= kFrameLen, "frame_and_window: clip shorter than one frame");
    static const std::vector<double> window = hamming_window();
    const int T = frame_count(clip.samples.size());
    std::vector<std::vector<double>> frames(T, std::vector<double>(kFrameLen));
    for (int t = 0; t < T; ++t)
        for (int n = 0; n < kFrameLen; ++n)
            frames[t][n] = clip.samples[static_cast<std::size_t>(t) * kFrameStep + n] * window[n];
    return frames;
}

// Iterative radix-2 FFT, in place. Size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    require(n > 0 && (n & (n - 1)) == 0, "fft: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// |FFT|^2 / 512 over bins 0..256 of a 400-sample frame zero-padded to 512.
inline std::vector<double> power_spectrum(const std::vector<double>& frame) {
    require(frame.size() == kFrameLen, "power_spectrum: frame must have 400 samples");
    std::vector<std::complex<double>> buf(kFftSize, {0.0, 0.0});
    for (int i = 0; i < kFrameLen; ++i) buf[i] = frame[i];
    fft_inplace(buf);
    std::vector<double> ps(kSpectrumBins);
    for (int k = 0; k < kSpectrumBins; ++k) ps[k] = std::norm(buf[k]) / kFftSize;
    return ps;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank on the HTK scale.
struct MelFilterbank {
    int n_mels;
    double f_min, f_max;
    std::vector<double> weights;  // [n_mels][kSpectrumBins]

    MelFilterbank(int n_mels_ = kNumMels, double f_min_ = 20.0, double f_max_ = 7600.0,
                  int sample_rate = kCanonicalRateHz)
        : n_mels(n_mels_), f_min(f_min_), f_max(f_max_) {
        require(n_mels > 0 && f_min >= 0 && f_max > f_min && f_max <= sample_rate / 2.0,
                "MelFilterbank: invalid configuration");
        weights.assign(static_cast<std::size_t>(n_mels) * kSpectrumBins, 0.0);
        const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
        std::vector<double> edges(n_mels + 2);
        for (int m = 0; m < n_mels + 2; ++m)
            edges[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (n_mels + 1));
        const double bin_hz = static_cast<double>(sample_rate) / kFftSize;
        for (int m = 0; m < n_mels; ++m) {
            const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
            for (int k = 0; k < kSpectrumBins; ++k) {
                const double f = k * bin_hz;
                double w = 0.0;
                if (f > lo && f < mid)
                    w = (f - lo) / (mid - lo);
                else if (f >= mid && f < hi)
                    w = (hi - f) / (hi - mid);
                weights[static_cast<std::size_t>(m) * kSpectrumBins + k] = w;
            }
        }
    }

    std::vector<double> apply(const std::vector<double>& spectrum) const {
        require(spectrum.size() == kSpectrumBins, "MelFilterbank: bad spectrum size");
        std::vector<double> out(n_mels, 0.0);
        for (int m = 0; m < n_mels; ++m) {
            const double* row = &weights[static_cast<std::size_t>(m) * kSpectrumBins];
            double acc = 0.0;
            for (int k = 0; k < kSpectrumBins; ++k) acc += row[k] * spectrum[k];
            out[m] = acc;
        }
        return out;
    }
};

// Orthonormal DCT-II of x, keeping the first n_out coefficients.
inline std::vector<double> dct2_ortho(const std::vector<double>& x, int n_out) {
    const int M = static_cast<int>(x.size());
    require(n_out >= 1 && n_out <= M, "dct2_ortho: bad output size");
    std::vector<double> out(n_out, 0.0);
    for (int k = 0; k < n_out; ++k) {
        double acc = 0.0;
        for (int j = 0; j < M; ++j)
            acc += x[j] * std::cos(std::numbers::pi * (j + 0.5) * k / M);
        const double scale = (k == 0) ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
        out[k] = acc * scale;
    }
    return out;
}

// Inverse of dct2_ortho when all M coefficients are kept.
inline std::vector<double> idct2_ortho(const std::vector<double>& c) {
    const int M = static_cast<int>(c.size());
    std::vector<double> out(M, 0.0);
    for (int j = 0; j < M; ++j) {
        double acc = c[0] * std::sqrt(1.0 / M);
        for (int k = 1; k < M; ++k)
            acc += c[k] * std::sqrt(2.0 / M) * std::cos(std::numbers::pi * (j + 0.5) * k / M);
        out[j] = acc;
    }
    return out;
}

struct MfccConfig {
    int n_mels = kNumMels;
    double f_min = 20.0;
    double f_max = 7600.0;
    double pre_emphasis = kPreEmphasis;
    double log_floor = kLogFloor;
    bool mean_var_normalize = false;  // off by default
};

// Full front-end: pre-emphasis, hamming framing, power spectrum, mel
// filterbank, log with floor, orthonormal DCT-II keeping 40 coefficients.
inline FeatureMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg = {}) {
    require(clip.sample_rate_hz == kCanonicalRateHz, "mfcc: clip must be 16 kHz");
    require(clip.samples.size() >= kFrameLen, "mfcc: clip shorter than one frame");
    AudioClip emph = clip;
    for (std::size_t i = emph.samples.size(); i-- > 1;)
        emph.samples[i] -= cfg.pre_emphasis * emph.samples[i - 1];

    static const MelFilterbank default_bank;
    const bool use_default =
        cfg.n_mels == kNumMels && cfg.f_min == 20.0 && cfg.f_max == 7600.0;
    MelFilterbank custom_bank = use_default ? default_bank
                                            : MelFilterbank(cfg.n_mels, cfg.f_min, cfg.f_max);
    const MelFilterbank& bank = use_default ? default_bank : custom_bank;

    auto frames = frame_and_window(emph);
    FeatureMatrix fm;
    fm.num_frames = static_cast<int>(frames.size());
    fm.data.resize(static_cast<std::size_t>(fm.num_frames) * kNumMfcc);
    for (int t = 0; t < fm.num_frames; ++t) {
        auto mel = bank.apply(power_spectrum(frames[t]));
        for (double& e : mel) e = std::log(std::max(e, cfg.log_floor));
        auto coeffs = dct2_ortho(mel, kNumMfcc);
        std::copy(coeffs.begin(), coeffs.end(), fm.data.begin() + static_cast<std::size_t>(t) * kNumMfcc);
    }
    if (cfg.mean_var_normalize) {
        for (int c = 0; c < kNumMfcc; ++c) {
            double mean = 0.0, var = 0.0;
            for (int t = 0; t < fm.num_frames; ++t) mean += fm.at(t, c);
            mean /= fm.num_frames;
            for (int t = 0; t < fm.num_frames; ++t) var += (fm.at(t, c) - mean) * (fm.at(t, c) - mean);
            var /= fm.num_frames;
            const double inv = 1.0 / std::sqrt(var + 1e-8);
            for (int t = 0; t < fm.num_frames; ++t) fm.at(t, c) = (fm.at(t, c) - mean) * inv;
        }
    }
    return fm;
}

// Binary feature dump: magic, T, coeff count, frame params, source hash,
// then row-major float32.
inline constexpr char kFeatMagic[8] = {'K', 'W', 'S', 'F', 'E', 'A', 'T', '1'};

inline void save_features(const std::string& path, const FeatureMatrix& fm,
                          std::uint64_t source_hash = 0) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_features: cannot open " + path);
    out.write(kFeatMagic, 8);
    std::uint32_t t = static_cast<std::uint32_t>(fm.num_frames);
    std::uint32_t c = static_cast<std::uint32_t>(fm.num_coeffs);
    out.write(reinterpret_cast<const char*>(&t), 4);
    out.write(reinterpret_cast<const char*>(&c), 4);
    out.write(reinterpret_cast<const char*>(&fm.frame_step_s), 8);
    out.write(reinterpret_cast<const char*>(&fm.frame_width_s), 8);
    out.write(reinterpret_cast<const char*>(&source_hash), 8);
    for (double v : fm.data) {
        float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    require(out.good(), "save_features: write failed: " + path);
}

inline FeatureMatrix load_features(const std::string& path, std::uint64_t* source_hash = nullptr) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_features: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    require(in.good() && std::memcmp(magic, kFeatMagic, 8) == 0,
            "load_features: bad magic: " + path);
    std::uint32_t t = 0, c = 0;
    std::uint64_t hash = 0;
    FeatureMatrix fm;
    in.read(reinterpret_cast<char*>(&t), 4);
    in.read(reinterpret_cast<char*>(&c), 4);
    in.read(reinterpret_cast<char*>(&fm.frame_step_s), 8);
    in.read(reinterpret_cast<char*>(&fm.frame_width_s), 8);
    in.read(reinterpret_cast<char*>(&hash), 8);
    fm.num_frames = static_cast<int>(t);
    fm.num_coeffs = static_cast<int>(c);
    fm.data.resize(static_cast<std::size_t>(t) * c);
    for (auto& v : fm.data) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        v = f;
    }
    require(in.good(), "load_features: truncated file: " + path);
    if (source_hash) *source_hash = hash;
    return fm;
}

inline void export_features_csv(const std::string& path, const FeatureMatrix& fm) {
    std::ofstream out(path);
    require(out.good(), "export_features_csv: cannot open " + path);
    for (int t = 0; t < fm.num_frames; ++t) {
        for (int c = 0; c < fm.num_coeffs; ++c) {
            if (c) out << ',';
            out << fm.at(t, c);
        }
        out << '\n';
    }
}

}  // namespace kws
