#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "kws/common.hpp"

namespace kws {

inline constexpr int kCanonicalRateHz = 16000;

// Mono waveform, samples in [-1, 1]. Immutable by convention: operations
// return new clips.
struct AudioClip {
    std::vector<double> samples;
    int sample_rate_hz = kCanonicalRateHz;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate_hz;
    }
    double power() const {
        double acc = 0.0;
        for (double s : samples) acc += s * s;
        return samples.empty() ? 0.0 : acc / static_cast<double>(samples.size());
    }
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// Reads RIFF/WAVE, PCM16 or IEEE float32, 1 or 2 channels. Stereo is
// downmixed by averaging. PCM16 is scaled by 1/32768.
inline AudioClip load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_wav: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    require(buf.size() >= 44, "load_wav: file too small: " + path);
    require(std::memcmp(buf.data(), "RIFF", 4) == 0 && std::memcmp(buf.data() + 8, "WAVE", 4) == 0,
            "load_wav: not a RIFF/WAVE file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::size_t data_off = 0, data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        std::uint32_t chunk_len = detail::read_u32(buf.data() + pos + 4);
        if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0 && pos + 8 + 16 <= buf.size()) {
            const unsigned char* f = buf.data() + pos + 8;
            format = detail::read_u16(f);
            channels = detail::read_u16(f + 2);
            rate = detail::read_u32(f + 4);
            bits = detail::read_u16(f + 14);
        } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
            data_off = pos + 8;
            data_len = std::min<std::size_t>(chunk_len, buf.size() - data_off);
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    require(rate > 0, "load_wav: missing fmt chunk: " + path);
    require(channels == 1 || channels == 2, "load_wav: unsupported channel count: " + path);
    const bool pcm16 = (format == 1 && bits == 16);
    const bool f32 = (format == 3 && bits == 32);
    require(pcm16 || f32, "load_wav: unsupported encoding (need PCM16 or float32): " + path);
    require(data_len > 0, "load_wav: zero-length audio: " + path);

    const std::size_t bytes_per = (pcm16 ? 2u : 4u) * channels;
    const std::size_t n = data_len / bytes_per;
    require(n > 0, "load_wav: zero-length audio: " + path);

    AudioClip clip;
    clip.sample_rate_hz = static_cast<int>(rate);
    clip.samples.resize(n);
    const unsigned char* d = buf.data() + data_off;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            if (pcm16) {
                std::int16_t v;
                std::memcpy(&v, d + i * bytes_per + 2 * c, 2);
                acc += static_cast<double>(v) / 32768.0;
            } else {
                float v;
                std::memcpy(&v, d + i * bytes_per + 4 * c, 4);
                acc += static_cast<double>(v);
            }
        }
        clip.samples[i] = acc / channels;
    }
    return clip;
}

// Writes mono PCM16 little-endian.
inline void save_wav(const std::string& path, const AudioClip& clip) {
    require(clip.sample_rate_hz > 0, "save_wav: invalid sample rate");
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "save_wav: cannot open " + path);
    const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
    const std::uint32_t data_len = n * 2;
    auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto w16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
    out.write("RIFF", 4);
    w32(36 + data_len);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    w32(16);
    w16(1);  // PCM
    w16(1);  // mono
    w32(static_cast<std::uint32_t>(clip.sample_rate_hz));
    w32(static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
    w16(2);
    w16(16);
    out.write("data", 4);
    w32(data_len);
    for (double s : clip.samples) {
        double clipped = std::clamp(s, -1.0, 1.0);
        int v = static_cast<int>(std::lround(clipped * 32768.0));
        v = std::clamp(v, -32768, 32767);
        std::int16_t v16 = static_cast<std::int16_t>(v);
        out.write(reinterpret_cast<const char*>(&v16), 2);
    }
    require(out.good(), "save_wav: write failed: " + path);
}

// Band-limited resampler: 32-tap Hann-windowed sinc, cutoff at the lower
// Nyquist of the two rates. Output duration matches input within one
// sample period.
inline AudioClip resample(const AudioClip& clip, int target_hz) {
    require(target_hz > 0, "resample: target rate must be positive");
    require(clip.sample_rate_hz > 0, "resample: invalid input rate");
    if (target_hz == clip.sample_rate_hz) return clip;

    const double ratio = static_cast<double>(target_hz) / clip.sample_rate_hz;
    const double cutoff = std::min(1.0, ratio);  // fraction of input Nyquist
    const int half_taps = 16;                    // 32-tap kernel
    const std::size_t n_in = clip.samples.size();
    const std::size_t n_out =
        static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));

    AudioClip out;
    out.sample_rate_hz = target_hz;
    out.samples.resize(n_out, 0.0);
    // When downsampling, the kernel is stretched by 1/cutoff in input samples.
    const double stretch = 1.0 / cutoff;
    const int reach = static_cast<int>(std::ceil(half_taps * stretch));
    for (std::size_t i = 0; i < n_out; ++i) {
        const double t = static_cast<double>(i) / ratio;  // position in input samples
        const int center = static_cast<int>(std::floor(t));
        double acc = 0.0, norm = 0.0;
        for (int j = center - reach; j <= center + reach + 1; ++j) {
            const double x = (static_cast<double>(j) - t) * cutoff;  // in kernel units
            if (x < -half_taps || x > half_taps) continue;
            double sinc = (std::abs(x) < 1e-12)
                              ? 1.0
                              : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
            double win = 0.5 + 0.5 * std::cos(std::numbers::pi * x / half_taps);
            double w = sinc * win;
            norm += w;
            if (j >= 0 && j < static_cast<int>(n_in)) acc += clip.samples[j] * w;
        }
        out.samples[i] = (norm > 1e-12) ? acc / norm : 0.0;
    }
    return out;
}

struct ToneBurst {
    double start_s;
    double end_s;
    double freq_hz = 1000.0;
};

inline AudioClip synth_sine(double freq_hz, double amp, double duration_s,
                            int rate_hz = kCanonicalRateHz) {
    require(freq_hz >= 0 && freq_hz < rate_hz / 2.0 + 1e-9, "synth_sine: frequency above Nyquist");
    AudioClip clip;
    clip.sample_rate_hz = rate_hz;
    const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * rate_hz));
    clip.samples.resize(n);
    if (freq_hz == 0.0) {
        std::fill(clip.samples.begin(), clip.samples.end(), amp);
        return clip;
    }
    for (std::size_t i = 0; i < n; ++i)
        clip.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq_hz * i / rate_hz);
    return clip;
}

inline AudioClip synth_noise(double amp, double duration_s, std::uint64_t seed,
                             int rate_hz = kCanonicalRateHz) {
    AudioClip clip;
    clip.sample_rate_hz = rate_hz;
    const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * rate_hz));
    clip.samples.resize(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i)
        clip.samples[i] = std::clamp(amp * rng.next_gaussian() * 0.3, -1.0, 1.0);
    return clip;
}

// Tone bursts over a quiet floor; returns the clip plus the exact schedule as
// ground truth for segmentation tests.
inline std::pair<AudioClip, std::vector<ToneBurst>> synth_tone_bursts(
    const std::vector<ToneBurst>& schedule, double duration_s, double floor_amp,
    std::uint64_t seed, int rate_hz = kCanonicalRateHz) {
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        require(schedule[i].start_s < schedule[i].end_s, "synth_tone_bursts: empty burst");
        require(schedule[i].end_s <= duration_s + 1e-9, "synth_tone_bursts: burst past end");
        if (i > 0)
            require(schedule[i].start_s >= schedule[i - 1].end_s,
                    "synth_tone_bursts: overlapping bursts");
    }
    AudioClip clip = synth_noise(floor_amp, duration_s, seed, rate_hz);
    for (const auto& b : schedule) {
        const std::size_t lo = static_cast<std::size_t>(std::llround(b.start_s * rate_hz));
        const std::size_t hi = std::min(
            clip.samples.size(), static_cast<std::size_t>(std::llround(b.end_s * rate_hz)));
        for (std::size_t i = lo; i < hi; ++i)
            clip.samples[i] += 0.5 * std::sin(2.0 * std::numbers::pi * b.freq_hz * i / rate_hz);
    }
    return {std::move(clip), schedule};
}

inline AudioClip to_canonical(const AudioClip& clip) {
    return clip.sample_rate_hz == kCanonicalRateHz ? clip : resample(clip, kCanonicalRateHz);
}

}  // namespace kws
