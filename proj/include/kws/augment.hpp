#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/audio.hpp"
#include "kws/common.hpp"

namespace kws {

// One augmentation to apply to one clip. Fully describes the variant so it
// can be reproduced from the manifest alone.
struct AugmentSpec {
    enum class Kind { Noise, Pitch, TimeShift };
    Kind kind = Kind::Noise;
    std::string noise_id;       // Noise
    double snr_db = 15.0;       // Noise; +inf sentinel means pass-through
    double semitones = 0.0;     // Pitch
    double shift_s = 0.0;       // TimeShift
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        switch (kind) {
            case Kind::Noise:
                return {{"kind", "noise"}, {"noise_id", noise_id}, {"snr_db", snr_db}, {"seed", seed}};
            case Kind::Pitch:
                return {{"kind", "pitch"}, {"semitones", semitones}, {"seed", seed}};
            case Kind::TimeShift:
                return {{"kind", "time_shift"}, {"seconds", shift_s}, {"seed", seed}};
        }
        return {};
    }

    static AugmentSpec from_json(const nlohmann::json& j) {
        AugmentSpec s;
        const std::string k = j.at("kind").get<std::string>();
        s.seed = j.value("seed", 0ULL);
        if (k == "noise") {
            s.kind = Kind::Noise;
            s.noise_id = j.value("noise_id", "");
            s.snr_db = j.at("snr_db").get<double>();
        } else if (k == "pitch") {
            s.kind = Kind::Pitch;
            s.semitones = j.at("semitones").get<double>();
        } else if (k == "time_shift") {
            s.kind = Kind::TimeShift;
            s.shift_s = j.at("seconds").get<double>();
        } else {
            throw Error("AugmentSpec: unknown kind '" + k + "'");
        }
        return s;
    }
};

struct MixInfo {
    double noise_gain = 0.0;   // gain applied to the noise segment
    double peak_scale = 1.0;   // post-mix rescale when clipping would occur
};

// Adds a seeded-random segment of `noise` to `clean` at the requested SNR.
// SNR is 10*log10 of mean-square clean power over mean-square scaled-noise
// power. If the mix would clip, the whole output is peak-normalized.
inline AudioClip mix_at_snr(const AudioClip& clean, const AudioClip& noise, double snr_db,
                            std::uint64_t seed, MixInfo* info = nullptr) {
    require(clean.sample_rate_hz == noise.sample_rate_hz, "mix_at_snr: sample rate mismatch");
    if (std::isinf(snr_db) && snr_db > 0) {
        if (info) *info = {0.0, 1.0};
        return clean;
    }
    const double p_clean = clean.power();
    require(p_clean > 1e-12, "mix_at_snr: silent clean input");
    require(noise.power() > 1e-12, "mix_at_snr: silent noise input");

    const std::size_t n = clean.samples.size();
    // Tile the noise if it is shorter than the clean clip.
    std::vector<double> tiled;
    const std::vector<double>* src = &noise.samples;
    if (noise.samples.size() < n) {
        tiled.reserve(2 * n);
        while (tiled.size() < 2 * n)
            tiled.insert(tiled.end(), noise.samples.begin(), noise.samples.end());
        src = &tiled;
    }
    Rng rng(seed);
    const std::size_t max_start = src->size() - n;
    const std::size_t start = static_cast<std::size_t>(rng.next_below(max_start + 1));

    double p_noise = 0.0;
    for (std::size_t i = 0; i < n; ++i) p_noise += (*src)[start + i] * (*src)[start + i];
    p_noise /= static_cast<double>(n);
    require(p_noise > 1e-12, "mix_at_snr: selected noise segment is silent");

    // 10*log10(p_clean / (g^2 * p_noise)) = snr_db
    const double g = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
    AudioClip out;
    out.sample_rate_hz = clean.sample_rate_hz;
    out.samples.resize(n);
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.samples[i] = clean.samples[i] + g * (*src)[start + i];
        peak = std::max(peak, std::abs(out.samples[i]));
    }
    double scale = 1.0;
    if (peak > 1.0) {
        scale = 1.0 / peak;
        for (double& s : out.samples) s *= scale;
    }
    if (info) *info = {g, scale};
    return out;
}

// Resample-then-crop pitch shift: frequencies scale by 2^(semitones/12),
// length is restored to the input length.
inline AudioClip pitch_shift(const AudioClip& clip, double semitones) {
    require(std::abs(semitones) <= 12.0, "pitch_shift: |semitones| must be <= 12");
    if (semitones == 0.0) return clip;
    const double factor = std::pow(2.0, semitones / 12.0);
    const int inner_rate = static_cast<int>(std::llround(clip.sample_rate_hz / factor));
    AudioClip shifted = resample(clip, inner_rate);
    shifted.sample_rate_hz = clip.sample_rate_hz;  // reinterpret: pitch moves by `factor`
    shifted.samples.resize(clip.samples.size(), 0.0);
    return shifted;
}

// Non-circular shift with zero fill; length unchanged.
inline AudioClip time_shift(const AudioClip& clip, double seconds) {
    require(std::abs(seconds) < clip.duration_s(), "time_shift: shift exceeds clip duration");
    const long long k = std::llround(seconds * clip.sample_rate_hz);
    const long long n = static_cast<long long>(clip.samples.size());
    AudioClip out;
    out.sample_rate_hz = clip.sample_rate_hz;
    out.samples.assign(clip.samples.size(), 0.0);
    for (long long i = 0; i < n; ++i) {
        const long long j = i + k;
        if (j >= 0 && j < n) out.samples[j] = clip.samples[i];
    }
    return out;
}

// Noise clips grouped by category id. Directory convention:
// <bank>/<noise_id>/*.wav
class NoiseBank {
public:
    NoiseBank() = default;

    static NoiseBank from_directory(const std::string& root) {
        namespace fs = std::filesystem;
        NoiseBank bank;
        require(fs::is_directory(root), "NoiseBank: not a directory: " + root);
        std::vector<fs::path> cats;
        for (const auto& e : fs::directory_iterator(root))
            if (e.is_directory()) cats.push_back(e.path());
        std::sort(cats.begin(), cats.end());
        for (const auto& cat : cats) {
            std::vector<fs::path> files;
            for (const auto& f : fs::directory_iterator(cat))
                if (f.path().extension() == ".wav") files.push_back(f.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files)
                bank.clips_[cat.filename().string()].push_back(to_canonical(load_wav(f.string())));
        }
        return bank;
    }

    // White and tonal noise for tests; the paper's noise corpora are
    // user-supplied.
    static NoiseBank synthetic(std::uint64_t seed = 1234, double duration_s = 2.0) {
        NoiseBank bank;
        bank.clips_["white"].push_back(synth_noise(1.0, duration_s, derive_seed(seed, "white")));
        AudioClip tonal = synth_sine(150.0, 0.3, duration_s);
        AudioClip hum = synth_sine(420.0, 0.2, duration_s);
        for (std::size_t i = 0; i < tonal.samples.size(); ++i) tonal.samples[i] += hum.samples[i];
        bank.clips_["tonal"].push_back(std::move(tonal));
        return bank;
    }

    void add(const std::string& noise_id, AudioClip clip) {
        clips_[noise_id].push_back(std::move(clip));
    }

    bool has(const std::string& noise_id) const { return clips_.count(noise_id) > 0; }
    std::vector<std::string> categories() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : clips_) out.push_back(k);
        return out;
    }

    const AudioClip& pick(const std::string& noise_id, std::uint64_t seed) const {
        auto it = clips_.find(noise_id);
        require(it != clips_.end(), "NoiseBank: unknown noise_id '" + noise_id + "'");
        return it->second[seed % it->second.size()];
    }

private:
    std::map<std::string, std::vector<AudioClip>> clips_;
};

inline AudioClip apply_augment(const AudioClip& clip, const AugmentSpec& spec,
                               const NoiseBank& bank) {
    switch (spec.kind) {
        case AugmentSpec::Kind::Noise:
            return mix_at_snr(clip, bank.pick(spec.noise_id, spec.seed), spec.snr_db, spec.seed);
        case AugmentSpec::Kind::Pitch:
            return pitch_shift(clip, spec.semitones);
        case AugmentSpec::Kind::TimeShift:
            return time_shift(clip, spec.shift_s);
    }
    throw Error("apply_augment: unreachable");
}

// Default sampler: SNR uniform over {10,15,20,25}, pitch uniform in [-2,2]
// semitones, shift uniform in [-0.1,0.1] s. Kind drawn uniformly over the
// kinds available (noise requires a non-empty bank).
struct AugmentSampler {
    std::vector<std::string> noise_ids;
    std::vector<double> snr_levels = {10.0, 15.0, 20.0, 25.0};
    double max_semitones = 2.0;
    double max_shift_s = 0.1;

    AugmentSpec draw(Rng& rng) const {
        AugmentSpec spec;
        spec.seed = rng.next_u64();
        const int n_kinds = noise_ids.empty() ? 2 : 3;
        const int k = static_cast<int>(rng.next_below(n_kinds));
        if (!noise_ids.empty() && k == 0) {
            spec.kind = AugmentSpec::Kind::Noise;
            spec.noise_id = noise_ids[rng.next_below(noise_ids.size())];
            spec.snr_db = snr_levels[rng.next_below(snr_levels.size())];
        } else if (k == n_kinds - 2) {
            spec.kind = AugmentSpec::Kind::Pitch;
            spec.semitones = rng.uniform(-max_semitones, max_semitones);
        } else {
            spec.kind = AugmentSpec::Kind::TimeShift;
            spec.shift_s = rng.uniform(-max_shift_s, max_shift_s);
        }
        return spec;
    }
};

}  // namespace kws
