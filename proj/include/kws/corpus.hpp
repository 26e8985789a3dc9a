#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/audio.hpp"
#include "kws/augment.hpp"
#include "kws/common.hpp"

namespace kws {

enum class Source { SingleWordCorpus, ChunkedLongAudio };
enum class SetTag { None, Set1, Set2 };

struct Utterance {
    std::string id;
    std::optional<std::string> word;
    std::optional<std::string> speaker;
    Source source = Source::SingleWordCorpus;
    SetTag set_tag = SetTag::None;
    std::optional<AugmentSpec> aug;  // absent = clean
    std::string path;                // on-disk wav, if any
    std::optional<AudioClip> clip;   // in-memory audio, if any

    double duration_s() const {
        if (clip) return clip->duration_s();
        return 0.0;
    }
};

inline AudioClip utterance_audio(const Utterance& u) {
    if (u.clip) return *u.clip;
    require(!u.path.empty(), "utterance_audio: no audio for '" + u.id + "'");
    return to_canonical(load_wav(u.path));
}

// Immutable utterance collection. A corpus may be label-sealed: word labels
// then become inaccessible and every access attempt is an error. The read
// counter audits that self-supervised consumers never touched a label.
class Corpus {
public:
    Corpus() : label_reads_(std::make_shared<std::size_t>(0)) {}

    void add(Utterance u) {
        require(!ids_.count(u.id), "Corpus: duplicate utterance id '" + u.id + "'");
        ids_.insert(u.id);
        utts_.push_back(std::move(u));
    }

    std::size_t size() const { return utts_.size(); }
    bool empty() const { return utts_.empty(); }
    const Utterance& at(std::size_t i) const { return utts_[i]; }

    bool sealed() const { return sealed_; }
    std::size_t label_reads() const { return *label_reads_; }

    // The only sanctioned path to a word label.
    const std::optional<std::string>& word(std::size_t i) const {
        if (sealed_) throw Error("Corpus: label access on a sealed corpus (id '" + utts_[i].id + "')");
        ++*label_reads_;
        return utts_[i].word;
    }

    bool has_word(std::size_t i) const { return utts_[i].word.has_value(); }

    // Sealed view: labels are stripped outright so no access path remains,
    // and the label-read counter starts at zero for the audit.
    Corpus sealed_view() const {
        Corpus c = *this;
        for (auto& u : c.utts_) u.word.reset();
        c.sealed_ = true;
        c.label_reads_ = std::make_shared<std::size_t>(0);
        return c;
    }

    std::vector<std::string> distinct_words() const {
        require(!sealed_, "Corpus: distinct_words on a sealed corpus");
        std::vector<std::string> out;
        for (const auto& u : utts_)
            if (u.word && std::find(out.begin(), out.end(), *u.word) == out.end())
                out.push_back(*u.word);
        std::sort(out.begin(), out.end());
        return out;
    }

    template <typename Pred>
    Corpus filtered(Pred pred) const {
        Corpus out;
        out.sealed_ = sealed_;
        out.label_reads_ = label_reads_;
        for (const auto& u : utts_)
            if (pred(u)) out.add(u);
        return out;
    }

private:
    std::vector<Utterance> utts_;
    std::set<std::string> ids_;
    bool sealed_ = false;
    std::shared_ptr<std::size_t> label_reads_;
};

struct IngestReport {
    std::size_t loaded = 0;
    std::size_t skipped = 0;
    std::vector<std::string> errors;
};

// <root>/<word>/*.wav, one clean utterance per file, word = directory name.
// Unreadable files are skipped and counted.
inline Corpus ingest_single_word_corpus(const std::string& root, IngestReport* report = nullptr) {
    namespace fs = std::filesystem;
    require(fs::is_directory(root), "ingest: not a directory: " + root);
    IngestReport local;
    Corpus corpus;
    std::vector<fs::path> word_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) word_dirs.push_back(e.path());
    std::sort(word_dirs.begin(), word_dirs.end());
    for (const auto& dir : word_dirs) {
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(dir))
            if (f.path().extension() == ".wav") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            Utterance u;
            u.word = dir.filename().string();
            u.id = *u.word + "/" + f.stem().string();
            u.source = Source::SingleWordCorpus;
            u.path = f.string();
            try {
                u.clip = to_canonical(load_wav(u.path));
            } catch (const Error& e) {
                ++local.skipped;
                local.errors.push_back(e.what());
                continue;
            }
            corpus.add(std::move(u));
            ++local.loaded;
        }
    }
    require(!corpus.empty(), "ingest: empty corpus under " + root);
    if (report) *report = local;
    return corpus;
}

// Alignment manifest row: audio_id <TAB> word <TAB> start_s <TAB> end_s
struct AlignmentRow {
    std::string audio_id;
    std::string word;
    double start_s = 0.0;
    double end_s = 0.0;
};

inline std::vector<AlignmentRow> load_alignment_tsv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_alignment_tsv: cannot open " + path);
    std::vector<AlignmentRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        AlignmentRow r;
        std::string start, end;
        require(std::getline(ss, r.audio_id, '\t') && std::getline(ss, r.word, '\t') &&
                    std::getline(ss, start, '\t') && std::getline(ss, end, '\t'),
                "load_alignment_tsv: malformed row: " + line);
        r.start_s = std::stod(start);
        r.end_s = std::stod(end);
        rows.push_back(std::move(r));
    }
    return rows;
}

// Cuts one utterance per alignment row out of the referenced long audio.
// Words are recorded but a sealed view hides them from SSC consumers.
inline Corpus chunk_by_manifest(const std::map<std::string, AudioClip>& audio,
                                const std::vector<AlignmentRow>& manifest) {
    Corpus corpus;
    std::size_t row_idx = 0;
    for (const auto& r : manifest) {
        auto it = audio.find(r.audio_id);
        require(it != audio.end(), "chunk_by_manifest: unknown audio_id '" + r.audio_id + "'");
        const AudioClip& src = it->second;
        require(r.start_s >= 0 && r.start_s < r.end_s && r.end_s <= src.duration_s() + 1e-9,
                "chunk_by_manifest: timestamps out of range for '" + r.audio_id + "'");
        const std::size_t lo = static_cast<std::size_t>(std::llround(r.start_s * src.sample_rate_hz));
        const std::size_t hi = std::min(
            src.samples.size(), static_cast<std::size_t>(std::llround(r.end_s * src.sample_rate_hz)));
        Utterance u;
        u.id = r.audio_id + "#" + std::to_string(row_idx++);
        u.word = r.word;
        u.source = Source::ChunkedLongAudio;
        u.clip = AudioClip{{src.samples.begin() + lo, src.samples.begin() + hi}, src.sample_rate_hz};
        corpus.add(std::move(u));
    }
    return corpus;
}

struct VadParams {
    double frame_s = 0.010;
    double floor_percentile = 0.10;  // noise-floor estimate
    double margin_db = 9.0;
    double peak_backoff_db = 3.0;    // threshold never exceeds peak - backoff
    double silence_floor_db = -60.0; // absolute gate: quieter frames are never speech
    int min_on_frames = 5;
    int hangover_frames = 2;
};

// Energy VAD: frames whose log energy exceeds the estimated noise floor by
// margin_db for at least min_on frames form a segment, extended by hangover.
// The threshold is capped at peak - backoff so an all-speech clip (no noise
// floor to estimate) is still detected, and gated by an absolute silence
// floor so an all-silence clip yields nothing.
inline std::vector<std::pair<double, double>> chunk_by_vad(const AudioClip& clip,
                                                           const VadParams& p = {}) {
    require(clip.sample_rate_hz == kCanonicalRateHz, "chunk_by_vad: clip must be 16 kHz");
    const int flen = static_cast<int>(std::llround(p.frame_s * clip.sample_rate_hz));
    const int n_frames = static_cast<int>(clip.samples.size()) / flen;
    if (n_frames == 0) return {};

    std::vector<double> energy_db(n_frames);
    for (int t = 0; t < n_frames; ++t) {
        double e = 0.0;
        for (int i = 0; i < flen; ++i) {
            const double s = clip.samples[static_cast<std::size_t>(t) * flen + i];
            e += s * s;
        }
        energy_db[t] = 10.0 * std::log10(std::max(e / flen, 1e-12));
    }
    std::vector<double> sorted = energy_db;
    std::sort(sorted.begin(), sorted.end());
    const double floor_db = sorted[static_cast<std::size_t>(p.floor_percentile * (n_frames - 1))];
    const double peak_db = sorted.back();
    const double thresh = std::min(floor_db + p.margin_db, peak_db - p.peak_backoff_db);

    std::vector<std::pair<double, double>> segments;
    int run_start = -1;
    for (int t = 0; t <= n_frames; ++t) {
        const bool on =
            t < n_frames && energy_db[t] > thresh && energy_db[t] > p.silence_floor_db;
        if (on && run_start < 0) run_start = t;
        if (!on && run_start >= 0) {
            if (t - run_start >= p.min_on_frames) {
                const int end = std::min(n_frames, t + p.hangover_frames);
                segments.emplace_back(run_start * p.frame_s, end * p.frame_s);
            }
            run_start = -1;
        }
    }
    // Hangover extension can make a segment touch its successor; merge.
    std::vector<std::pair<double, double>> merged;
    for (const auto& s : segments) {
        if (!merged.empty() && s.first <= merged.back().second)
            merged.back().second = std::max(merged.back().second, s.second);
        else
            merged.push_back(s);
    }
    return merged;
}

inline Corpus filter_min_duration(const Corpus& corpus, double min_s) {
    require(min_s >= 0, "filter_min_duration: negative threshold");
    return corpus.filtered([&](const Utterance& u) {
        const double d = u.clip ? u.clip->duration_s()
                                : to_canonical(load_wav(u.path)).duration_s();
        return d >= min_s;
    });
}

struct SplitPlan {
    std::vector<std::string> pretask_words;
    std::vector<std::string> maintask_words;
    double train_fraction = 0.8;
    double set1_fraction = 0.3;
    std::uint64_t seed = 0;
};

struct Partition {
    Corpus pretask_train;
    Corpus set1;
    Corpus set2;
    Corpus maintask_train;
    Corpus maintask_test;
};

// Labeled corpora: pre-task/main-task by word list (disjoint), whole-word
// set-1/set-2 assignment, per-word stratified train/test split.
// Unlabeled (sealed or word-less) corpora: everything is pre-task and the
// set split assigns individual utterances, exact by shuffled prefix.
inline Partition partition(const Corpus& corpus, const SplitPlan& plan) {
    require(plan.train_fraction > 0 && plan.train_fraction < 1, "partition: train_fraction out of range");
    require(plan.set1_fraction > 0 && plan.set1_fraction < 1, "partition: set1_fraction out of range");
    for (const auto& w : plan.pretask_words)
        require(std::find(plan.maintask_words.begin(), plan.maintask_words.end(), w) ==
                    plan.maintask_words.end(),
                "partition: word '" + w + "' in both pre-task and main-task lists");

    Partition out;
    const bool labeled = !corpus.sealed() && !plan.pretask_words.empty();

    if (!labeled) {
        // Per-utterance set split.
        std::vector<std::size_t> idx(corpus.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(derive_seed(plan.seed, "set_split"));
        shuffle(idx, rng);
        const std::size_t n1 = static_cast<std::size_t>(
            std::llround(plan.set1_fraction * static_cast<double>(idx.size())));
        std::vector<bool> in_set1(corpus.size(), false);
        for (std::size_t i = 0; i < n1; ++i) in_set1[idx[i]] = true;
        Corpus base = corpus;
        out.pretask_train = base.filtered([](const Utterance&) { return true; });
        out.set1 = base.filtered([&, i = std::size_t(0)](const Utterance&) mutable {
            return in_set1[i++];
        });
        out.set2 = base.filtered([&, i = std::size_t(0)](const Utterance&) mutable {
            return !in_set1[i++];
        });
        // Tag the set membership on the emitted corpora.
        auto tag = [](Corpus& c, SetTag t) {
            Corpus tagged;
            for (std::size_t i = 0; i < c.size(); ++i) {
                Utterance u = c.at(i);
                u.set_tag = t;
                tagged.add(std::move(u));
            }
            if (c.sealed()) tagged = tagged.sealed_view();
            c = std::move(tagged);
        };
        tag(out.set1, SetTag::Set1);
        tag(out.set2, SetTag::Set2);
        return out;
    }

    const auto words = corpus.distinct_words();
    for (const auto& w : plan.pretask_words)
        require(std::find(words.begin(), words.end(), w) != words.end(),
                "partition: pre-task word '" + w + "' not in corpus");
    for (const auto& w : plan.maintask_words)
        require(std::find(words.begin(), words.end(), w) != words.end(),
                "partition: main-task word '" + w + "' not in corpus");

    auto word_of = [&](const Utterance& u) { return u.word ? *u.word : std::string(); };
    auto in_list = [](const std::vector<std::string>& l, const std::string& w) {
        return std::find(l.begin(), l.end(), w) != l.end();
    };

    out.pretask_train =
        corpus.filtered([&](const Utterance& u) { return in_list(plan.pretask_words, word_of(u)); });

    // Whole-word set assignment for the pseudo-supervised split.
    std::vector<std::string> shuffled_words = plan.pretask_words;
    Rng wrng(derive_seed(plan.seed, "word_set_split"));
    shuffle(shuffled_words, wrng);
    const std::size_t n1_words = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(plan.set1_fraction * shuffled_words.size())));
    std::vector<std::string> set1_words(shuffled_words.begin(), shuffled_words.begin() + n1_words);
    auto tag_filtered = [&](bool want_set1, SetTag t) {
        Corpus c;
        for (std::size_t i = 0; i < out.pretask_train.size(); ++i) {
            const Utterance& u = out.pretask_train.at(i);
            if (in_list(set1_words, word_of(u)) == want_set1) {
                Utterance v = u;
                v.set_tag = t;
                c.add(std::move(v));
            }
        }
        return c;
    };
    out.set1 = tag_filtered(true, SetTag::Set1);
    out.set2 = tag_filtered(false, SetTag::Set2);

    // Per-word stratified train/test split of the main task.
    std::set<std::string> test_ids;
    for (const auto& w : plan.maintask_words) {
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < corpus.size(); ++i)
            if (word_of(corpus.at(i)) == w) ids.push_back(corpus.at(i).id);
        Rng rng(derive_seed(plan.seed, "train_test/" + w));
        shuffle(ids, rng);
        const std::size_t n_train = static_cast<std::size_t>(
            std::llround(plan.train_fraction * static_cast<double>(ids.size())));
        for (std::size_t i = n_train; i < ids.size(); ++i) test_ids.insert(ids[i]);
    }
    out.maintask_train = corpus.filtered([&](const Utterance& u) {
        return in_list(plan.maintask_words, word_of(u)) && !test_ids.count(u.id);
    });
    out.maintask_test = corpus.filtered([&](const Utterance& u) {
        return in_list(plan.maintask_words, word_of(u)) && test_ids.count(u.id) > 0;
    });
    return out;
}

// Center-crop when longer, symmetric zero-pad when shorter; exact target
// length (extra sample goes to the tail).
inline AudioClip pad_or_crop(const AudioClip& clip, double target_s = 1.0) {
    require(target_s > 0, "pad_or_crop: target must be positive");
    const std::size_t target =
        static_cast<std::size_t>(std::llround(target_s * clip.sample_rate_hz));
    const std::size_t n = clip.samples.size();
    if (n == target) return clip;
    AudioClip out;
    out.sample_rate_hz = clip.sample_rate_hz;
    out.samples.assign(target, 0.0);
    if (n > target) {
        const std::size_t off = (n - target) / 2;
        std::copy(clip.samples.begin() + off, clip.samples.begin() + off + target,
                  out.samples.begin());
    } else {
        const std::size_t off = (target - n) / 2;
        std::copy(clip.samples.begin(), clip.samples.end(), out.samples.begin() + off);
    }
    return out;
}

inline Utterance pad_or_crop(const Utterance& utt, double target_s = 1.0) {
    Utterance out = utt;
    out.clip = pad_or_crop(utterance_audio(utt), target_s);
    return out;
}

// Corpus manifest: one JSON object per line; a leading header line records
// the seal. In-memory clips are written as wavs under audio_dir.
inline void save_corpus(const Corpus& corpus, const std::string& manifest_path,
                        const std::string& audio_dir = "") {
    namespace fs = std::filesystem;
    std::ofstream out(manifest_path);
    require(out.good(), "save_corpus: cannot open " + manifest_path);
    out << nlohmann::json{{"type", "header"}, {"sealed", corpus.sealed()}}.dump() << '\n';
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        Utterance u = corpus.at(i);
        if (u.clip && u.path.empty()) {
            require(!audio_dir.empty(), "save_corpus: in-memory clip but no audio_dir");
            fs::create_directories(audio_dir);
            std::string name = u.id;
            std::replace(name.begin(), name.end(), '/', '_');
            std::replace(name.begin(), name.end(), '#', '_');
            u.path = (fs::path(audio_dir) / (name + ".wav")).string();
            save_wav(u.path, *u.clip);
        }
        nlohmann::json j{{"id", u.id},
                         {"source", u.source == Source::SingleWordCorpus ? "single_word_corpus"
                                                                         : "chunked_long_audio"},
                         {"set_tag", u.set_tag == SetTag::None   ? "none"
                                     : u.set_tag == SetTag::Set1 ? "set1"
                                                                 : "set2"},
                         {"path", u.path}};
        if (!corpus.sealed() && u.word) j["word"] = *u.word;
        if (u.speaker) j["speaker"] = *u.speaker;
        j["variant"] = u.aug ? u.aug->to_json() : nlohmann::json("clean");
        out << j.dump() << '\n';
    }
    require(out.good(), "save_corpus: write failed");
}

inline Corpus load_corpus(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    require(in.good(), "load_corpus: cannot open " + manifest_path);
    Corpus corpus;
    bool sealed = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        if (j.value("type", "") == "header") {
            sealed = j.value("sealed", false);
            continue;
        }
        Utterance u;
        u.id = j.at("id").get<std::string>();
        if (j.contains("word")) u.word = j["word"].get<std::string>();
        if (j.contains("speaker")) u.speaker = j["speaker"].get<std::string>();
        u.source = j.value("source", "single_word_corpus") == "chunked_long_audio"
                       ? Source::ChunkedLongAudio
                       : Source::SingleWordCorpus;
        const std::string tag = j.value("set_tag", "none");
        u.set_tag = tag == "set1" ? SetTag::Set1 : tag == "set2" ? SetTag::Set2 : SetTag::None;
        u.path = j.value("path", "");
        if (!j.at("variant").is_string()) u.aug = AugmentSpec::from_json(j["variant"]);
        corpus.add(std::move(u));
    }
    return sealed ? corpus.sealed_view() : corpus;
}

}  // namespace kws
