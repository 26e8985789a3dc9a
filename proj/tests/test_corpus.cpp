#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>

#include <kws/corpus.hpp>

#include "helpers.hpp"

using namespace kws;
namespace fs = std::filesystem;

namespace {

// 3 words x 2 files, each word a distinct tone.
std::string make_fixture_tree() {
    const fs::path root = fs::temp_directory_path() / "kws_corpus_fixture";
    fs::remove_all(root);
    const std::map<std::string, double> words = {{"four", 500.0}, {"marvin", 900.0}, {"right", 1400.0}};
    int n = 0;
    for (const auto& [word, freq] : words) {
        fs::create_directories(root / word);
        for (int i = 0; i < 2; ++i)
            save_wav((root / word / ("utt" + std::to_string(i) + ".wav")).string(),
                     synth_sine(freq + 10.0 * i, 0.4, 1.0));
        ++n;
    }
    return root.string();
}

}  // namespace

TEST_CASE("ingest_single_word_corpus: words from directory names") {
    const auto root = make_fixture_tree();
    Corpus corpus = ingest_single_word_corpus(root);
    REQUIRE(corpus.size() == 6);
    REQUIRE(corpus.distinct_words() == std::vector<std::string>{"four", "marvin", "right"});
    bool saw_four = false;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        if (corpus.at(i).id.rfind("four/", 0) == 0) {
            REQUIRE(corpus.word(i) == "four");
            saw_four = true;
        }
    REQUIRE(saw_four);
}

TEST_CASE("ingest: deterministic ids and ordering, unreadable files skipped") {
    const auto root = make_fixture_tree();
    std::ofstream((fs::path(root) / "four" / "broken.wav").string()) << "junk";
    IngestReport report;
    Corpus a = ingest_single_word_corpus(root, &report);
    REQUIRE(report.skipped == 1);
    REQUIRE(report.loaded == 6);
    Corpus b = ingest_single_word_corpus(root);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a.at(i).id == b.at(i).id);
    REQUIRE_THROWS_AS(ingest_single_word_corpus((fs::path(root) / "nonexistent").string()), Error);
}

TEST_CASE("chunk_by_manifest: sample-exact cuts") {
    std::map<std::string, AudioClip> audio;
    audio["a"] = synth_noise(0.5, 2.0, 1);
    std::vector<AlignmentRow> rows = {{"a", "house", 0.5, 1.0}};
    Corpus corpus = chunk_by_manifest(audio, rows);
    REQUIRE(corpus.size() == 1);
    REQUIRE(corpus.at(0).clip->samples.size() == 8000);
    REQUIRE(corpus.word(0) == "house");
    REQUIRE(corpus.at(0).source == Source::ChunkedLongAudio);
}

TEST_CASE("chunk_by_manifest: empty manifest, overlaps, and range errors") {
    std::map<std::string, AudioClip> audio;
    audio["a"] = synth_noise(0.5, 2.0, 1);
    REQUIRE(chunk_by_manifest(audio, {}).empty());

    std::vector<AlignmentRow> overlapping = {{"a", "x", 0.2, 0.8}, {"a", "y", 0.5, 1.2}};
    REQUIRE(chunk_by_manifest(audio, overlapping).size() == 2);

    REQUIRE_THROWS_AS(chunk_by_manifest(audio, {{"a", "x", 1.5, 2.5}}), Error);
    REQUIRE_THROWS_AS(chunk_by_manifest(audio, {{"missing", "x", 0.0, 0.5}}), Error);
}

TEST_CASE("alignment TSV round-trip") {
    const auto path = (fs::temp_directory_path() / "kws_align.tsv").string();
    std::ofstream(path) << "a\thouse\t0.5\t1.0\nb\tcat\t0\t0.25\n";
    auto rows = load_alignment_tsv(path);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].word == "house");
    REQUIRE(rows[1].end_s == 0.25);
}

TEST_CASE("chunk_by_vad: silence yields nothing") {
    AudioClip silence;
    silence.samples.assign(16000, 0.0);
    REQUIRE(chunk_by_vad(silence).empty());
}

TEST_CASE("chunk_by_vad: recovers a synthetic burst schedule within 30 ms") {
    std::vector<ToneBurst> schedule = {{0.2, 0.5, 700.0}, {1.0, 1.3, 700.0}};
    auto [clip, truth] = synth_tone_bursts(schedule, 2.0, 0.01, 7);
    auto segments = chunk_by_vad(clip);
    REQUIRE(segments.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        REQUIRE(std::abs(segments[i].first - truth[i].start_s) <= 0.03);
        REQUIRE(std::abs(segments[i].second - truth[i].end_s) <= 0.03);
    }
}

TEST_CASE("chunk_by_vad: continuous tone gives one near-full segment") {
    AudioClip clip = synth_sine(800.0, 0.5, 1.0);
    // inject a touch of floor noise so the percentile floor sits below the tone
    AudioClip floor_noise = synth_noise(0.002, 1.0, 3);
    for (std::size_t i = 0; i < clip.samples.size(); ++i) clip.samples[i] += floor_noise.samples[i];
    auto segments = chunk_by_vad(clip);
    REQUIRE(segments.size() == 1);
    REQUIRE(segments[0].second - segments[0].first > 0.8);
}

TEST_CASE("filter_min_duration keeps order and applies the threshold") {
    Corpus corpus;
    int k = 0;
    for (double d : {0.2, 0.5, 0.9}) {
        Utterance u;
        u.id = "u" + std::to_string(k++);
        u.word = "w";
        u.clip = synth_noise(0.3, d, k);
        corpus.add(std::move(u));
    }
    REQUIRE(filter_min_duration(corpus, 0.0).size() == 3);
    Corpus kept = filter_min_duration(corpus, 0.4);
    REQUIRE(kept.size() == 2);
    REQUIRE(kept.at(0).id == "u1");
    REQUIRE(kept.at(1).id == "u2");
}

TEST_CASE("partition: unlabeled 30:70 split is exact and disjoint") {
    Corpus corpus;
    for (int i = 0; i < 100; ++i) {
        Utterance u;
        u.id = "c" + std::to_string(i);
        u.clip = synth_noise(0.3, 0.5, i);
        u.source = Source::ChunkedLongAudio;
        corpus.add(std::move(u));
    }
    Corpus sealed = corpus.sealed_view();
    SplitPlan plan;
    plan.set1_fraction = 0.3;
    plan.seed = 5;
    Partition part = partition(sealed, plan);
    REQUIRE(part.set1.size() == 30);
    REQUIRE(part.set2.size() == 70);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < part.set1.size(); ++i) {
        REQUIRE(part.set1.at(i).set_tag == SetTag::Set1);
        ids.insert(part.set1.at(i).id);
    }
    for (std::size_t i = 0; i < part.set2.size(); ++i) {
        REQUIRE(part.set2.at(i).set_tag == SetTag::Set2);
        REQUIRE(!ids.count(part.set2.at(i).id));
    }
    // determinism
    Partition again = partition(sealed, plan);
    for (std::size_t i = 0; i < part.set1.size(); ++i)
        REQUIRE(again.set1.at(i).id == part.set1.at(i).id);
}

TEST_CASE("partition: labeled corpora keep pre-task and main-task words disjoint") {
    Corpus corpus;
    std::vector<std::string> all_words;
    for (int w = 0; w < 8; ++w) {
        const std::string word = "w" + std::to_string(w);
        all_words.push_back(word);
        for (int i = 0; i < 5; ++i) {
            Utterance u;
            u.id = word + "/" + std::to_string(i);
            u.word = word;
            u.clip = synth_noise(0.3, 0.5, w * 100 + i);
            corpus.add(std::move(u));
        }
    }
    SplitPlan plan;
    plan.pretask_words = {"w0", "w1", "w2", "w3", "w4"};
    plan.maintask_words = {"w5", "w6", "w7"};
    plan.seed = 11;
    Partition part = partition(corpus, plan);
    REQUIRE(part.pretask_train.size() == 25);
    REQUIRE(part.maintask_train.size() + part.maintask_test.size() == 15);
    for (std::size_t i = 0; i < part.pretask_train.size(); ++i) {
        const auto& w = part.pretask_train.word(i);
        REQUIRE(std::find(plan.maintask_words.begin(), plan.maintask_words.end(), *w) ==
                plan.maintask_words.end());
    }
    // stratified 80/20: each main-task word contributes 4 train, 1 test
    REQUIRE(part.maintask_train.size() == 12);
    REQUIRE(part.maintask_test.size() == 3);
    // whole-word set assignment: no word straddles the sets
    std::set<std::string> set1_words, set2_words;
    for (std::size_t i = 0; i < part.set1.size(); ++i) set1_words.insert(*part.set1.word(i));
    for (std::size_t i = 0; i < part.set2.size(); ++i) set2_words.insert(*part.set2.word(i));
    for (const auto& w : set1_words) REQUIRE(!set2_words.count(w));

    SplitPlan bad = plan;
    bad.maintask_words.push_back("w0");
    REQUIRE_THROWS_AS(partition(corpus, bad), Error);
}

TEST_CASE("label seal: access is an error and the counter stays zero") {
    Corpus corpus;
    Utterance u;
    u.id = "x";
    u.word = "secret";
    u.clip = synth_noise(0.3, 0.5, 1);
    corpus.add(std::move(u));
    Corpus sealed = corpus.sealed_view();
    REQUIRE(sealed.sealed());
    REQUIRE_THROWS_AS(sealed.word(0), Error);
    REQUIRE(sealed.label_reads() == 0);
    REQUIRE(!sealed.at(0).word.has_value());  // stripped outright
    // the unsealed original still counts reads
    REQUIRE(corpus.word(0) == "secret");
    REQUIRE(corpus.label_reads() == 1);
}

TEST_CASE("pad_or_crop: identity, symmetric pad, center crop") {
    AudioClip exact = synth_noise(0.3, 1.0, 1);
    REQUIRE(pad_or_crop(exact).samples == exact.samples);

    AudioClip half = synth_noise(0.3, 0.5, 2);
    AudioClip padded = pad_or_crop(half);
    REQUIRE(padded.samples.size() == 16000);
    for (int i = 0; i < 4000; ++i) {
        REQUIRE(padded.samples[i] == 0.0);
        REQUIRE(padded.samples[16000 - 1 - i] == 0.0);
    }
    for (int i = 0; i < 8000; ++i) REQUIRE(padded.samples[4000 + i] == half.samples[i]);

    AudioClip longer = synth_noise(0.3, 1.4, 3);
    AudioClip cropped = pad_or_crop(longer);
    REQUIRE(cropped.samples.size() == 16000);
    const std::size_t off = (longer.samples.size() - 16000) / 2;
    for (int i = 0; i < 16000; ++i) REQUIRE(cropped.samples[i] == longer.samples[off + i]);
}

TEST_CASE("corpus manifest round-trips, including the seal") {
    Corpus corpus;
    for (int i = 0; i < 4; ++i) {
        Utterance u;
        u.id = "u" + std::to_string(i);
        u.word = i % 2 ? "yes" : "no";
        u.clip = synth_noise(0.3, 0.5, i);
        u.source = Source::ChunkedLongAudio;
        u.set_tag = i < 2 ? SetTag::Set1 : SetTag::Set2;
        corpus.add(std::move(u));
    }
    const fs::path dir = fs::temp_directory_path() / "kws_manifest_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto manifest = (dir / "corpus.jsonl").string();
    save_corpus(corpus, manifest, (dir / "audio").string());
    Corpus back = load_corpus(manifest);
    REQUIRE(back.size() == 4);
    REQUIRE(back.word(0) == "no");
    REQUIRE(back.at(3).set_tag == SetTag::Set2);
    AudioClip audio = utterance_audio(back.at(0));
    REQUIRE(audio.samples.size() == 8000);

    const auto sealed_manifest = (dir / "sealed.jsonl").string();
    save_corpus(corpus.sealed_view(), sealed_manifest, (dir / "audio2").string());
    Corpus sealed_back = load_corpus(sealed_manifest);
    REQUIRE(sealed_back.sealed());
    REQUIRE_THROWS_AS(sealed_back.word(0), Error);
}
