#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include <kws/pairing.hpp>

#include "helpers.hpp"

using namespace kws;

namespace {

// Labeled corpus: n_words words x n_per utterances, distinct tones per word.
Corpus make_labeled(int n_words, int n_per, std::uint64_t seed = 1) {
    Corpus corpus;
    for (int w = 0; w < n_words; ++w)
        for (int i = 0; i < n_per; ++i) {
            Utterance u;
            u.id = "w" + std::to_string(w) + "/" + std::to_string(i);
            u.word = "w" + std::to_string(w);
            u.clip = synth_sine(300.0 + 100.0 * w, 0.4, 0.5);
            (void)seed;
            corpus.add(std::move(u));
        }
    return corpus;
}

std::map<std::string, std::string> word_by_id(const Corpus& corpus) {
    std::map<std::string, std::string> out;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        out[corpus.at(i).id] = corpus.word(i).value_or("");
    return out;
}

PairPlanConfig synthetic_cfg(std::uint64_t seed) {
    PairPlanConfig cfg;
    cfg.seed = seed;
    cfg.sampler.noise_ids = {"white", "tonal"};
    return cfg;
}

}  // namespace

TEST_CASE("SC admissibility holds over a large manifest") {
    Corpus corpus = make_labeled(10, 60);
    PairPlanConfig cfg = synthetic_cfg(7);
    cfg.pos_per_utterance = 5;
    cfg.neg_per_utterance = 5;
    PairManifest pairs = gen_supervised(corpus, cfg);
    REQUIRE(pairs.size() >= 6000);
    auto words = word_by_id(corpus);
    for (const auto& p : pairs) {
        REQUIRE(p.strategy == Strategy::SC);
        if (p.polarity == Polarity::Positive) {
            REQUIRE(words.at(p.a_id) == words.at(p.b_id));
            if (p.a_id == p.b_id) REQUIRE(p.aug_b.has_value());
        } else {
            REQUIRE(words.at(p.a_id) != words.at(p.b_id));
        }
    }
}

TEST_CASE("SC toy corpus: 2 words x 1 utterance yields 2 positives + 2 negatives") {
    Corpus corpus = make_labeled(2, 1);
    PairPlanConfig cfg = synthetic_cfg(3);
    cfg.pos_per_utterance = 1;
    cfg.neg_per_utterance = 1;
    PairManifest pairs = gen_supervised(corpus, cfg);
    REQUIRE(pairs.size() == 4);  // 2 utterances x (1 pos + 1 neg)
    int pos = 0, neg = 0;
    for (const auto& p : pairs) {
        if (p.polarity == Polarity::Positive) {
            ++pos;
            // with only one utterance per word, every positive is a self-augmentation
            REQUIRE(p.a_id == p.b_id);
            REQUIRE(p.aug_b.has_value());
        } else {
            ++neg;
            REQUIRE(p.a_id != p.b_id);
        }
    }
    REQUIRE(pos == 2);
    REQUIRE(neg == 2);
}

TEST_CASE("pair generation is deterministic per seed") {
    Corpus corpus = make_labeled(4, 6);
    auto a = gen_supervised(corpus, synthetic_cfg(11));
    auto b = gen_supervised(corpus, synthetic_cfg(11));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].a_id == b[i].a_id);
        REQUIRE(a[i].b_id == b[i].b_id);
        REQUIRE(a[i].polarity == b[i].polarity);
        REQUIRE(a[i].aug_b.has_value() == b[i].aug_b.has_value());
        if (a[i].aug_b) REQUIRE(a[i].aug_b->to_json() == b[i].aug_b->to_json());
    }
    auto c = gen_supervised(corpus, synthetic_cfg(12));
    bool any_diff = c.size() != a.size();
    for (std::size_t i = 0; !any_diff && i < a.size(); ++i)
        any_diff = a[i].b_id != c[i].b_id || a[i].aug_b.has_value() != c[i].aug_b.has_value();
    REQUIRE(any_diff);
}

TEST_CASE("PSC admissibility: positives self-augment in set 1, negatives cross sets") {
    Corpus corpus = make_labeled(10, 40);
    std::vector<std::string> set1 = {"w0", "w1", "w2"};
    std::vector<std::string> set2 = {"w3", "w4", "w5", "w6", "w7", "w8", "w9"};
    PairPlanConfig cfg = synthetic_cfg(21);
    cfg.pos_per_utterance = 6;
    cfg.neg_per_utterance = 6;
    PairManifest pairs = gen_pseudo_supervised(corpus, set1, set2, cfg);
    REQUIRE(pairs.size() >= 1200);
    auto words = word_by_id(corpus);
    auto in = [](const std::vector<std::string>& l, const std::string& w) {
        return std::find(l.begin(), l.end(), w) != l.end();
    };
    for (const auto& p : pairs) {
        REQUIRE(p.strategy == Strategy::PSC);
        if (p.polarity == Polarity::Positive) {
            REQUIRE(p.a_id == p.b_id);  // only (u, aug(u)) positives
            REQUIRE(p.aug_b.has_value());
            REQUIRE(in(set1, words.at(p.a_id)));
        } else {
            REQUIRE(in(set1, words.at(p.a_id)));
            REQUIRE(in(set2, words.at(p.b_id)));
        }
    }
    // overlapping sets rejected
    REQUIRE_THROWS_AS(gen_pseudo_supervised(corpus, {"w0"}, {"w0", "w1"}, cfg), Error);
}

TEST_CASE("SSC requires a sealed corpus and never reads a label") {
    Corpus corpus = make_labeled(6, 30);
    // tag utterances by index parity to stand in for a chunk split
    Corpus tagged;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        Utterance u = corpus.at(i);
        u.set_tag = i % 3 == 0 ? SetTag::Set1 : SetTag::Set2;
        tagged.add(std::move(u));
    }
    REQUIRE_THROWS_AS(gen_self_supervised_chunked(tagged, synthetic_cfg(5)), Error);

    Corpus sealed = tagged.sealed_view();
    PairManifest pairs = gen_self_supervised_chunked(sealed, synthetic_cfg(5));
    REQUIRE(sealed.label_reads() == 0);
    REQUIRE(!pairs.empty());

    std::set<std::string> set1_ids, set2_ids;
    for (std::size_t i = 0; i < sealed.size(); ++i)
        (sealed.at(i).set_tag == SetTag::Set1 ? set1_ids : set2_ids).insert(sealed.at(i).id);
    for (const auto& p : pairs) {
        REQUIRE(p.strategy == Strategy::SSC);
        if (p.polarity == Polarity::Positive) {
            REQUIRE(p.a_id == p.b_id);
            REQUIRE(p.aug_b.has_value());
            REQUIRE(set1_ids.count(p.a_id) == 1);
        } else {
            REQUIRE(set1_ids.count(p.a_id) == 1);
            REQUIRE(set2_ids.count(p.b_id) == 1);
        }
    }
}

TEST_CASE("SSHN negatives stay within their batch") {
    Corpus corpus = make_labeled(5, 13);  // 65 utterances
    PairPlanConfig cfg = synthetic_cfg(31);
    const int batch_size = 16;
    PairManifest pairs = gen_self_supervised_hard_negative(corpus, batch_size, cfg);

    // Recover the batch assignment the generator used.
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng batch_rng(derive_seed(cfg.seed, "sshn/batches"));
    shuffle(order, batch_rng);
    std::map<std::string, int> batch_of;
    for (std::size_t k = 0; k < order.size(); ++k)
        batch_of[corpus.at(order[k]).id] = static_cast<int>(k / batch_size);

    for (const auto& p : pairs) {
        REQUIRE(p.strategy == Strategy::SSHN);
        if (p.polarity == Polarity::Positive) {
            REQUIRE(p.a_id == p.b_id);
            REQUIRE(p.aug_b.has_value());
        } else {
            REQUIRE(p.a_id != p.b_id);
            REQUIRE(batch_of.at(p.a_id) == batch_of.at(p.b_id));
        }
    }
}

TEST_CASE("SSHN hard-negative rate matches the enumerated expectation") {
    // 5 words x 13 utterances, batch = whole corpus: a uniform non-self pick
    // shares the word with probability 12/64.
    Corpus corpus = make_labeled(5, 13);
    PairPlanConfig cfg = synthetic_cfg(99);
    cfg.neg_per_utterance = 200;
    PairManifest pairs =
        gen_self_supervised_hard_negative(corpus, static_cast<int>(corpus.size()), cfg);
    auto words = word_by_id(corpus);
    std::size_t negatives = 0, hard = 0;
    for (const auto& p : pairs)
        if (p.polarity == Polarity::Negative) {
            ++negatives;
            if (words.at(p.a_id) == words.at(p.b_id)) ++hard;
        }
    REQUIRE(negatives == corpus.size() * 200);
    const double expected = 12.0 / 64.0;
    const double observed = static_cast<double>(hard) / static_cast<double>(negatives);
    REQUIRE(std::abs(observed - expected) < 0.02);
    REQUIRE(hard > 0);  // hard negatives occur by construction
}

TEST_CASE("pair manifests round-trip through JSON lines") {
    Corpus corpus = make_labeled(3, 4);
    PairManifest pairs = gen_supervised(corpus, synthetic_cfg(2));
    const auto path =
        (std::filesystem::temp_directory_path() / "kws_pairs.jsonl").string();
    save_pairs(pairs, path);
    PairManifest back = load_pairs(path);
    REQUIRE(back.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        REQUIRE(back[i].a_id == pairs[i].a_id);
        REQUIRE(back[i].b_id == pairs[i].b_id);
        REQUIRE(back[i].polarity == pairs[i].polarity);
        REQUIRE(back[i].strategy == pairs[i].strategy);
        REQUIRE(back[i].aug_b.has_value() == pairs[i].aug_b.has_value());
        if (pairs[i].aug_b) REQUIRE(back[i].aug_b->to_json() == pairs[i].aug_b->to_json());
    }
}
