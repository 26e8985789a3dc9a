#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/augment.hpp"
#include "kws/common.hpp"
#include "kws/corpus.hpp"

namespace kws {

enum class Polarity { Positive, Negative };
enum class Strategy { SC, PSC, SSC, SSHN };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::SC: return "SC";
        case Strategy::PSC: return "PSC";
        case Strategy::SSC: return "SSC";
        case Strategy::SSHN: return "SSHN";
    }
    return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
    if (s == "SC") return Strategy::SC;
    if (s == "PSC") return Strategy::PSC;
    if (s == "SSC") return Strategy::SSC;
    if (s == "SSHN") return Strategy::SSHN;
    throw Error("unknown strategy '" + s + "'");
}

struct Pair {
    std::string a_id;
    std::string b_id;
    Polarity polarity = Polarity::Positive;
    Strategy strategy = Strategy::SC;
    std::optional<AugmentSpec> aug_b;  // augmentation applied to the b side
};

using PairManifest = std::vector<Pair>;

struct PairPlanConfig {
    int pos_per_utterance = 2;
    int neg_per_utterance = 2;
    bool include_augmented_negatives = true;
    std::uint64_t seed = 0;
    AugmentSampler sampler;
};

namespace detail {

// k distinct draws from [0, n) without replacement.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle(idx, rng);
    idx.resize(std::min(n, k));
    return idx;
}

}  // namespace detail

// Supervised pairing: positives share a word (other utterance or own
// augmentation, 50/50); negatives cross words, drawn from clean and
// augmented pools.
inline PairManifest gen_supervised(const Corpus& corpus, const PairPlanConfig& cfg) {
    require(!corpus.sealed(), "gen_supervised: needs a labeled corpus");
    require(cfg.pos_per_utterance >= 1 && cfg.neg_per_utterance >= 1, "gen_supervised: counts must be >= 1");
    const auto words = corpus.distinct_words();
    require(words.size() >= 2, "gen_supervised: need at least two words for negatives");

    PairManifest out;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::string wi = corpus.word(i).value_or("");
        Rng rng(derive_seed(cfg.seed, "sc/" + corpus.at(i).id));

        std::vector<std::size_t> same, diff;
        for (std::size_t j = 0; j < corpus.size(); ++j) {
            if (j == i) continue;
            (corpus.word(j).value_or("") == wi ? same : diff).push_back(j);
        }

        for (int p = 0; p < cfg.pos_per_utterance; ++p) {
            Pair pair{corpus.at(i).id, "", Polarity::Positive, Strategy::SC, std::nullopt};
            const bool self_aug = same.empty() || rng.next_below(2) == 0;
            if (self_aug) {
                pair.b_id = corpus.at(i).id;
                pair.aug_b = cfg.sampler.draw(rng);
            } else {
                pair.b_id = corpus.at(same[rng.next_below(same.size())]).id;
            }
            out.push_back(std::move(pair));
        }
        for (auto j : detail::sample_without_replacement(diff.size(),
                                                         static_cast<std::size_t>(cfg.neg_per_utterance), rng)) {
            Pair pair{corpus.at(i).id, corpus.at(diff[j]).id, Polarity::Negative, Strategy::SC,
                      std::nullopt};
            if (cfg.include_augmented_negatives && rng.next_below(2) == 0)
                pair.aug_b = cfg.sampler.draw(rng);
            out.push_back(std::move(pair));
        }
    }
    return out;
}

// Pseudo-supervised pairing: positives are (u, aug(u)) for u in set-1 only;
// negatives pair a set-1 utterance with a set-2 utterance. No pairing of
// distinct utterances within a set.
inline PairManifest gen_pseudo_supervised(const Corpus& corpus,
                                          const std::vector<std::string>& set1_words,
                                          const std::vector<std::string>& set2_words,
                                          const PairPlanConfig& cfg) {
    require(!corpus.sealed(), "gen_pseudo_supervised: needs a labeled corpus");
    require(!set1_words.empty() && !set2_words.empty(), "gen_pseudo_supervised: empty word set");
    for (const auto& w : set1_words)
        require(std::find(set2_words.begin(), set2_words.end(), w) == set2_words.end(),
                "gen_pseudo_supervised: word '" + w + "' in both sets");

    std::vector<std::size_t> set1, set2;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::string w = corpus.word(i).value_or("");
        if (std::find(set1_words.begin(), set1_words.end(), w) != set1_words.end())
            set1.push_back(i);
        else if (std::find(set2_words.begin(), set2_words.end(), w) != set2_words.end())
            set2.push_back(i);
        else
            throw Error("gen_pseudo_supervised: word '" + w + "' not covered by the set split");
    }
    require(!set1.empty() && !set2.empty(), "gen_pseudo_supervised: a set has no utterances");

    PairManifest out;
    for (auto i : set1) {
        Rng rng(derive_seed(cfg.seed, "psc/" + corpus.at(i).id));
        for (int p = 0; p < cfg.pos_per_utterance; ++p) {
            Pair pair{corpus.at(i).id, corpus.at(i).id, Polarity::Positive, Strategy::PSC,
                      cfg.sampler.draw(rng)};
            out.push_back(std::move(pair));
        }
        for (auto j : detail::sample_without_replacement(set2.size(),
                                                         static_cast<std::size_t>(cfg.neg_per_utterance), rng)) {
            Pair pair{corpus.at(i).id, corpus.at(set2[j]).id, Polarity::Negative, Strategy::PSC,
                      std::nullopt};
            if (cfg.include_augmented_negatives && rng.next_below(2) == 0)
                pair.aug_b = cfg.sampler.draw(rng);
            out.push_back(std::move(pair));
        }
    }
    return out;
}

// Self-supervised chunked pairing. The corpus must be label-sealed; word
// labels are never consulted (the seal makes any read an error).
inline PairManifest gen_self_supervised_chunked(const Corpus& corpus, const PairPlanConfig& cfg) {
    require(corpus.sealed(),
            "gen_self_supervised_chunked: corpus exposes labels (seal required)");
    std::vector<std::size_t> set1, set2;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        switch (corpus.at(i).set_tag) {
            case SetTag::Set1: set1.push_back(i); break;
            case SetTag::Set2: set2.push_back(i); break;
            case SetTag::None:
                throw Error("gen_self_supervised_chunked: utterance '" + corpus.at(i).id +
                            "' has no set tag");
        }
    }
    require(!set1.empty() && !set2.empty(), "gen_self_supervised_chunked: empty set");

    PairManifest out;
    for (auto i : set1) {
        Rng rng(derive_seed(cfg.seed, "ssc/" + corpus.at(i).id));
        for (int p = 0; p < cfg.pos_per_utterance; ++p) {
            Pair pair{corpus.at(i).id, corpus.at(i).id, Polarity::Positive, Strategy::SSC,
                      cfg.sampler.draw(rng)};
            out.push_back(std::move(pair));
        }
        for (auto j : detail::sample_without_replacement(set2.size(),
                                                         static_cast<std::size_t>(cfg.neg_per_utterance), rng)) {
            Pair pair{corpus.at(i).id, corpus.at(set2[j]).id, Polarity::Negative, Strategy::SSC,
                      std::nullopt};
            if (cfg.include_augmented_negatives && rng.next_below(2) == 0)
                pair.aug_b = cfg.sampler.draw(rng);
            out.push_back(std::move(pair));
        }
    }
    return out;
}

// Conventional in-batch self-supervised pairing. Negatives are sampled
// uniformly within each shuffled batch without looking at labels, so
// same-word hard negatives are possible by construction.
inline PairManifest gen_self_supervised_hard_negative(const Corpus& corpus, int batch_size,
                                                      const PairPlanConfig& cfg) {
    require(batch_size >= 2, "gen_self_supervised_hard_negative: batch_size must be >= 2");
    require(!corpus.empty(), "gen_self_supervised_hard_negative: empty corpus");

    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng batch_rng(derive_seed(cfg.seed, "sshn/batches"));
    shuffle(order, batch_rng);

    PairManifest out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        if (end - start < 2) break;  // a trailing singleton has no negatives
        for (std::size_t k = start; k < end; ++k) {
            const std::size_t i = order[k];
            Rng rng(derive_seed(cfg.seed, "sshn/" + corpus.at(i).id));
            for (int p = 0; p < cfg.pos_per_utterance; ++p) {
                Pair pair{corpus.at(i).id, corpus.at(i).id, Polarity::Positive, Strategy::SSHN,
                          cfg.sampler.draw(rng)};
                out.push_back(std::move(pair));
            }
            for (int n = 0; n < cfg.neg_per_utterance; ++n) {
                std::size_t pick = k;
                while (pick == k) pick = start + rng.next_below(end - start);
                out.push_back(Pair{corpus.at(i).id, corpus.at(order[pick]).id, Polarity::Negative,
                                   Strategy::SSHN, std::nullopt});
            }
        }
    }
    return out;
}

inline void save_pairs(const PairManifest& pairs, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "save_pairs: cannot open " + path);
    for (const auto& p : pairs) {
        nlohmann::json j{{"a_id", p.a_id},
                         {"b_id", p.b_id},
                         {"polarity", p.polarity == Polarity::Positive ? "positive" : "negative"},
                         {"strategy", strategy_name(p.strategy)}};
        if (p.aug_b) j["aug_spec_b"] = p.aug_b->to_json();
        out << j.dump() << '\n';
    }
    require(out.good(), "save_pairs: write failed");
}

inline PairManifest load_pairs(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_pairs: cannot open " + path);
    PairManifest out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        Pair p;
        p.a_id = j.at("a_id").get<std::string>();
        p.b_id = j.at("b_id").get<std::string>();
        p.polarity = j.at("polarity").get<std::string>() == "positive" ? Polarity::Positive
                                                                       : Polarity::Negative;
        p.strategy = strategy_from_name(j.at("strategy").get<std::string>());
        if (j.contains("aug_spec_b")) p.aug_b = AugmentSpec::from_json(j["aug_spec_b"]);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace kws
