#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kws/augment.hpp"
#include "kws/common.hpp"
#include "kws/corpus.hpp"
#include "kws/dsp.hpp"
#include "kws/nn.hpp"
#include "kws/pairing.hpp"
#include "kws/tensor.hpp"

namespace kws {

enum class OptimizerKind { Adam, SgdMomentum };

struct TrainConfig {
    int batch_size = 64;
    int epochs = 3;
    double learning_rate = 1e-3;
    double finetune_lr_factor = 0.1;
    OptimizerKind optimizer = OptimizerKind::Adam;
    bool freeze_base = false;
    LabelConvention label_convention = LabelConvention::SimilarIs1;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        require(epochs >= 0, "TrainConfig: negative epochs");
        require(learning_rate > 0, "TrainConfig: learning_rate must be positive");
        require(finetune_lr_factor > 0 && finetune_lr_factor <= 1,
                "TrainConfig: finetune_lr_factor out of range");
    }
};

struct EpochStats {
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

struct RunRecord {
    std::vector<EpochStats> epochs;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    double wall_time_s = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json ep = nlohmann::json::array();
        for (const auto& e : epochs)
            ep.push_back({{"train_loss", e.train_loss},
                          {"train_accuracy", e.train_accuracy},
                          {"val_accuracy", e.val_accuracy}});
        return {{"epochs", ep}, {"config_hash", config_hash}, {"seed", seed},
                {"wall_time_s", wall_time_s}};
    }
};

// Adam / SGD-momentum over the model's named parameters. freeze_base skips
// the "conv." group entirely (no state, no update).
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, bool freeze_base)
        : kind_(kind), lr_(lr), freeze_base_(freeze_base) {}

    void step(Model& model) {
        ++t_;
        for (const auto& p : model.params()) {
            if (freeze_base_ && p.name.rfind("conv.", 0) == 0) continue;
            auto& st = state_[p.name];
            if (st.m.empty()) {
                st.m.assign(p.node->val.size(), 0.0);
                st.v.assign(p.node->val.size(), 0.0);
            }
            double* val = p.node->val.data.data();
            const double* g = p.node->grad.data.data();
            const std::size_t n = p.node->val.size();
            if (kind_ == OptimizerKind::Adam) {
                constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                const double bc1 = 1.0 - std::pow(b1, t_);
                const double bc2 = 1.0 - std::pow(b2, t_);
                for (std::size_t i = 0; i < n; ++i) {
                    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
                    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
                    val[i] -= lr_ * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps);
                }
            } else {
                constexpr double momentum = 0.9;
                for (std::size_t i = 0; i < n; ++i) {
                    st.m[i] = momentum * st.m[i] + g[i];
                    val[i] -= lr_ * st.m[i];
                }
            }
        }
    }

private:
    struct State {
        std::vector<double> m, v;
    };
    OptimizerKind kind_;
    double lr_;
    bool freeze_base_;
    int t_ = 0;
    std::map<std::string, State> state_;
};

// ---- feature plumbing ------------------------------------------------------

inline int samples_for_frames(int frames) { return kFrameLen + kFrameStep * (frames - 1); }

// Pads/crops to the model's input length and extracts MFCCs. Augmented
// variants are keyed by their spec so repeated epochs reuse the cache.
class FeaturePipeline {
public:
    FeaturePipeline(const Corpus& corpus, const NoiseBank& bank, const TrunkConfig& cfg)
        : bank_(bank), cfg_(cfg) {
        for (std::size_t i = 0; i < corpus.size(); ++i) index_[corpus.at(i).id] = corpus.at(i);
    }

    const Utterance& utterance(const std::string& id) const {
        auto it = index_.find(id);
        require(it != index_.end(), "FeaturePipeline: unknown utterance id '" + id + "'");
        return it->second;
    }

    const FeatureMatrix& features(const std::string& id,
                                  const std::optional<AugmentSpec>& aug = std::nullopt) {
        std::string key = id;
        if (aug) key += "|" + aug->to_json().dump();
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        AudioClip clip = utterance_audio(utterance(id));
        if (aug) clip = apply_augment(clip, *aug, bank_);
        const double target_s =
            static_cast<double>(samples_for_frames(cfg_.input_frames)) / kCanonicalRateHz;
        FeatureMatrix fm = mfcc(pad_or_crop(clip, target_s));
        require(fm.num_frames == cfg_.input_frames, "FeaturePipeline: frame count mismatch");
        return cache_.emplace(std::move(key), std::move(fm)).first->second;
    }

private:
    std::unordered_map<std::string, Utterance> index_;
    std::unordered_map<std::string, FeatureMatrix> cache_;
    NoiseBank bank_;
    TrunkConfig cfg_;
};

// ---- contrastive pre-task ----------------------------------------------------

// Trains trunk + siamese head on a pair manifest with contrastive BCE.
// Batch loss is the mean over per-pair losses; gradients accumulate per
// example and one optimizer step is taken per batch.
inline RunRecord pretrain_contrastive(Model& model, const PairManifest& manifest,
                                      FeaturePipeline& pipeline, const TrainConfig& cfg) {
    cfg.validate();
    require(!cfg.freeze_base, "pretrain_contrastive: pre-task trains the full trunk");
    require(!manifest.empty(), "pretrain_contrastive: empty manifest");

    const auto t0 = std::chrono::steady_clock::now();
    RunRecord record;
    record.seed = cfg.seed;
    record.config_hash = hash_str(std::to_string(cfg.batch_size) + "/" +
                                  std::to_string(cfg.learning_rate) + "/" +
                                  std::to_string(cfg.epochs));
    Optimizer opt(cfg.optimizer, cfg.learning_rate, false);

    std::vector<std::size_t> order(manifest.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, "pretrain_epoch", epoch));
        shuffle(order, rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            model.zero_grads();
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const Pair& pair = manifest[order[k]];
                Tape tape;
                Node a = model.input_from_features(pipeline.features(pair.a_id));
                Node b = model.input_from_features(pipeline.features(pair.b_id, pair.aug_b));
                Node ea = model.trunk_forward(tape, a);
                Node eb = model.trunk_forward(tape, b);
                Node d = op_siamese_distance(tape, ea, eb);
                const bool positive = pair.polarity == Polarity::Positive;
                Node loss = contrastive_bce(tape, d, positive, cfg.label_convention);
                const double lv = loss->val.data[0];
                if (!std::isfinite(lv))
                    throw Error("pretrain_contrastive: NaN loss at epoch " +
                                std::to_string(epoch) + ", pair index " +
                                std::to_string(order[k]));
                batch_loss += lv;
                const double target = contrastive_target(positive, cfg.label_convention);
                if ((d->val.data[0] > 0.5) == (target > 0.5)) ++correct;
                tape.backward(loss, 1.0 / static_cast<double>(end - start));
            }
            loss_sum += batch_loss;
            opt.step(model);
        }
        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        record.epochs.push_back(stats);
    }
    record.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
}

// ---- classification tasks -----------------------------------------------------

struct LabeledExample {
    std::string id;
    int label = 0;
};

struct LabeledSet {
    std::vector<LabeledExample> items;
    std::vector<std::string> class_names;
};

// Binary task: target word vs a balanced sample of the other words, with a
// per-class deterministic train/test split.
inline std::pair<LabeledSet, LabeledSet> make_one_vs_all_task(const Corpus& corpus,
                                                              const std::string& target_word,
                                                              std::uint64_t seed,
                                                              double train_fraction = 0.8) {
    require(!corpus.sealed(), "make_one_vs_all_task: needs labels");
    std::vector<std::string> pos, neg;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus.word(i).value_or("") == target_word)
            pos.push_back(corpus.at(i).id);
        else
            neg.push_back(corpus.at(i).id);
    }
    require(!pos.empty(), "make_one_vs_all_task: target word '" + target_word + "' absent");
    require(!neg.empty(), "make_one_vs_all_task: no negative utterances");

    Rng rng(derive_seed(seed, "ova/" + target_word));
    shuffle(neg, rng);
    neg.resize(std::min(neg.size(), pos.size()));  // balanced 1:1

    LabeledSet train, test;
    train.class_names = test.class_names = {"other", target_word};
    auto split = [&](std::vector<std::string>& ids, int label) {
        Rng srng(derive_seed(seed, "ova_split/" + target_word, label));
        shuffle(ids, srng);
        const std::size_t n_train = static_cast<std::size_t>(
            std::llround(train_fraction * static_cast<double>(ids.size())));
        for (std::size_t i = 0; i < ids.size(); ++i)
            (i < n_train ? train : test).items.push_back({ids[i], label});
    };
    split(pos, 1);
    split(neg, 0);
    return {train, test};
}

// Multi-class task over all words in the corpus; caller splits train/test
// beforehand (e.g. via partition()).
inline LabeledSet make_multiclass_set(const Corpus& corpus,
                                      const std::vector<std::string>& class_names) {
    require(!corpus.sealed(), "make_multiclass_set: needs labels");
    LabeledSet out;
    out.class_names = class_names;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::string w = corpus.word(i).value_or("");
        auto it = std::find(class_names.begin(), class_names.end(), w);
        require(it != class_names.end(), "make_multiclass_set: word '" + w + "' not a class");
        out.items.push_back({corpus.at(i).id, static_cast<int>(it - class_names.begin())});
    }
    return out;
}

// Trains the softmax head (and, unless frozen, the trunk) on a labeled set.
// `transfer_init` selects the reduced fine-tune learning rate.
inline RunRecord train_classifier(Model& model, const LabeledSet& train,
                                  FeaturePipeline& pipeline, const TrainConfig& cfg,
                                  bool transfer_init) {
    cfg.validate();
    require(!train.items.empty(), "train_classifier: empty training set");
    require(model.num_classes() == static_cast<int>(train.class_names.size()),
            "train_classifier: head size does not match the task");

    const auto t0 = std::chrono::steady_clock::now();
    const double lr = (transfer_init && !cfg.freeze_base)
                          ? cfg.learning_rate * cfg.finetune_lr_factor
                          : cfg.learning_rate;
    Optimizer opt(cfg.optimizer, lr, cfg.freeze_base);

    // Validation holdout: trailing fraction of a seeded shuffle.
    std::vector<std::size_t> order(train.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng vrng(derive_seed(cfg.seed, "val_split"));
    shuffle(order, vrng);
    const std::size_t n_val = static_cast<std::size_t>(
        std::llround(cfg.validation_fraction * static_cast<double>(order.size())));
    std::vector<std::size_t> val_idx(order.end() - n_val, order.end());
    std::vector<std::size_t> train_idx(order.begin(), order.end() - n_val);
    require(!train_idx.empty(), "train_classifier: validation holdout consumed everything");

    RunRecord record;
    record.seed = cfg.seed;
    record.config_hash =
        hash_str(std::to_string(cfg.batch_size) + "/" + std::to_string(lr) + "/" +
                 std::to_string(cfg.epochs) + "/" + (cfg.freeze_base ? "frozen" : "unfrozen"));

    auto predict = [&](const LabeledExample& ex) {
        Tape tape;
        Node x = model.input_from_features(pipeline.features(ex.id));
        Node logits = model.head_forward(tape, model.trunk_forward(tape, x));
        return argmax(logits->val);
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, "train_epoch", epoch));
        shuffle(train_idx, rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < train_idx.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
            model.zero_grads();
            for (std::size_t k = start; k < end; ++k) {
                const LabeledExample& ex = train.items[train_idx[k]];
                Tape tape;
                Node x = model.input_from_features(pipeline.features(ex.id));
                Node logits = model.head_forward(tape, model.trunk_forward(tape, x));
                Node loss = op_softmax_cross_entropy(tape, logits, ex.label);
                const double lv = loss->val.data[0];
                if (!std::isfinite(lv))
                    throw Error("train_classifier: NaN loss at epoch " + std::to_string(epoch) +
                                ", example '" + ex.id + "'");
                loss_sum += lv;
                if (argmax(logits->val) == ex.label) ++correct;
                tape.backward(loss, 1.0 / static_cast<double>(end - start));
            }
            opt.step(model);
        }
        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(train_idx.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_idx.size());
        if (!val_idx.empty()) {
            std::size_t val_correct = 0;
            for (auto i : val_idx)
                if (predict(train.items[i]) == train.items[i].label) ++val_correct;
            stats.val_accuracy = static_cast<double>(val_correct) / static_cast<double>(val_idx.size());
        }
        record.epochs.push_back(stats);
    }
    record.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
}

// ---- evaluation ---------------------------------------------------------------

struct EvalReport {
    double clean_acc = 0.0;
    std::optional<double> car_acc;    // "car" noise category
    std::optional<double> other_acc;  // every other category pooled
    std::vector<std::vector<int>> confusion;  // clean predictions

    std::string abc() const {
        auto fmt = [](const std::optional<double>& v) {
            if (!v) return std::string("-");
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%.1f", *v * 100.0);
            return std::string(buf);
        };
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", clean_acc * 100.0);
        return std::string(buf) + "/" + fmt(car_acc) + "/" + fmt(other_acc);
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"clean_acc", clean_acc}, {"confusion", confusion}};
        j["car_acc"] = car_acc ? nlohmann::json(*car_acc) : nlohmann::json();
        j["other_acc"] = other_acc ? nlohmann::json(*other_acc) : nlohmann::json();
        return j;
    }
};

// Accuracy on clean, car-noise-augmented, and other-noise-augmented copies
// of the test set. Augmented copies are generated on the fly at seeded SNRs
// in [10, 25]. A missing noise category yields an absent accuracy.
inline EvalReport evaluate(Model& model, const LabeledSet& test, FeaturePipeline& pipeline,
                           const NoiseBank& bank, std::uint64_t seed) {
    require(!test.items.empty(), "evaluate: empty test set");
    const int K = static_cast<int>(test.class_names.size());
    EvalReport report;
    report.confusion.assign(K, std::vector<int>(K, 0));

    auto predict = [&](const std::string& id, const std::optional<AugmentSpec>& aug) {
        Tape tape;
        Node x = model.input_from_features(pipeline.features(id, aug));
        Node logits = model.head_forward(tape, model.trunk_forward(tape, x));
        return argmax(logits->val);
    };

    std::size_t clean_correct = 0;
    for (const auto& ex : test.items) {
        const int pred = predict(ex.id, std::nullopt);
        report.confusion[ex.label][pred] += 1;
        if (pred == ex.label) ++clean_correct;
    }
    report.clean_acc = static_cast<double>(clean_correct) / static_cast<double>(test.items.size());

    auto noisy_accuracy = [&](const std::vector<std::string>& cats,
                              const std::string& tag) -> std::optional<double> {
        if (cats.empty()) return std::nullopt;
        std::size_t correct = 0;
        std::size_t idx = 0;
        for (const auto& ex : test.items) {
            Rng rng(derive_seed(seed, "eval/" + tag + "/" + ex.id, idx++));
            AugmentSpec spec;
            spec.kind = AugmentSpec::Kind::Noise;
            spec.noise_id = cats[rng.next_below(cats.size())];
            spec.snr_db = rng.uniform(10.0, 25.0);
            spec.seed = rng.next_u64();
            if (predict(ex.id, spec) == ex.label) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(test.items.size());
    };

    std::vector<std::string> car, other;
    for (const auto& c : bank.categories())
        (c == "car" ? car : other).push_back(c);
    report.car_acc = noisy_accuracy(car, "car");
    report.other_acc = noisy_accuracy(other, "other");
    return report;
}

}  // namespace kws
