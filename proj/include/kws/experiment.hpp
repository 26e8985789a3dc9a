#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/common.hpp"
#include "kws/corpus.hpp"
#include "kws/nn.hpp"
#include "kws/pairing.hpp"
#include "kws/trainer.hpp"

namespace kws {

inline const std::vector<std::string> kRecipes = {"C",   "CT1", "CT2", "SC1",
                                                  "SC2", "PSC", "SSC", "SSHN"};

// One reproducible experiment: recipe id, task, and every knob the stages
// need. All randomness flows from master_seed.
struct ExperimentPlan {
    std::string recipe = "C";
    std::string task = "multiclass";  // or "ova:<word>"
    SplitPlan split;
    PairPlanConfig pairs;
    TrainConfig train;
    TrunkConfig trunk;
    int pretrain_epochs = 3;                  // contrastive pre-task
    int ct_pretask_epochs = 8;                // classification pre-task
    int random_init_epochs = 15;              // recipe C
    int transfer_classification_epochs = 10;  // CT main task
    int transfer_contrastive_epochs = 6;      // SC/PSC/SSC/SSHN main task
    std::string out_dir;
    std::uint64_t master_seed = 0;

    void validate() const {
        require(std::find(kRecipes.begin(), kRecipes.end(), recipe) != kRecipes.end(),
                "ExperimentPlan: unknown recipe '" + recipe + "'");
        require(task == "multiclass" || task.rfind("ova:", 0) == 0,
                "ExperimentPlan: task must be 'multiclass' or 'ova:<word>'");
        train.validate();
        trunk.validate();
    }

    bool is_contrastive() const {
        return recipe == "SC1" || recipe == "SC2" || recipe == "PSC" || recipe == "SSC" ||
               recipe == "SSHN";
    }
    bool has_pretask() const { return recipe != "C"; }
    bool halves_pretask_words() const { return recipe == "CT2" || recipe == "SC2"; }
};

struct ExperimentResultRow {
    std::string exp;
    std::string task;
    std::string variant;  // frozen | unfrozen | random_init
    EvalReport report;
};

struct ExperimentResult {
    std::vector<ExperimentResultRow> rows;
    std::vector<RunRecord> records;
};

namespace detail {

inline Corpus restrict_to_words(const Corpus& corpus, const std::vector<std::string>& words) {
    return corpus.filtered([&](const Utterance& u) {
        return u.word && std::find(words.begin(), words.end(), *u.word) != words.end();
    });
}

inline void write_results_csv(const std::string& path,
                              const std::vector<ExperimentResultRow>& rows) {
    std::ofstream out(path);
    require(out.good(), "write_results_csv: cannot open " + path);
    out << "exp,task,variant,clean,car,other\n";
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string();
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", *v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        char clean[32];
        std::snprintf(clean, sizeof(clean), "%.4f", r.report.clean_acc);
        out << r.exp << ',' << r.task << ',' << r.variant << ',' << clean << ','
            << cell(r.report.car_acc) << ',' << cell(r.report.other_acc) << '\n';
    }
}

}  // namespace detail

// Full recipe: optional pre-task, frozen and unfrozen main-task variants,
// evaluation under clean/car/other noise. Artifacts (manifests, checkpoints,
// run records, results CSV) land in plan.out_dir when set.
inline ExperimentResult run_experiment(const Corpus& labeled,
                                       const std::optional<Corpus>& chunked_sealed,
                                       const NoiseBank& bank, const ExperimentPlan& plan) {
    namespace fs = std::filesystem;
    plan.validate();
    const bool emit = !plan.out_dir.empty();
    if (emit) fs::create_directories(plan.out_dir);
    auto artifact = [&](const std::string& name) { return (fs::path(plan.out_dir) / name).string(); };

    ExperimentResult result;
    Partition part = partition(labeled, plan.split);

    // Pre-task word list; the *2 recipes train on the first half.
    std::vector<std::string> pretask_words = plan.split.pretask_words;
    if (plan.halves_pretask_words())
        pretask_words.resize(std::max<std::size_t>(1, (pretask_words.size() + 1) / 2));
    Corpus pretask_corpus = detail::restrict_to_words(part.pretask_train, pretask_words);

    TrainConfig pre_cfg = plan.train;
    pre_cfg.seed = derive_seed(plan.master_seed, "pretask");
    pre_cfg.freeze_base = false;

    PairPlanConfig pair_cfg = plan.pairs;
    pair_cfg.seed = derive_seed(plan.master_seed, "pairs");

    std::optional<Model> pretrained;
    if (plan.has_pretask()) {
        Model model(plan.trunk, derive_seed(plan.master_seed, "init"));
        if (plan.is_contrastive()) {
            PairManifest manifest;
            FeaturePipeline* pipeline_ptr = nullptr;
            FeaturePipeline labeled_pipeline(pretask_corpus, bank, plan.trunk);
            std::optional<FeaturePipeline> chunked_pipeline;
            if (plan.recipe == "SSC") {
                require(chunked_sealed.has_value(),
                        "run_experiment: SSC needs a label-sealed chunked corpus");
                require(chunked_sealed->sealed(),
                        "run_experiment: SSC refuses a corpus exposing labels");
                SplitPlan chunk_split;
                chunk_split.set1_fraction = plan.split.set1_fraction;
                chunk_split.seed = derive_seed(plan.master_seed, "chunk_split");
                Partition cpart = partition(*chunked_sealed, chunk_split);
                Corpus tagged;
                for (std::size_t i = 0; i < cpart.set1.size(); ++i) tagged.add(cpart.set1.at(i));
                for (std::size_t i = 0; i < cpart.set2.size(); ++i) tagged.add(cpart.set2.at(i));
                tagged = tagged.sealed_view();
                manifest = gen_self_supervised_chunked(tagged, pair_cfg);
                chunked_pipeline.emplace(tagged, bank, plan.trunk);
                pipeline_ptr = &*chunked_pipeline;
            } else if (plan.recipe == "PSC") {
                std::vector<std::string> set1_words, set2_words;
                for (std::size_t i = 0; i < part.set1.size(); ++i) {
                    const auto& w = part.set1.word(i);
                    if (w && std::find(set1_words.begin(), set1_words.end(), *w) == set1_words.end())
                        set1_words.push_back(*w);
                }
                for (std::size_t i = 0; i < part.set2.size(); ++i) {
                    const auto& w = part.set2.word(i);
                    if (w && std::find(set2_words.begin(), set2_words.end(), *w) == set2_words.end())
                        set2_words.push_back(*w);
                }
                manifest = gen_pseudo_supervised(part.pretask_train, set1_words, set2_words, pair_cfg);
                // PSC pairs span the whole pre-task corpus, not the halved word list.
                chunked_pipeline.emplace(part.pretask_train, bank, plan.trunk);
                pipeline_ptr = &*chunked_pipeline;
            } else if (plan.recipe == "SSHN") {
                manifest = gen_self_supervised_hard_negative(pretask_corpus, plan.train.batch_size,
                                                             pair_cfg);
                pipeline_ptr = &labeled_pipeline;
            } else {  // SC1 / SC2
                manifest = gen_supervised(pretask_corpus, pair_cfg);
                pipeline_ptr = &labeled_pipeline;
            }
            if (emit) save_pairs(manifest, artifact("pairs_" + plan.recipe + ".jsonl"));
            TrainConfig cfg = pre_cfg;
            cfg.epochs = plan.pretrain_epochs;
            result.records.push_back(pretrain_contrastive(model, manifest, *pipeline_ptr, cfg));
        } else {  // CT1 / CT2
            LabeledSet pre_set = make_multiclass_set(pretask_corpus, pretask_words);
            model.attach_head(static_cast<int>(pretask_words.size()),
                              derive_seed(plan.master_seed, "pretask_head"));
            FeaturePipeline pipeline(pretask_corpus, bank, plan.trunk);
            TrainConfig cfg = pre_cfg;
            cfg.epochs = plan.ct_pretask_epochs;
            result.records.push_back(train_classifier(model, pre_set, pipeline, cfg, false));
            model.drop_head();
        }
        if (emit)
            save_checkpoint(model, artifact("pretask_" + plan.recipe + ".ckpt"),
                            {{"recipe", plan.recipe}, {"stage", "pretask"}});
        pretrained = std::move(model);
    }

    // ---- main task ----
    Corpus maintask_all = detail::restrict_to_words(labeled, plan.split.maintask_words);
    LabeledSet train_set, test_set;
    std::string task_name;
    if (plan.task.rfind("ova:", 0) == 0) {
        const std::string word = plan.task.substr(4);
        task_name = "ova_" + word;
        auto [tr, te] = make_one_vs_all_task(maintask_all, word,
                                             derive_seed(plan.master_seed, "task"),
                                             plan.split.train_fraction);
        train_set = std::move(tr);
        test_set = std::move(te);
    } else {
        task_name = "multiclass";
        train_set = make_multiclass_set(part.maintask_train, plan.split.maintask_words);
        test_set = make_multiclass_set(part.maintask_test, plan.split.maintask_words);
    }
    FeaturePipeline main_pipeline(maintask_all, bank, plan.trunk);
    const int num_classes = static_cast<int>(train_set.class_names.size());

    auto run_variant = [&](const std::string& variant, bool freeze, int epochs,
                           bool transfer) {
        Model model = pretrained ? pretrained->clone()
                                 : Model(plan.trunk, derive_seed(plan.master_seed, "init"));
        model.attach_head(num_classes, derive_seed(plan.master_seed, "head/" + variant));
        TrainConfig cfg = plan.train;
        cfg.seed = derive_seed(plan.master_seed, "main/" + variant);
        cfg.freeze_base = freeze;
        cfg.epochs = epochs;
        result.records.push_back(train_classifier(model, train_set, main_pipeline, cfg, transfer));
        EvalReport report = evaluate(model, test_set, main_pipeline, bank,
                                     derive_seed(plan.master_seed, "eval/" + variant));
        result.rows.push_back({plan.recipe, task_name, variant, report});
        if (emit) {
            save_checkpoint(model, artifact("main_" + plan.recipe + "_" + variant + ".ckpt"),
                            {{"recipe", plan.recipe}, {"variant", variant}, {"task", task_name}});
            std::ofstream rec(artifact("run_" + plan.recipe + "_" + variant + ".json"));
            rec << result.records.back().to_json().dump(2) << '\n';
        }
    };

    if (!plan.has_pretask()) {
        run_variant("random_init", false, plan.random_init_epochs, false);
    } else {
        const int epochs = plan.is_contrastive() ? plan.transfer_contrastive_epochs
                                                 : plan.transfer_classification_epochs;
        run_variant("frozen", true, epochs, true);
        run_variant("unfrozen", false, epochs, true);
    }

    if (emit) detail::write_results_csv(artifact("results.csv"), result.rows);
    return result;
}

}  // namespace kws
