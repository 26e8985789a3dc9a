// Command-line front end: featurize, chunk, pairgen, pretrain, train, eval,
// experiment. Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <kws/experiment.hpp>

namespace fs = std::filesystem;
using namespace kws;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// ---- flat key-value config with [section] headers ---------------------------

using Config = std::map<std::string, std::string>;

Config load_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open " + path);
    Config cfg;
    std::string line, section;
    while (std::getline(in, line)) {
        const auto h = line.find('#');
        if (h != std::string::npos) line.erase(h);
        // trim
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        if (line.front() == '[') {
            require(line.back() == ']', "config: malformed section header: " + line);
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, "config: expected key=value: " + line);
        auto trim = [](std::string s) {
            const auto lb = s.find_first_not_of(" \t");
            const auto le = s.find_last_not_of(" \t");
            return lb == std::string::npos ? std::string() : s.substr(lb, le - lb + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        require(!key.empty(), "config: empty key: " + line);
        cfg[(section.empty() ? key : section + "." + key)] = trim(line.substr(eq + 1));
    }
    return cfg;
}

std::string cfg_get(const Config& c, const std::string& key, const std::string& fallback = "") {
    auto it = c.find(key);
    return it == c.end() ? fallback : it->second;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (ch != ' ') {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::uint64_t clip_hash(const AudioClip& clip) {
    std::uint64_t h = hash_str("clip");
    h = hash_combine(h, static_cast<std::uint64_t>(clip.sample_rate_hz));
    for (double s : clip.samples) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(s));
        std::memcpy(&bits, &s, sizeof(bits));
        h = hash_combine(h, bits);
    }
    return h;
}

std::string sanitize_id(std::string id) {
    for (char& c : id)
        if (c == '/' || c == '#' || c == '\\') c = '_';
    return id;
}

NoiseBank load_bank(const std::string& dir) {
    return dir.empty() ? NoiseBank::synthetic() : NoiseBank::from_directory(dir);
}

TrunkConfig arch_config(bool small) { return small ? TrunkConfig::tiny(12, 40) : TrunkConfig(); }

// ---- subcommands ------------------------------------------------------------

int cmd_featurize(const std::string& manifest, const std::string& out_dir, bool dry_run) {
    Corpus corpus = load_corpus(manifest);
    if (dry_run) {
        std::cout << "plan: featurize " << corpus.size() << " utterances -> " << out_dir << "\n";
        return kExitOk;
    }
    fs::create_directories(out_dir);
    std::size_t written = 0, skipped = 0;
    std::vector<std::string> errors;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Utterance& u = corpus.at(i);
        const std::string path = (fs::path(out_dir) / (sanitize_id(u.id) + ".feat")).string();
        try {
            AudioClip clip = utterance_audio(u);
            const std::uint64_t h = clip_hash(clip);
            if (fs::exists(path)) {
                std::uint64_t stored = 0;
                load_features(path, &stored);
                if (stored == h) {
                    ++skipped;
                    continue;
                }
            }
            save_features(path, mfcc(pad_or_crop(clip)), h);
            ++written;
        } catch (const std::exception& e) {
            errors.push_back(u.id + ": " + e.what());
        }
    }
    std::cout << "featurize: " << written << " written, " << skipped << " up to date\n";
    if (!errors.empty()) {
        for (const auto& e : errors) std::cerr << "error: " << e << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_chunk(const std::string& audio_dir, const std::string& align, bool vad,
              const std::string& out, const std::string& audio_out, bool seal,
              double min_duration, bool dry_run) {
    require(align.empty() != !vad, "chunk: choose exactly one of --align or --vad");
    std::map<std::string, AudioClip> audio;
    require(fs::is_directory(audio_dir), "chunk: not a directory: " + audio_dir);
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(audio_dir))
        if (f.path().extension() == ".wav") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) audio[f.stem().string()] = to_canonical(load_wav(f.string()));

    if (dry_run) {
        std::cout << "plan: chunk " << audio.size() << " files ("
                  << (vad ? "vad" : "alignment manifest") << (seal ? ", sealed" : "") << ") -> "
                  << out << "\n";
        return kExitOk;
    }

    Corpus corpus;
    if (vad) {
        for (const auto& [id, clip] : audio) {
            int seg_idx = 0;
            for (const auto& [start_s, end_s] : chunk_by_vad(clip)) {
                Utterance u;
                u.id = id + "#" + std::to_string(seg_idx++);
                u.source = Source::ChunkedLongAudio;
                const auto lo = static_cast<std::size_t>(std::llround(start_s * clip.sample_rate_hz));
                const auto hi = std::min(clip.samples.size(),
                                         static_cast<std::size_t>(std::llround(end_s * clip.sample_rate_hz)));
                u.clip = AudioClip{{clip.samples.begin() + lo, clip.samples.begin() + hi},
                                   clip.sample_rate_hz};
                corpus.add(std::move(u));
            }
        }
    } else {
        corpus = chunk_by_manifest(audio, load_alignment_tsv(align));
    }
    if (min_duration > 0) corpus = filter_min_duration(corpus, min_duration);
    if (seal) corpus = corpus.sealed_view();
    save_corpus(corpus, out, audio_out);
    std::cout << "chunk: " << corpus.size() << " utterances -> " << out
              << (seal ? " (label-sealed)" : "") << "\n";
    return kExitOk;
}

int cmd_pairgen(const std::string& corpus_path, const std::string& strategy,
                const std::string& out, std::uint64_t seed, int pos, int neg, int batch_size,
                const std::string& set1_csv, const std::string& set2_csv,
                const std::string& noise_csv, bool dry_run) {
    Corpus corpus = load_corpus(corpus_path);
    PairPlanConfig cfg;
    cfg.seed = seed;
    cfg.pos_per_utterance = pos;
    cfg.neg_per_utterance = neg;
    cfg.sampler.noise_ids = noise_csv.empty() ? std::vector<std::string>{"white", "tonal"}
                                              : split_csv(noise_csv);
    if (dry_run) {
        std::cout << "plan: pairgen " << strategy << " over " << corpus.size()
                  << " utterances -> " << out << "\n";
        return kExitOk;
    }
    PairManifest pairs;
    const Strategy s = strategy_from_name(strategy);
    switch (s) {
        case Strategy::SC: pairs = gen_supervised(corpus, cfg); break;
        case Strategy::PSC:
            require(!set1_csv.empty() && !set2_csv.empty(),
                    "pairgen: PSC needs --set1-words and --set2-words");
            pairs = gen_pseudo_supervised(corpus, split_csv(set1_csv), split_csv(set2_csv), cfg);
            break;
        case Strategy::SSC: pairs = gen_self_supervised_chunked(corpus, cfg); break;
        case Strategy::SSHN: pairs = gen_self_supervised_hard_negative(corpus, batch_size, cfg); break;
    }
    save_pairs(pairs, out);
    std::cout << "pairgen: " << pairs.size() << " pairs -> " << out << "\n";
    return kExitOk;
}

int cmd_pretrain(const std::string& corpus_path, const std::string& pairs_path,
                 const std::string& out, std::uint64_t seed, int epochs, int batch_size,
                 double lr, const std::string& bank_dir, bool small, bool dry_run) {
    Corpus corpus = load_corpus(corpus_path);
    PairManifest pairs = load_pairs(pairs_path);
    if (dry_run) {
        std::cout << "plan: pretrain " << epochs << " epochs over " << pairs.size()
                  << " pairs -> " << out << "\n";
        return kExitOk;
    }
    NoiseBank bank = load_bank(bank_dir);
    const TrunkConfig trunk = arch_config(small);
    Model model(trunk, derive_seed(seed, "init"));
    FeaturePipeline pipeline(corpus, bank, trunk);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.learning_rate = lr;
    cfg.seed = derive_seed(seed, "pretask");
    RunRecord record = pretrain_contrastive(model, pairs, pipeline, cfg);
    save_checkpoint(model, out, {{"stage", "pretask"}, {"run", record.to_json()}});
    std::cout << "pretrain: final loss " << record.epochs.back().train_loss << " -> " << out
              << "\n";
    return kExitOk;
}

std::pair<LabeledSet, LabeledSet> build_task(const Corpus& corpus, const std::string& task,
                                             std::uint64_t seed) {
    if (task.rfind("ova:", 0) == 0) return make_one_vs_all_task(corpus, task.substr(4), seed);
    const auto words = corpus.distinct_words();
    LabeledSet all = make_multiclass_set(corpus, words);
    return {all, all};
}

int cmd_train(const std::string& corpus_path, const std::string& init_ckpt,
              const std::string& task, const std::string& out, std::uint64_t seed, int epochs,
              int batch_size, double lr, bool freeze, const std::string& bank_dir, bool small,
              bool dry_run) {
    Corpus corpus = load_corpus(corpus_path);
    if (dry_run) {
        std::cout << "plan: train task=" << task << (freeze ? " (frozen base)" : "")
                  << (init_ckpt.empty() ? " from random init" : " from " + init_ckpt) << " -> "
                  << out << "\n";
        return kExitOk;
    }
    NoiseBank bank = load_bank(bank_dir);
    const bool transfer = !init_ckpt.empty();
    Model model = transfer ? load_checkpoint(init_ckpt)
                           : Model(arch_config(small), derive_seed(seed, "init"));
    auto [train_set, test_set] = build_task(corpus, task, derive_seed(seed, "task"));
    (void)test_set;
    model.attach_head(static_cast<int>(train_set.class_names.size()), derive_seed(seed, "head"));
    FeaturePipeline pipeline(corpus, bank, model.config());
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.learning_rate = lr;
    cfg.freeze_base = freeze;
    cfg.seed = derive_seed(seed, "main");
    RunRecord record = train_classifier(model, train_set, pipeline, cfg, transfer);
    save_checkpoint(model, out, {{"stage", "main"}, {"task", task}, {"run", record.to_json()}});
    std::cout << "train: final accuracy " << record.epochs.back().train_accuracy << " -> " << out
              << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& corpus_path, const std::string& ckpt, const std::string& task,
             std::uint64_t seed, const std::string& bank_dir, const std::string& out,
             bool dry_run) {
    if (dry_run) {
        std::cout << "plan: eval " << ckpt << " on task=" << task << "\n";
        return kExitOk;
    }
    Corpus corpus = load_corpus(corpus_path);
    NoiseBank bank = load_bank(bank_dir);
    Model model = load_checkpoint(ckpt);
    auto [train_set, test_set] = build_task(corpus, task, derive_seed(seed, "task"));
    (void)train_set;
    FeaturePipeline pipeline(corpus, bank, model.config());
    EvalReport report = evaluate(model, test_set, pipeline, bank, derive_seed(seed, "eval"));
    std::cout << "eval: " << report.abc() << "\n";
    if (!out.empty()) {
        std::ofstream f(out);
        f << report.to_json().dump(2) << "\n";
    }
    return kExitOk;
}

std::vector<std::string> stage_plan(const ExperimentPlan& plan) {
    std::vector<std::string> stages = {"partition"};
    if (plan.is_contrastive()) {
        stages.push_back("pairgen:" + plan.recipe);
        stages.push_back("pretrain:contrastive");
    } else if (plan.has_pretask()) {
        stages.push_back("pretrain:classification");
    }
    if (plan.has_pretask()) {
        stages.push_back("train:frozen");
        stages.push_back("train:unfrozen");
    } else {
        stages.push_back("train:random_init");
    }
    stages.push_back("eval");
    return stages;
}

int cmd_experiment(const std::string& config_path, const std::string& recipe_override,
                   const std::string& out_override, std::optional<std::uint64_t> seed_override,
                   bool small_override, bool dry_run) {
    Config cfg = load_config(config_path);

    ExperimentPlan plan;
    plan.recipe = recipe_override.empty() ? cfg_get(cfg, "experiment.recipe", "C")
                                          : recipe_override;
    plan.task = cfg_get(cfg, "experiment.task", "multiclass");
    plan.out_dir = out_override.empty() ? cfg_get(cfg, "experiment.out_dir") : out_override;
    plan.master_seed = seed_override ? *seed_override
                                     : std::stoull(cfg_get(cfg, "experiment.master_seed", "0"));
    plan.pretrain_epochs = std::stoi(cfg_get(cfg, "experiment.pretrain_epochs", "3"));
    plan.ct_pretask_epochs = std::stoi(cfg_get(cfg, "experiment.ct_pretask_epochs", "8"));
    plan.random_init_epochs = std::stoi(cfg_get(cfg, "experiment.random_init_epochs", "15"));
    plan.transfer_classification_epochs =
        std::stoi(cfg_get(cfg, "experiment.transfer_classification_epochs", "10"));
    plan.transfer_contrastive_epochs =
        std::stoi(cfg_get(cfg, "experiment.transfer_contrastive_epochs", "6"));
    const bool small = small_override || cfg_get(cfg, "experiment.arch", "default") == "small";
    plan.trunk = arch_config(small);

    plan.split.pretask_words = split_csv(cfg_get(cfg, "split.pretask_words"));
    plan.split.maintask_words = split_csv(cfg_get(cfg, "split.maintask_words"));
    plan.split.train_fraction = std::stod(cfg_get(cfg, "split.train_fraction", "0.8"));
    plan.split.set1_fraction = std::stod(cfg_get(cfg, "split.set1_fraction", "0.3"));
    plan.split.seed = derive_seed(plan.master_seed, "split");

    plan.pairs.pos_per_utterance = std::stoi(cfg_get(cfg, "pairs.pos_per_utterance", "2"));
    plan.pairs.neg_per_utterance = std::stoi(cfg_get(cfg, "pairs.neg_per_utterance", "2"));
    plan.pairs.include_augmented_negatives =
        cfg_get(cfg, "pairs.include_augmented_negatives", "true") == "true";

    plan.train.batch_size = std::stoi(cfg_get(cfg, "train.batch_size", "64"));
    plan.train.learning_rate = std::stod(cfg_get(cfg, "train.learning_rate", "0.001"));
    plan.train.optimizer = cfg_get(cfg, "train.optimizer", "adam") == "sgd"
                               ? OptimizerKind::SgdMomentum
                               : OptimizerKind::Adam;
    plan.train.label_convention = cfg_get(cfg, "train.label_convention", "similar_is_1") ==
                                          "paper_stated"
                                      ? LabelConvention::PaperStated
                                      : LabelConvention::SimilarIs1;
    plan.validate();

    if (dry_run) {
        std::cout << "plan: experiment " << plan.recipe << " task=" << plan.task << "\n";
        for (const auto& s : stage_plan(plan)) std::cout << "  stage: " << s << "\n";
        return kExitOk;
    }

    const std::string labeled_root = cfg_get(cfg, "corpus.labeled");
    require(!labeled_root.empty(), "config: corpus.labeled is required");
    Corpus labeled = fs::is_directory(labeled_root) ? ingest_single_word_corpus(labeled_root)
                                                    : load_corpus(labeled_root);

    std::optional<Corpus> chunked;
    const std::string chunked_manifest = cfg_get(cfg, "corpus.chunked_manifest");
    if (!chunked_manifest.empty()) chunked = load_corpus(chunked_manifest);
    if (plan.recipe == "SSC") {
        require(chunked.has_value(), "SSC: corpus.chunked_manifest is required");
        require(chunked->sealed(), "SSC: refusing an unsealed (label-exposing) corpus");
    }

    NoiseBank bank = load_bank(cfg_get(cfg, "corpus.noise_bank"));
    plan.pairs.sampler.noise_ids = bank.categories();

    if (!plan.out_dir.empty()) {
        fs::create_directories(plan.out_dir);
        std::ifstream src(config_path, std::ios::binary);
        std::ofstream dst((fs::path(plan.out_dir) / "config.snapshot").string(), std::ios::binary);
        dst << src.rdbuf();
        dst << "\n# resolved: recipe=" << plan.recipe << " master_seed=" << plan.master_seed
            << "\n";
    }

    ExperimentResult result = run_experiment(labeled, chunked, bank, plan);
    for (const auto& row : result.rows)
        std::cout << row.exp << " " << row.task << " " << row.variant << " "
                  << row.report.abc() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"keyword-spotting experiment toolkit"};
    app.require_subcommand(1);

    std::string config_path, manifest, out, audio_dir, align, audio_out, corpus_path, strategy;
    std::string set1_csv, set2_csv, noise_csv, pairs_path, bank_dir, init_ckpt, task = "multiclass";
    std::string ckpt, recipe_override;
    std::uint64_t seed = 0;
    bool seed_set = false, dry_run = false, vad = false, seal = false, freeze = false,
         small = false;
    double min_duration = 0.0, lr = 1e-3;
    int jobs = 1, pos = 2, neg = 2, batch_size = 64, epochs = 3;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (key=value with [sections])");
        sub->add_option("--seed", seed, "master seed")->each([&](const std::string&) {
            seed_set = true;
        });
        sub->add_option("--out", out, "output path");
        sub->add_option("--jobs", jobs, "parallel file-level workers")->check(CLI::PositiveNumber);
        sub->add_flag("--dry-run", dry_run, "print the stage plan without executing");
    };

    CLI::App* featurize = app.add_subcommand("featurize", "extract MFCC feature files");
    featurize->add_option("--manifest", manifest, "corpus manifest")->required();
    add_common(featurize);

    CLI::App* chunk = app.add_subcommand("chunk", "cut long audio into word clips");
    chunk->add_option("--audio-dir", audio_dir, "directory of long wav files")->required();
    chunk->add_option("--align", align, "alignment TSV (audio_id<TAB>word<TAB>start<TAB>end)");
    chunk->add_flag("--vad", vad, "segment by energy VAD instead of a manifest");
    chunk->add_option("--audio-out", audio_out, "directory for chunk wavs");
    chunk->add_flag("--seal-labels", seal, "emit a label-sealed manifest");
    chunk->add_option("--min-duration", min_duration, "drop chunks shorter than this (s)");
    add_common(chunk);

    CLI::App* pairgen = app.add_subcommand("pairgen", "generate a contrastive pair manifest");
    pairgen->add_option("--corpus", corpus_path, "corpus manifest")->required();
    pairgen->add_option("--strategy", strategy, "SC | PSC | SSC | SSHN")->required();
    pairgen->add_option("--pos", pos, "positives per utterance");
    pairgen->add_option("--neg", neg, "negatives per utterance");
    pairgen->add_option("--batch-size", batch_size, "SSHN batch size");
    pairgen->add_option("--set1-words", set1_csv, "PSC set-1 words (csv)");
    pairgen->add_option("--set2-words", set2_csv, "PSC set-2 words (csv)");
    pairgen->add_option("--noise", noise_csv, "sampler noise ids (csv)");
    add_common(pairgen);

    CLI::App* pretrain = app.add_subcommand("pretrain", "contrastive pre-task training");
    pretrain->add_option("--corpus", corpus_path, "corpus manifest")->required();
    pretrain->add_option("--pairs", pairs_path, "pair manifest")->required();
    pretrain->add_option("--epochs", epochs, "training epochs");
    pretrain->add_option("--batch-size", batch_size, "batch size");
    pretrain->add_option("--lr", lr, "learning rate");
    pretrain->add_option("--noise-bank", bank_dir, "noise bank directory");
    pretrain->add_flag("--small", small, "reduced architecture for smoke runs");
    add_common(pretrain);

    CLI::App* train = app.add_subcommand("train", "train a classifier head (and trunk)");
    train->add_option("--corpus", corpus_path, "corpus manifest")->required();
    train->add_option("--init", init_ckpt, "initial checkpoint (transfer)");
    train->add_option("--task", task, "multiclass | ova:<word>");
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--batch-size", batch_size, "batch size");
    train->add_option("--lr", lr, "learning rate");
    train->add_flag("--freeze-base", freeze, "freeze conv trunk parameters");
    train->add_option("--noise-bank", bank_dir, "noise bank directory");
    train->add_flag("--small", small, "reduced architecture for smoke runs");
    add_common(train);

    CLI::App* eval_cmd = app.add_subcommand("eval", "clean/car/other accuracy report");
    eval_cmd->add_option("--corpus", corpus_path, "corpus manifest")->required();
    eval_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--task", task, "multiclass | ova:<word>");
    eval_cmd->add_option("--noise-bank", bank_dir, "noise bank directory");
    add_common(eval_cmd);

    CLI::App* experiment = app.add_subcommand("experiment", "run a full recipe end to end");
    experiment->add_option("--recipe", recipe_override, "override experiment.recipe");
    experiment->add_flag("--small", small, "reduced architecture for smoke runs");
    add_common(experiment);
    experiment->get_option("--config")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*featurize) return cmd_featurize(manifest, out, dry_run);
        if (*chunk)
            return cmd_chunk(audio_dir, align, vad, out, audio_out, seal, min_duration, dry_run);
        if (*pairgen)
            return cmd_pairgen(corpus_path, strategy, out, seed, pos, neg, batch_size, set1_csv,
                               set2_csv, noise_csv, dry_run);
        if (*pretrain)
            return cmd_pretrain(corpus_path, pairs_path, out, seed, epochs, batch_size, lr,
                                bank_dir, small, dry_run);
        if (*train)
            return cmd_train(corpus_path, init_ckpt, task, out, seed, epochs, batch_size, lr,
                             freeze, bank_dir, small, dry_run);
        if (*eval_cmd) return cmd_eval(corpus_path, ckpt, task, seed, bank_dir, out, dry_run);
        if (*experiment)
            return cmd_experiment(config_path, recipe_override, out,
                                  seed_set ? std::optional<std::uint64_t>(seed) : std::nullopt,
                                  small, dry_run);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}
