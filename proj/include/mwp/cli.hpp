#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mwp/answer_scoring.hpp"
#include "mwp/corpus.hpp"
#include "mwp/encoder.hpp"
#include "mwp/evaluation.hpp"
#include "mwp/hash.hpp"
#include "mwp/plot.hpp"
#include "mwp/pretext.hpp"
#include "mwp/tokenizer.hpp"
#include "mwp/training.hpp"

// `mwp <command> [options]`. Every command accepts --workdir, --seed, --preset,
// --tokenizer, --vocab and --config (flat key=value file; flags win).

namespace mwp::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kCacheEnv = "MWP_CACHE_DIR";

struct Common {
    std::string workdir = ".";
    std::uint64_t seed = 0;
    std::string preset = "toy";
    std::string tokenizer;  // basic | wordpiece; defaults to what prepare recorded
    std::string vocab;
    std::string config;
};

struct Context {
    std::string command;
    Common common;
    json options;  // effective option values, verbatim in every output directory
    std::string config_hash;
    std::ostream* out = &std::cout;
    std::ostream* err = &std::cerr;

    fs::path workdir() const { return fs::path(common.workdir); }

    fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : workdir() / path;
    }

    fs::path cache_dir() const {
        const char* env = std::getenv(kCacheEnv);
        return env && *env ? fs::path(env) : fs::path();
    }

    void log(const std::string& line) const { *err << line << '\n'; }
};

// ---------------------------------------------------------------------------
// Config file

/// Flat `key = value` lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> read_flat_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot read config " + path.string());
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto t = std::string(detail::trim(line));
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorKind::config, path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        }
        out.emplace_back(std::string(detail::trim(std::string_view(t).substr(0, eq))),
                         std::string(detail::trim(std::string_view(t).substr(eq + 1))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shared helpers

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::io, path.string() + ": " + e.what());
    }
}

inline json metadata(const Context& ctx, const std::string& corpus = {}) {
    json m = {{"command", ctx.command}, {"config_hash", ctx.config_hash}, {"seed", ctx.common.seed}};
    if (!corpus.empty()) m["corpus_hash"] = corpus;
    return m;
}

/// Records the effective configuration in an output directory.
inline void write_experiment(const Context& ctx, const fs::path& dir) {
    write_json(dir / "experiment.json",
               {{"command", ctx.command}, {"options", ctx.options}, {"config_hash", ctx.config_hash}});
}

inline fs::path fold_path(const Context& ctx, const std::string& fold) {
    return ctx.workdir() / "folds" / (fold + ".jsonl");
}

inline std::vector<Problem> load_fold(const Context& ctx, const std::string& fold) {
    const auto norm = fold == "extdev" ? std::string("ext_dev") : fold;
    const auto path = fold_path(ctx, norm);
    if (!fs::exists(path)) {
        const auto direct = ctx.resolve(fold);
        if (fs::exists(direct)) return load_jsonl(direct.string(), direct.stem().string());
        throw Error(ErrorKind::io, "missing fold " + path.string() + " (run prepare first)");
    }
    return load_jsonl(path.string(), norm);
}

inline std::unique_ptr<Tokenizer> load_tokenizer(const Context& ctx) {
    std::string kind = ctx.common.tokenizer;
    std::string vocab = ctx.common.vocab;
    const auto record = ctx.workdir() / "tokenizer.json";
    if (fs::exists(record)) {
        const auto j = read_json(record);
        if (kind.empty()) kind = j.value("kind", "basic");
        if (vocab.empty()) vocab = j.value("vocab", "vocab.txt");
    }
    if (kind.empty()) kind = "basic";
    if (vocab.empty()) vocab = "vocab.txt";
    const auto path = ctx.resolve(vocab).string();
    if (kind == "wordpiece") return std::make_unique<WordPieceTokenizer>(WordPieceTokenizer::from_file(path));
    if (kind == "basic") return std::make_unique<BasicTokenizer>(Vocab::load(path));
    throw Error(ErrorKind::config, "unknown tokenizer '" + kind + "'");
}

inline ModelBundle<float> make_model(const Context& ctx, const Tokenizer& tok, const std::string& init,
                                     const std::string& pretrained) {
    if (!init.empty()) {
        auto m = load_checkpoint<float>(ctx.resolve(init));
        if (m.config().vocab != tok.vocab().size()) {
            throw Error(ErrorKind::config, "checkpoint vocabulary (" + std::to_string(m.config().vocab) +
                                               ") does not match tokenizer (" + std::to_string(tok.vocab().size()) + ")");
        }
        return m;
    }
    ModelBundle<float> m(EncoderConfig::preset(ctx.common.preset, tok.vocab().size()), ctx.common.seed);
    if (!pretrained.empty()) {
        const auto n = load_pretrained(m, PretrainedManifest::load(ctx.resolve(pretrained)));
        ctx.log("loaded " + std::to_string(n) + " pretrained tensors");
    }
    return m;
}

inline std::vector<double> parse_fractions(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = std::string(detail::trim(item));
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw Error(ErrorKind::config, "bad fraction '" + item + "'");
        }
    }
    if (out.empty()) throw Error(ErrorKind::config, "no fractions given");
    return out;
}

inline std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
    std::string data;
    std::size_t ext_dev_samples = kExtendedDevSamples;
    bool keep_in_train = false;
    std::size_t min_count = 1;
};

inline fs::path find_fold_file(const fs::path& dir, const std::string& name) {
    for (const auto* ext : {".jsonl", ".json", ".tok.json"}) {
        const auto p = dir / (name + ext);
        if (fs::exists(p)) return p;
    }
    throw Error(ErrorKind::io, "no " + name + " fold in " + dir.string());
}

inline json distribution_json(const AnswerHistogram& h) {
    json j = json::object();
    for (std::size_t i = 0; i < kNumOptions; ++i) j[std::string(1, label_letter(i))] = h[i];
    return j;
}

inline int cmd_prepare(const Context& ctx, const PrepareArgs& a) {
    const auto data = ctx.resolve(a.data);
    Folds folds;
    folds.train = load_jsonl(find_fold_file(data, "train").string(), "train");
    folds.dev = load_jsonl(find_fold_file(data, "dev").string(), "dev");
    folds.test = load_jsonl(find_fold_file(data, "test").string(), "test");
    const auto splits = build_splits(folds, ctx.common.seed, {a.ext_dev_samples, a.keep_in_train});
    for (const auto& w : splits.warnings) ctx.log("warning: " + w);

    const auto dir = ctx.workdir();
    fs::create_directories(dir / "folds");
    write_jsonl(splits.train, fold_path(ctx, "train").string());
    write_jsonl(splits.dev, fold_path(ctx, "dev").string());
    write_jsonl(splits.ext_dev, fold_path(ctx, "ext_dev").string());
    write_jsonl(splits.test, fold_path(ctx, "test").string());
    auto manifest = splits_manifest(splits);
    manifest["metadata"] = metadata(ctx, corpus_hash(folds.train));
    write_json(dir / "splits.json", manifest);

    std::string kind = ctx.common.tokenizer.empty() ? "basic" : ctx.common.tokenizer;
    std::string vocab = ctx.common.vocab.empty() ? "vocab.txt" : ctx.common.vocab;
    if (kind == "basic" && ctx.common.vocab.empty()) {
        std::vector<std::string> texts;
        for (const auto& p : folds.train) {
            texts.push_back(p.question);
            texts.push_back(p.rationale);
            for (const auto& o : p.options) texts.push_back(o);
        }
        BasicTokenizer::build(texts, a.min_count).vocab().save((dir / vocab).string());
    }
    write_json(dir / "tokenizer.json", {{"kind", kind}, {"vocab", vocab}});
    Context tctx = ctx;
    tctx.common.tokenizer = kind;
    tctx.common.vocab = vocab;
    const auto tok = load_tokenizer(tctx);

    json report = {{"metadata", metadata(ctx, corpus_hash(folds.train))}, {"folds", json::object()}};
    std::ostringstream md;
    md << "| Fold | Problems | A | B | C | D | E |\n|---|---|---|---|---|---|---|\n";
    auto add = [&](const std::string& name, const std::vector<Problem>& f) {
        if (f.empty()) return;
        const auto h = answer_distribution(f);
        report["folds"][name] = {{"problems", f.size()}, {"distribution", distribution_json(h)}};
        md << "| " << name << " | " << f.size();
        for (double v : h) md << " | " << fmt(v, 2) << '%';
        md << " |\n";
    };
    add("train", folds.train);
    add("dev", folds.dev);
    add("test", folds.test);
    add("ext_dev", splits.ext_dev);
    add("train_effective", splits.train);
    if (!folds.test.empty()) {
        std::size_t a_correct = 0;
        for (const auto& p : folds.test) a_correct += p.correct == 'A' ? 1 : 0;
        const double acc = static_cast<double>(a_correct) / static_cast<double>(folds.test.size());
        report["constant_a_test_accuracy"] = acc;
        md << "\nConstant-A test accuracy: " << percent(acc) << '\n';
    }
    if (!folds.train.empty()) {
        const double ratio = rationale_question_token_ratio(folds.train, *tok);
        report["rationale_question_token_ratio"] = ratio;
        md << "Rationale/question token ratio (train): " << fmt(ratio, 3) << '\n';
    }
    write_json(dir / "distribution.json", report);
    write_text(dir / "distribution.md", md.str());
    write_experiment(ctx, dir);
    *ctx.out << md.str();
    return 0;
}

// ---------------------------------------------------------------------------
// selfsup

struct SelfsupArgs {
    std::string losses = "MLM,NROP";
    std::size_t epochs = 24;
    double lr = 5e-5;
    std::size_t batch = 16;
    double clip = 1.0;
    std::size_t max_len = kMaxPositions;
    std::size_t regenerate_every = 2;
    std::size_t warmup = 0;
    bool linear_decay = false;
    bool no_rationales = false;
    std::string fold = "train";
    std::size_t limit = 0;
    std::string init;
    std::string pretrained;
    std::string out = "runs/selfsup";
};

inline TrainConfig selfsup_config(const Context& ctx, const SelfsupArgs& a) {
    auto c = TrainConfig::selfsup_defaults();
    c.losses = LossSet::parse(a.losses);
    c.epochs = a.epochs;
    c.lr = a.lr;
    c.batch = a.batch;
    c.clip = a.clip;
    c.max_len = a.max_len;
    c.regenerate_every = a.regenerate_every;
    c.warmup_steps = a.warmup;
    c.linear_decay = a.linear_decay;
    c.seed = ctx.common.seed;
    c.validate();
    return c;
}

inline SelfSupResult run_selfsup(const Context& ctx, ModelBundle<float>& model, const Tokenizer& tok,
                                 const std::vector<Problem>& problems, const TrainConfig& cfg, bool rationales,
                                 const fs::path& out) {
    auto pc = cfg.pretext();
    pc.include_rationales = rationales;
    PretextDataset data(problems, tok, pc);
    TrainHooks hooks;
    hooks.out_dir = out;
    hooks.metadata = metadata(ctx, corpus_hash(problems));
    hooks.log = [&](const std::string& s) { ctx.log(s); };
    hooks.cache_dir = ctx.cache_dir();
    hooks.corpus_hash = corpus_hash(problems);
    return self_supervised_train(model, data, cfg, hooks);
}

inline std::string loss_curve_csv(const SelfSupResult& r) {
    std::ostringstream s;
    s << "epoch,loss,mlm,order,qra\n";
    auto term = [](const SelfSupEpoch& e, const char* n) {
        auto it = e.terms.find(n);
        return it == e.terms.end() ? std::string() : fmt(it->second, 6);
    };
    for (const auto& e : r.epochs) {
        s << e.epoch << ',' << fmt(e.loss, 6) << ',' << term(e, "mlm") << ',' << term(e, "order") << ','
          << term(e, "qra") << '\n';
    }
    return s.str();
}

inline int cmd_selfsup(const Context& ctx, const SelfsupArgs& a) {
    const auto cfg = selfsup_config(ctx, a);
    const auto tok = load_tokenizer(ctx);
    auto problems = load_fold(ctx, a.fold);
    if (a.limit && problems.size() > a.limit) problems.resize(a.limit);
    auto model = make_model(ctx, *tok, a.init, a.pretrained);
    const auto out = ctx.resolve(a.out);
    fs::create_directories(out);
    write_experiment(ctx, out);
    const auto r = run_selfsup(ctx, model, *tok, problems, cfg, !a.no_rationales, out);
    auto meta = metadata(ctx, corpus_hash(problems));
    meta["losses"] = cfg.losses.str();
    save_checkpoint(model, out / "final", meta);
    write_text(out / "losses.csv", loss_curve_csv(r));
    *ctx.out << "final loss " << fmt(r.epochs.back().loss, 6) << "; checkpoint " << (out / "final").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneArgs {
    std::string scheme = "ORIG";
    std::string val_split = "extdev";
    std::size_t epochs = 100;
    double lr = 1e-5;
    std::size_t batch = 16;
    double clip = 1.0;
    std::size_t patience = 15;
    std::size_t aug_permutations = 25;
    std::size_t sep_negatives = kNumOptions - 1;
    std::size_t max_len = kMaxPositions;
    std::size_t warmup = 0;
    bool linear_decay = false;
    std::size_t limit = 0;
    bool track_test = false;
    std::string init;
    std::string pretrained;
    std::string out = "runs/finetune";
};

inline TrainConfig finetune_config(const Context& ctx, const FinetuneArgs& a) {
    auto c = TrainConfig::finetune_defaults();
    c.scheme = parse_scheme(a.scheme);
    c.epochs = a.epochs;
    c.lr = a.lr;
    c.batch = a.batch;
    c.clip = a.clip;
    c.patience = a.patience;
    c.aug_permutations = a.aug_permutations;
    c.sep_negatives = a.sep_negatives;
    c.max_len = a.max_len;
    c.warmup_steps = a.warmup;
    c.linear_decay = a.linear_decay;
    c.seed = ctx.common.seed;
    c.validate();
    return c;
}

inline std::string validation_fold(const std::string& split) {
    if (split == "dev") return "dev";
    if (split == "extdev" || split == "ext_dev") return "ext_dev";
    throw Error(ErrorKind::config, "--val-split must be dev or extdev");
}

inline std::string trajectory_csv(const FinetuneResult& r) {
    std::ostringstream s;
    s << "epoch,train_loss,val_acc,test_acc\n";
    for (const auto& e : r.trajectory) {
        s << e.epoch << ',' << fmt(e.train_loss, 6) << ',' << fmt(e.val_accuracy, 6) << ','
          << (e.test_accuracy ? fmt(*e.test_accuracy, 6) : std::string()) << '\n';
    }
    return s.str();
}

struct FinetuneOutcome {
    FinetuneResult result;
    double test_accuracy = 0.0;
};

inline FinetuneOutcome run_finetune(const Context& ctx, ModelBundle<float>& model, const Tokenizer& tok,
                                    const std::vector<Problem>& train, const std::vector<Problem>& val,
                                    const std::vector<Problem>& test, const TrainConfig& cfg, bool track_test,
                                    const fs::path& out) {
    TrainHooks hooks;
    hooks.out_dir = out;
    hooks.metadata = metadata(ctx, corpus_hash(train));
    hooks.log = [&](const std::string& s) { ctx.log(s); };
    FinetuneOutcome o;
    o.result = finetune(model, tok, train, val, cfg, hooks, track_test ? &test : nullptr);
    if (!test.empty()) {
        const AnswerScorer<float> scorer(model, tok, cfg.scheme == Scheme::aug ? Scheme::orig : cfg.scheme);
        auto preds = predict(scorer, test);
        for (auto& p : preds) p.scheme = cfg.scheme;
        write_predictions(out / "predictions_test.jsonl", preds);
        o.test_accuracy = accuracy(preds);
    }
    return o;
}

inline int cmd_finetune(const Context& ctx, const FinetuneArgs& a) {
    const auto cfg = finetune_config(ctx, a);
    const auto tok = load_tokenizer(ctx);
    auto train = load_fold(ctx, "train");
    if (a.limit && train.size() > a.limit) train.resize(a.limit);
    const auto val = load_fold(ctx, validation_fold(a.val_split));
    const auto test = fs::exists(fold_path(ctx, "test")) ? load_fold(ctx, "test") : std::vector<Problem>{};
    auto model = make_model(ctx, *tok, a.init, a.pretrained);
    const auto out = ctx.resolve(a.out);
    fs::create_directories(out);
    write_experiment(ctx, out);
    const auto o = run_finetune(ctx, model, *tok, train, val, test, cfg, a.track_test, out);
    write_text(out / "trajectory.csv", trajectory_csv(o.result));
    json result = {{"metadata", metadata(ctx, corpus_hash(train))},
                   {"scheme", to_string(cfg.scheme)},
                   {"val_split", a.val_split},
                   {"best_epoch", o.result.best_epoch},
                   {"best_val_accuracy", o.result.best_val_accuracy},
                   {"epochs_run", o.result.trajectory.size()},
                   {"stopped_early", o.result.stopped_early}};
    if (!test.empty()) result["test_accuracy"] = o.test_accuracy;
    if (a.track_test && o.result.trajectory.size() >= 3) {
        std::vector<double> v, t;
        for (const auto& e : o.result.trajectory) {
            v.push_back(e.val_accuracy);
            t.push_back(e.test_accuracy.value_or(0.0));
        }
        try {
            result["dev_test_correlation"] = pearson(v, t);
        } catch (const Error& e) {
            result["dev_test_correlation"] = nullptr;
            result["dev_test_correlation_error"] = e.what();
        }
    }
    write_json(out / "result.json", result);
    *ctx.out << "best epoch " << o.result.best_epoch << ", val " << percent(o.result.best_val_accuracy);
    if (!test.empty()) *ctx.out << ", test " << percent(o.test_accuracy);
    *ctx.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// eval / permtest / difficulty

struct EvalArgs {
    std::string model;
    std::string dump;
    std::string scheme;  // defaults to the checkpoint's head
    std::string fold = "test";
    std::string name;
    std::string out = "eval";
};

inline Scheme default_scheme(const ModelBundle<float>& m) {
    return m.has_head(Head::match) ? Scheme::sep_c : Scheme::orig;
}

inline std::vector<Prediction> predictions_for(const Context& ctx, const EvalArgs& a, const std::vector<Problem>& fold,
                                               Scheme* scheme_out = nullptr) {
    if (!a.dump.empty()) return read_predictions(ctx.resolve(a.dump));
    if (a.model.empty()) throw Error(ErrorKind::config, "need --model or --dump");
    const auto tok = load_tokenizer(ctx);
    auto model = load_checkpoint<float>(ctx.resolve(a.model));
    const auto scheme = a.scheme.empty() ? default_scheme(model) : parse_scheme(a.scheme);
    if (scheme_out) *scheme_out = scheme;
    const AnswerScorer<float> scorer(model, *tok, scheme == Scheme::aug ? Scheme::orig : scheme);
    auto preds = predict(scorer, fold);
    for (auto& p : preds) p.scheme = scheme;
    return preds;
}

inline int cmd_eval(const Context& ctx, const EvalArgs& a) {
    const auto fold = load_fold(ctx, a.fold);
    const auto preds = predictions_for(ctx, a, fold);
    const auto selected = select_fold(preds, fold);
    const double acc = accuracy(selected);
    const auto out = ctx.resolve(a.out);
    fs::create_directories(out);
    write_experiment(ctx, out);
    write_predictions(out / "predictions.jsonl", selected);
    const auto scheme = selected.empty() ? std::string("ORIG") : to_string(selected.front().scheme);
    const auto name = a.name.empty() ? (a.model.empty() ? a.dump : a.model) : a.name;
    json report = {{"metadata", metadata(ctx, corpus_hash(fold))},
                   {"kind", "accuracy"},
                   {"model", name},
                   {"scheme", scheme},
                   {"fold", a.fold},
                   {"problems", selected.size()},
                   {"accuracy", acc}};
    write_json(out / "accuracy.json", report);
    write_text(out / "accuracy.md", "| Model | Scheme | Accuracy |\n|---|---|---|\n| " + name + " | " + scheme + " | " +
                                        percent(acc) + " |\n");
    *ctx.out << "accuracy " << percent(acc) << " on " << selected.size() << " problems\n";
    return 0;
}

inline int cmd_permtest(const Context& ctx, const EvalArgs& a) {
    const auto fold = load_fold(ctx, a.fold);
    const auto out = ctx.resolve(a.out);
    fs::create_directories(out);
    write_experiment(ctx, out);
    ConsistencyReport report;
    std::string scheme = "ORIG";
    if (!a.dump.empty()) {
        const auto dump = read_predictions(ctx.resolve(a.dump));
        report = perm_consistency(dump, fold);
        if (!dump.empty()) scheme = to_string(dump.front().scheme);
    } else {
        if (a.model.empty()) throw Error(ErrorKind::config, "need --model or --dump");
        const auto tok = load_tokenizer(ctx);
        auto model = load_checkpoint<float>(ctx.resolve(a.model));
        const auto s = a.scheme.empty() ? default_scheme(model) : parse_scheme(a.scheme);
        scheme = to_string(s);
        const AnswerScorer<float> scorer(model, *tok, s == Scheme::aug ? Scheme::orig : s);
        auto [dump, r] = perm_consistency(scorer, fold);
        for (auto& p : dump) p.scheme = s;
        write_predictions(out / "perm_predictions.jsonl", dump);
        report = std::move(r);
    }
    const auto name = a.name.empty() ? (a.model.empty() ? a.dump : a.model) : a.name;
    auto j = to_json(report);
    j["metadata"] = metadata(ctx, corpus_hash(fold));
    j["kind"] = "consistency";
    j["model"] = name;
    j["scheme"] = scheme;
    write_json(out / "consistency.json", j);
    write_text(out / "consistency.md", consistency_markdown(report, name + " " + scheme));
    *ctx.out << "consistency " << percent(report.score()) << ", accuracy " << percent(report.accuracy()) << '\n';
    return 0;
}

inline int cmd_difficulty(const Context& ctx, const EvalArgs& a) {
    const auto fold = load_fold(ctx, a.fold);
    const auto preds = predictions_for(ctx, a, fold);
    const auto report = difficulty_report(preds, fold);
    const auto out = ctx.resolve(a.out);
    fs::create_directories(out);
    write_experiment(ctx, out);
    auto j = to_json(report);
    j["metadata"] = metadata(ctx, corpus_hash(fold));
    j["kind"] = "difficulty";
    j["accuracy"] = accuracy(select_fold(preds, fold));
    std::ostringstream ranks;
    ranks << "problem_id,rank,group\n";
    for (const auto& [id, r] : report.ranks) ranks << id << ',' << r << ',' << to_string(difficulty_group(r)) << '\n';
    write_json(out / "difficulty.json", j);
    write_text(out / "difficulty.md", difficulty_markdown(report));
    write_text(out / "difficulty_ranks.csv", ranks.str());
    *ctx.out << difficulty_markdown(report);
    return 0;
}

// ---------------------------------------------------------------------------
// ablate-tokens

struct AblateArgs {
    std::string fractions = "0.2,0.4,0.6,0.8,1.0";
    std::string losses = "MLM,NROP";
    std::size_t selfsup_epochs = 24;
    std::size_t finetune_epochs = 100;
    double selfsup_lr = 5e-5;
    double finetune_lr = 1e-5;
    std::size_t batch = 16;
    std::size_t patience = 15;
    std::size_t max_len = kMaxPositions;
    std::string val_split = "extdev";
    std::string out = "ablate";
};

inline int cmd_ablate(const Context& ctx, const AblateArgs& a) {
    const auto tok = load_tokenizer(ctx);
    const auto train = load_fold(ctx, "train");
    const auto val = load_fold(ctx, validation_fold(a.val_split));
    const auto test = load_fold(ctx, "test");
    const auto pairs = token_matched_subsets(train, *tok, parse_fractions(a.fractions), ctx.common.seed);
    const auto out = ctx.resolve(a.out);
    fs::create_directories(out);
    write_experiment(ctx, out);

    auto ss = TrainConfig::selfsup_defaults();
    ss.epochs = a.selfsup_epochs;
    ss.lr = a.selfsup_lr;
    ss.batch = a.batch;
    ss.max_len = a.max_len;
    ss.seed = ctx.common.seed;
    auto ft = TrainConfig::finetune_defaults();
    ft.epochs = a.finetune_epochs;
    ft.lr = a.finetune_lr;
    ft.batch = a.batch;
    ft.patience = a.patience;
    ft.max_len = a.max_len;
    ft.seed = ctx.common.seed;

    std::ostringstream csv;
    csv << "question_fraction,budget_tokens,with_rationales_tokens,with_rationales_fraction,acc_questions_only,"
           "acc_with_rationales\n";
    json rows = json::array();
    for (const auto& pair : pairs) {
        auto subset = [&](const std::vector<std::size_t>& idx) {
            std::vector<Problem> s;
            for (auto i : idx) s.push_back(train[i]);
            return s;
        };
        double acc[2] = {0, 0};
        for (int arm = 0; arm < 2; ++arm) {
            const bool with_r = arm == 1;
            auto cfg = ss;
            cfg.losses = with_r ? LossSet::parse(a.losses) : LossSet::parse("MLM");
            const auto problems = subset(with_r ? pair.with_rationales : pair.questions_only);
            const auto tagname = std::string(with_r ? "qr-" : "q-") + fmt(pair.question_fraction, 2);
            ModelBundle<float> model(EncoderConfig::preset(ctx.common.preset, tok->vocab().size()), ctx.common.seed);
            run_selfsup(ctx, model, *tok, problems, cfg, with_r, out / tagname / "selfsup");
            acc[arm] = run_finetune(ctx, model, *tok, train, val, test, ft, false, out / tagname / "finetune")
                           .test_accuracy;
        }
        csv << fmt(pair.question_fraction, 4) << ',' << pair.budget_tokens << ',' << pair.with_rationales_tokens
            << ',' << fmt(pair.with_rationales_fraction, 4) << ',' << fmt(acc[0], 6) << ',' << fmt(acc[1], 6)
            << '\n';
        rows.push_back({{"question_fraction", pair.question_fraction},
                        {"budget_tokens", pair.budget_tokens},
                        {"with_rationales_tokens", pair.with_rationales_tokens},
                        {"relative_gap", pair.relative_gap()},
                        {"acc_questions_only", acc[0]},
                        {"acc_with_rationales", acc[1]}});
    }
    write_text(out / "curve.csv", csv.str());
    write_json(out / "ablation.json", {{"metadata", metadata(ctx, corpus_hash(train))}, {"rows", rows}});
    *ctx.out << csv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// embed / plot / report

struct EmbedArgs {
    std::string model;
    std::string fold = "test";
    std::size_t limit = 2500;
    std::string out = "embed";
};

inline int cmd_embed(const Context& ctx, const EmbedArgs& a) {
    const auto tok = load_tokenizer(ctx);
    const auto model = load_checkpoint<float>(ctx.resolve(a.model));
    const auto fold = load_fold(ctx, a.fold);
    Warnings warnings;
    const auto e = export_embeddings(model, *tok, fold, a.limit ? std::optional(a.limit) : std::nullopt, &warnings);
    for (const auto& w : warnings) ctx.log("warning: " + w);
    const auto xy = project_2d(e.vectors);
    const auto out = ctx.resolve(a.out);
    fs::create_directories(out);
    write_experiment(ctx, out);
    write_text(out / "embeddings.csv", embeddings_csv(e));
    std::ostringstream p;
    p.precision(9);
    p << "id,label,x,y\n";
    for (Eigen::Index r = 0; r < xy.rows(); ++r) {
        p << e.ids[static_cast<std::size_t>(r)] << ',' << e.labels[static_cast<std::size_t>(r)] << ',' << xy(r, 0)
          << ',' << xy(r, 1) << '\n';
    }
    write_text(out / "projection.csv", p.str());
    write_json(out / "embed.json", {{"metadata", metadata(ctx, corpus_hash(fold))},
                                    {"exported", e.ids.size()},
                                    {"projection", "pca"},
                                    {"operator_filter", "heuristic: one distinct operator among + - * /"},
                                    {"warnings", warnings}});
    *ctx.out << "exported " << e.ids.size() << " embeddings\n";
    return 0;
}

struct PlotArgs {
    std::string input;
    std::string x;
    std::vector<std::string> y;
    std::string group;
    std::string title;
    bool scatter = false;
    std::string out;
};

inline int cmd_plot(const Context& ctx, const PlotArgs& a) {
    const auto table = plot::read_csv(ctx.resolve(a.input).string());
    std::string x = a.x;
    std::vector<std::string> y = a.y;
    if (x.empty()) x = table.header.at(0);
    if (y.empty()) {
        for (std::size_t i = 1; i < table.header.size(); ++i) {
            if (table.header[i] != a.group) y.push_back(table.header[i]);
        }
    }
    plot::Options o;
    o.title = a.title.empty() ? fs::path(a.input).stem().string() : a.title;
    o.x_label = x;
    o.y_label = y.size() == 1 ? y.front() : std::string();
    o.scatter = a.scatter;
    const auto out = a.out.empty() ? fs::path(ctx.resolve(a.input)).replace_extension(".svg") : ctx.resolve(a.out);
    write_text(out, plot::render_svg(plot::series_from(table, x, y, a.group), o));
    *ctx.out << out.string() << '\n';
    return 0;
}

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string out = "report";
};

inline int cmd_report(const Context& ctx, const ReportArgs& a) {
    json accuracy_rows = json::array();
    json consistency_rows = json::array();
    json difficulty_rows = json::array();
    for (const auto& in : a.inputs) {
        const auto j = read_json(ctx.resolve(in));
        const auto kind = j.value("kind", "");
        if (kind == "accuracy") {
            accuracy_rows.push_back({{"model", j.value("model", in)},
                                     {"scheme", j.value("scheme", "ORIG")},
                                     {"accuracy", j.at("accuracy")},
                                     {"source", in}});
        } else if (kind == "consistency") {
            consistency_rows.push_back({{"model", j.value("model", in)},
                                        {"scheme", j.value("scheme", "ORIG")},
                                        {"accuracy", j.at("accuracy")},
                                        {"consistency", j.at("consistency")},
                                        {"source", in}});
        } else if (kind == "difficulty") {
            difficulty_rows.push_back({{"source", in}, {"histogram", j.at("histogram")}, {"groups", j.at("groups")}});
        } else {
            throw Error(ErrorKind::config, in + " is not an accuracy, consistency or difficulty report");
        }
    }
    json report = {{"metadata", metadata(ctx)},
                   {"accuracy", accuracy_rows},
                   {"consistency", consistency_rows},
                   {"difficulty", difficulty_rows}};
    std::ostringstream md;
    md << "# Results\n\nconfig hash `" << ctx.config_hash << "`, seed " << ctx.common.seed << "\n";
    if (!accuracy_rows.empty()) {
        md << "\n| Model | Scheme | Accuracy |\n|---|---|---|\n";
        for (const auto& r : accuracy_rows) {
            md << "| " << r["model"].get<std::string>() << " | " << r["scheme"].get<std::string>() << " | "
               << percent(r["accuracy"].get<double>()) << " |\n";
        }
    }
    if (!consistency_rows.empty()) {
        md << "\n| Model | Scheme | Accuracy | Permutation consistency |\n|---|---|---|---|\n";
        for (const auto& r : consistency_rows) {
            md << "| " << r["model"].get<std::string>() << " | " << r["scheme"].get<std::string>() << " | "
               << percent(r["accuracy"].get<double>()) << " | " << percent(r["consistency"].get<double>()) << " |\n";
        }
    }
    if (!difficulty_rows.empty()) {
        md << "\n| Source | D1 | D2 | D3 | D4 | D5 |\n|---|---|---|---|---|---|\n";
        for (const auto& r : difficulty_rows) {
            md << "| " << r["source"].get<std::string>();
            for (const auto* k : {"D1", "D2", "D3", "D4", "D5"}) md << " | " << r["histogram"].value(k, 0);
            md << " |\n";
        }
    }
    const auto out = ctx.resolve(a.out);
    fs::create_directories(out);
    write_json(out / "report.json", report);
    write_text(out / "report.md", md.str());
    *ctx.out << md.str();
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline void error_record(std::ostream& err, const std::string& command, std::string_view kind,
                         const std::string& message) {
    err << json{{"error", {{"kind", kind}, {"message", message}, {"command", command}}}}.dump() << '\n';
}

// Bad flags, config files or config values are usage errors.
inline int exit_code(ErrorKind k) { return k == ErrorKind::config ? 2 : 1; }

/// Parses and runs one command. Returns the process exit code: 0 on success,
/// 1 on a failed command, 2 on a usage or configuration error.
inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
    CLI::App app{"Math word problem experiments: splits, self-supervision, fine-tuning and evaluation", "mwp"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        sub->add_option("--workdir", common.workdir, "Directory all relative paths resolve against");
        sub->add_option("--seed", common.seed, "Seed for every random choice");
        sub->add_option("--preset", common.preset, "Encoder preset")->check(CLI::IsMember({"toy", "base"}));
        sub->add_option("--tokenizer", common.tokenizer, "Tokenizer backend")
            ->check(CLI::IsMember({"", "basic", "wordpiece"}));
        sub->add_option("--vocab", common.vocab, "Vocabulary file");
        sub->add_option("--config", common.config, "Flat key=value config file; flags override it");
    };

    PrepareArgs prep;
    auto* c_prepare = app.add_subcommand("prepare", "Build splits, vocabulary and answer statistics");
    add_common(c_prepare);
    c_prepare->add_option("--data", prep.data, "Directory with train/dev/test JSON-lines files")->required();
    c_prepare->add_option("--ext-dev-samples", prep.ext_dev_samples, "Train problems moved into the extended dev fold");
    c_prepare->add_flag("--keep-in-train", prep.keep_in_train, "Keep extended-dev samples in the training fold");
    c_prepare->add_option("--min-count", prep.min_count, "Minimum frequency for the basic vocabulary");

    SelfsupArgs ss;
    auto* c_selfsup = app.add_subcommand("selfsup", "Self-supervised training (MLM, ROP/NROP, QRA)");
    add_common(c_selfsup);
    c_selfsup->add_option("--losses", ss.losses, "Comma-separated subset of MLM,ROP,NROP,QRA");
    c_selfsup->add_option("--epochs", ss.epochs);
    c_selfsup->add_option("--lr", ss.lr);
    c_selfsup->add_option("--batch", ss.batch, "Effective batch size");
    c_selfsup->add_option("--clip", ss.clip, "Global gradient-norm clip (0 disables)");
    c_selfsup->add_option("--max-len", ss.max_len);
    c_selfsup->add_option("--regenerate-every", ss.regenerate_every, "Epochs between order/QRA redraws");
    c_selfsup->add_option("--warmup", ss.warmup, "Linear warmup steps");
    c_selfsup->add_flag("--linear-decay", ss.linear_decay, "Decay the learning rate linearly to zero");
    c_selfsup->add_flag("--no-rationales", ss.no_rationales, "Train on questions only");
    c_selfsup->add_option("--fold", ss.fold);
    c_selfsup->add_option("--limit", ss.limit, "Use only the first N problems (0 = all)");
    c_selfsup->add_option("--init", ss.init, "Checkpoint to continue from");
    c_selfsup->add_option("--pretrained", ss.pretrained, "Manifest of external pretrained tensors");
    c_selfsup->add_option("--out", ss.out);

    FinetuneArgs ft;
    auto* c_finetune = app.add_subcommand("finetune", "Fine-tune on question answering with early stopping");
    add_common(c_finetune);
    c_finetune->add_option("--scheme", ft.scheme)->check(CLI::IsMember({"ORIG", "AUG", "SEP-NC", "SEP-C"}, CLI::ignore_case));
    c_finetune->add_option("--val-split", ft.val_split)->check(CLI::IsMember({"dev", "extdev"}));
    c_finetune->add_option("--epochs", ft.epochs, "Maximum epochs");
    c_finetune->add_option("--lr", ft.lr);
    c_finetune->add_option("--batch", ft.batch);
    c_finetune->add_option("--clip", ft.clip);
    c_finetune->add_option("--patience", ft.patience);
    c_finetune->add_option("--aug-permutations", ft.aug_permutations);
    c_finetune->add_option("--sep-negatives", ft.sep_negatives, "Wrong candidates per problem for SEP training");
    c_finetune->add_option("--max-len", ft.max_len);
    c_finetune->add_option("--warmup", ft.warmup);
    c_finetune->add_flag("--linear-decay", ft.linear_decay);
    c_finetune->add_option("--limit", ft.limit);
    c_finetune->add_flag("--track-test", ft.track_test, "Score the test fold every epoch");
    c_finetune->add_option("--init", ft.init);
    c_finetune->add_option("--pretrained", ft.pretrained);
    c_finetune->add_option("--out", ft.out);

    EvalArgs ev, pt, df;
    auto add_eval = [&](CLI::App* sub, EvalArgs& e, const char* out_dir) {
        add_common(sub);
        e.out = out_dir;
        sub->add_option("--model", e.model, "Checkpoint directory");
        sub->add_option("--dump", e.dump, "Prediction dump (JSON lines)");
        sub->add_option("--scheme", e.scheme);
        sub->add_option("--fold", e.fold);
        sub->add_option("--name", e.name, "Model name in reports");
        sub->add_option("--out", e.out);
    };
    auto* c_eval = app.add_subcommand("eval", "Accuracy on a fold");
    add_eval(c_eval, ev, "eval");
    auto* c_perm = app.add_subcommand("permtest", "Permutation consistency test");
    add_eval(c_perm, pt, "permtest");
    auto* c_diff = app.add_subcommand("difficulty", "Difficulty ranks from answer scores");
    add_eval(c_diff, df, "difficulty");

    AblateArgs ab;
    auto* c_ablate = app.add_subcommand("ablate-tokens", "Token-matched questions vs questions+rationales");
    add_common(c_ablate);
    c_ablate->add_option("--fractions", ab.fractions, "Comma-separated question fractions");
    c_ablate->add_option("--losses", ab.losses, "Losses for the rationale arm");
    c_ablate->add_option("--selfsup-epochs", ab.selfsup_epochs);
    c_ablate->add_option("--finetune-epochs", ab.finetune_epochs);
    c_ablate->add_option("--selfsup-lr", ab.selfsup_lr);
    c_ablate->add_option("--finetune-lr", ab.finetune_lr);
    c_ablate->add_option("--batch", ab.batch);
    c_ablate->add_option("--patience", ab.patience);
    c_ablate->add_option("--max-len", ab.max_len);
    c_ablate->add_option("--val-split", ab.val_split)->check(CLI::IsMember({"dev", "extdev"}));
    c_ablate->add_option("--out", ab.out);

    EmbedArgs em;
    auto* c_embed = app.add_subcommand("embed", "Export [CLS] embeddings of single-operator questions");
    add_common(c_embed);
    c_embed->add_option("--model", em.model)->required();
    c_embed->add_option("--fold", em.fold);
    c_embed->add_option("--limit", em.limit, "Problems to export (0 = all matches)");
    c_embed->add_option("--out", em.out);

    PlotArgs pl;
    auto* c_plot = app.add_subcommand("plot", "Render a CSV as an SVG chart");
    add_common(c_plot);
    c_plot->add_option("--input", pl.input)->required();
    c_plot->add_option("--x", pl.x);
    c_plot->add_option("--y", pl.y)->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    c_plot->add_option("--group", pl.group, "Column splitting rows into series");
    c_plot->add_option("--title", pl.title);
    c_plot->add_flag("--scatter", pl.scatter);
    c_plot->add_option("--out", pl.out);

    ReportArgs rp;
    auto* c_report = app.add_subcommand("report", "Combine evaluation reports into tables");
    add_common(c_report);
    c_report->add_option("--inputs", rp.inputs)->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    c_report->add_option("--out", rp.out);

    // Splice config-file entries in front of the real flags so flags win.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string command;
    for (const auto& s : args) {
        if (!s.empty() && s[0] != '-') {
            command = s;
            break;
        }
    }
    try {
        for (std::size_t i = 0; i < args.size(); ++i) {
            std::string path;
            if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
            if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
            if (path.empty()) continue;
            CLI::App* sub = nullptr;
            for (auto* s : app.get_subcommands([](CLI::App*) { return true; })) {
                if (s->get_name() == command) sub = s;
            }
            if (!sub) break;
            std::vector<std::string> extra;
            auto workdir_it = std::find(args.begin(), args.end(), "--workdir");
            fs::path cfg_path(path);
            if (cfg_path.is_relative() && workdir_it != args.end() && workdir_it + 1 != args.end() &&
                !fs::exists(cfg_path)) {
                cfg_path = fs::path(*(workdir_it + 1)) / cfg_path;
            }
            for (const auto& [k, v] : read_flat_config(cfg_path)) {
                if (!sub->get_option_no_throw("--" + k)) {
                    throw Error(ErrorKind::config, "config key '" + k + "' is not an option of " + command);
                }
                extra.push_back("--" + k + "=" + v);
            }
            auto pos = std::find(args.begin(), args.end(), command);
            args.insert(pos + 1, extra.begin(), extra.end());
            break;
        }
    } catch (const Error& e) {
        error_record(err, command, to_string(e.kind()), e.what());
        return exit_code(e.kind());
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        auto* sub = command.empty() ? nullptr : app.get_subcommand_no_throw(command);
        out << (sub ? sub->help() : app.help());
        return 0;
    } catch (const CLI::ParseError& e) {
        const bool known = !command.empty() && app.get_subcommand_no_throw(command) != nullptr;
        error_record(err, command, known ? "config" : "unknown-command", e.what());
        return 2;
    }

    auto* sub = app.get_subcommands().front();
    Context ctx;
    ctx.command = sub->get_name();
    ctx.common = common;
    ctx.out = &out;
    ctx.err = &err;
    json options = json::object();
    for (const auto* opt : sub->get_options()) {
        const std::string key = opt->get_single_name();
        if (key == "config" || key == "workdir" || key == "help") continue;
        options[key] = opt->count() > 0 ? opt->as<std::string>() : opt->get_default_str();
    }
    ctx.options = options;
    ctx.config_hash = hash_hex(options.dump());

    try {
        if (sub == c_prepare) return cmd_prepare(ctx, prep);
        if (sub == c_selfsup) return cmd_selfsup(ctx, ss);
        if (sub == c_finetune) return cmd_finetune(ctx, ft);
        if (sub == c_eval) return cmd_eval(ctx, ev);
        if (sub == c_perm) return cmd_permtest(ctx, pt);
        if (sub == c_diff) return cmd_difficulty(ctx, df);
        if (sub == c_ablate) return cmd_ablate(ctx, ab);
        if (sub == c_embed) return cmd_embed(ctx, em);
        if (sub == c_plot) return cmd_plot(ctx, pl);
        if (sub == c_report) return cmd_report(ctx, rp);
    } catch (const Error& e) {
        error_record(err, ctx.command, to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        error_record(err, ctx.command, "internal", e.what());
        return 1;
    }
    error_record(err, ctx.command, "unknown-command", "unhandled command");
    return 2;
}

}  // namespace mwp::cli
