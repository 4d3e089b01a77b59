#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/answer_scoring.hpp"
#include "mwp/encoder.hpp"
#include "mwp/evaluation.hpp"
#include "mwp/hash.hpp"
#include "mwp/pretext.hpp"

namespace mwp {

// ---------------------------------------------------------------------------
// Configuration

enum class Phase { selfsup, finetune };

struct LossSet {
    bool mlm = true;
    bool rop = false;
    bool nrop = false;
    bool qra = false;

    static LossSet parse(std::string_view spec) {
        LossSet s{false, false, false, false};
        std::string item;
        std::istringstream in{std::string(spec)};
        while (std::getline(in, item, ',')) {
            item = detail::trim(item);
            std::transform(item.begin(), item.end(), item.begin(), [](unsigned char c) { return std::toupper(c); });
            if (item == "MLM") s.mlm = true;
            else if (item == "ROP") s.rop = true;
            else if (item == "NROP") s.nrop = true;
            else if (item == "QRA") s.qra = true;
            else if (!item.empty()) throw Error(ErrorKind::config, "unknown loss '" + item + "'");
        }
        s.validate();
        return s;
    }

    void validate() const {
        if (rop && nrop) throw Error(ErrorKind::config, "ROP and NROP are mutually exclusive");
        if (!mlm && !rop && !nrop && !qra) throw Error(ErrorKind::config, "no loss enabled");
    }

    std::optional<OrderVariant> order() const {
        if (rop) return OrderVariant::rop;
        if (nrop) return OrderVariant::nrop;
        return std::nullopt;
    }

    std::string str() const {
        std::string out;
        auto add = [&](bool on, const char* n) {
            if (!on) return;
            if (!out.empty()) out += ',';
            out += n;
        };
        add(mlm, "MLM");
        add(rop, "ROP");
        add(nrop, "NROP");
        add(qra, "QRA");
        return out;
    }
};

struct TrainConfig {
    Phase phase = Phase::selfsup;
    LossSet losses;
    Scheme scheme = Scheme::orig;
    double lr = 5e-5;
    std::size_t epochs = 24;
    std::size_t batch = 16;  // effective batch, reached by gradient accumulation
    double clip = 1.0;       // global gradient norm; 0 disables
    std::size_t patience = 15;
    std::uint64_t seed = 0;
    std::size_t regenerate_every = 2;
    std::size_t max_len = kMaxPositions;
    std::size_t aug_permutations = 25;
    std::size_t sep_negatives = kNumOptions - 1;
    std::size_t warmup_steps = 0;  // linear warmup; 0 keeps a constant rate
    bool linear_decay = false;     // after warmup, decay linearly to zero by the last step
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    static TrainConfig selfsup_defaults() {
        TrainConfig c;
        c.phase = Phase::selfsup;
        c.lr = 5e-5;
        c.epochs = 24;
        return c;
    }

    static TrainConfig finetune_defaults() {
        TrainConfig c;
        c.phase = Phase::finetune;
        c.lr = 1e-5;
        c.clip = 1.0;
        c.patience = 15;
        c.epochs = 100;
        return c;
    }

    void validate() const {
        if (phase == Phase::selfsup) losses.validate();
        if (!(lr > 0.0)) throw Error(ErrorKind::config, "lr must be positive");
        if (batch == 0) throw Error(ErrorKind::config, "batch must be positive");
        if (epochs == 0) throw Error(ErrorKind::config, "epochs must be positive");
        if (clip < 0.0) throw Error(ErrorKind::config, "clip must be non-negative");
        if (aug_permutations > 119) throw Error(ErrorKind::config, "at most 119 answer permutations");
        if (sep_negatives == 0 || sep_negatives > kNumOptions - 1) {
            throw Error(ErrorKind::config, "sep_negatives must be in 1..4");
        }
    }

    PretextConfig pretext() const {
        PretextConfig p;
        p.mlm = losses.mlm;
        p.order = losses.order();
        p.qra = losses.qra;
        p.regenerate_every = regenerate_every;
        p.qra_batch = batch;
        p.max_len = max_len;
        return p;
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"phase", c.phase == Phase::selfsup ? "selfsup" : "finetune"},
            {"losses", c.losses.str()},
            {"scheme", to_string(c.scheme)},
            {"lr", c.lr},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"clip", c.clip},
            {"patience", c.patience},
            {"seed", c.seed},
            {"regenerate_every", c.regenerate_every},
            {"max_len", c.max_len},
            {"aug_permutations", c.aug_permutations},
            {"sep_negatives", c.sep_negatives},
            {"warmup_steps", c.warmup_steps},
            {"linear_decay", c.linear_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps}};
}

inline std::string config_hash(const nlohmann::json& j) { return hash_hex(j.dump()); }

// ---------------------------------------------------------------------------
// Optimizer

template <class T>
double global_grad_norm(const ParamStore<T>& ps) {
    double sq = 0.0;
    for (const auto& [_, p] : ps) sq += static_cast<double>(p.grad.squaredNorm());
    return std::sqrt(sq);
}

/// Rescales all gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
template <class T>
double clip_grad_norm(ParamStore<T>& ps, double max_norm) {
    const double norm = global_grad_norm(ps);
    if (max_norm > 0.0 && norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& [_, p] : ps) p.grad *= scale;
    }
    return norm;
}

template <class T>
void scale_grads(ParamStore<T>& ps, T factor) {
    for (auto& [_, p] : ps) p.grad *= factor;
}

template <class T>
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    std::size_t steps() const { return t_; }

    void step(ParamStore<T>& ps) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        const T alpha = static_cast<T>(lr_ * std::sqrt(c2) / c1);
        const T eps_hat = static_cast<T>(eps_ * std::sqrt(c2));
        const T b1 = static_cast<T>(b1_);
        const T b2 = static_cast<T>(b2_);
        for (auto& [name, p] : ps) {
            auto& st = state_[name];
            if (st.m.size() == 0) {
                st.m = Mat<T>::Zero(p.value.rows(), p.value.cols());
                st.v = Mat<T>::Zero(p.value.rows(), p.value.cols());
            }
            st.m = b1 * st.m + (T(1) - b1) * p.grad;
            st.v = b2 * st.v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
            p.value.array() -= alpha * st.m.array() / (st.v.array().sqrt() + eps_hat);
        }
    }

private:
    struct Moments {
        Mat<T> m, v;
    };
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, Moments> state_;
};

/// `remaining` is the fraction of training still ahead, used for linear decay.
inline double scheduled_lr(double base, std::size_t step, std::size_t warmup, double remaining = 1.0) {
    const double r = std::clamp(remaining, 0.0, 1.0);
    if (warmup == 0 || step >= warmup) return base * r;
    return base * r * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

// ---------------------------------------------------------------------------
// Early stopping

/// Tracks the best validation metric; stops after `patience` consecutive
/// epochs without strict improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience = 15) : patience_(patience) {}

    /// Returns true when `value` is a new best.
    bool update(std::size_t epoch, double value) {
        last_epoch_ = epoch;
        if (!best_ || value > best_->second) {
            best_ = {epoch, value};
            stale_ = 0;
            return true;
        }
        ++stale_;
        return false;
    }

    bool should_stop() const { return stale_ >= patience_; }
    std::size_t best_epoch() const { return best_ ? best_->first : 0; }
    double best_value() const { return best_ ? best_->second : 0.0; }
    std::size_t stale_epochs() const { return stale_; }
    std::size_t last_epoch() const { return last_epoch_; }
    std::size_t patience() const { return patience_; }

private:
    std::size_t patience_;
    std::size_t stale_ = 0;
    std::size_t last_epoch_ = 0;
    std::optional<std::pair<std::size_t, double>> best_;
};

// ---------------------------------------------------------------------------
// Self-supervision

struct SelfSupEpoch {
    std::size_t epoch = 0;
    double loss = 0.0;                     // mean of step losses
    std::map<std::string, double> terms;   // per-loss means over the samples that carry them
    std::vector<double> step_losses;
    double lr = 0.0;
};

struct SelfSupResult {
    std::vector<SelfSupEpoch> epochs;
    std::size_t steps = 0;
};

struct TrainHooks {
    std::filesystem::path out_dir;  // per-epoch checkpoints + metrics.jsonl when set
    nlohmann::json metadata;        // copied into checkpoint configs
    std::function<void(const std::string&)> log;
    std::filesystem::path cache_dir;  // per-epoch pretext sample cache when set
    std::string corpus_hash;          // part of the cache key
};

namespace detail {

inline void append_jsonl(const std::filesystem::path& file, const nlohmann::json& j) {
    std::ofstream out(file, std::ios::app);
    if (!out) throw Error(ErrorKind::io, "cannot append to " + file.string());
    out << j.dump() << '\n';
}

inline std::string epoch_dir(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch-%03zu", epoch);
    return buf;
}

}  // namespace detail

/// Epoch samples from the on-disk cache when present, otherwise regenerated
/// (and stored when a cache directory is configured).
inline EpochSamples cached_epoch_samples(const PretextDataset& data, std::size_t epoch, std::uint64_t seed,
                                         const TrainHooks& hooks) {
    if (hooks.cache_dir.empty()) return regenerate_epoch_samples(data, epoch, seed);
    const auto key = sample_cache_key(hooks.corpus_hash, seed, epoch, data.config());
    const auto main = hooks.cache_dir / key;
    const auto qra = hooks.cache_dir / ("qra-" + key);
    if (std::filesystem::exists(main) && (!data.config().qra || std::filesystem::exists(qra))) {
        EpochSamples out;
        out.epoch = epoch;
        out.samples = read_sample_cache(main.string());
        if (data.config().qra) out.qra_samples = read_sample_cache(qra.string());
        if (out.samples.size() == data.size()) return out;
    }
    auto out = regenerate_epoch_samples(data, epoch, seed);
    std::filesystem::create_directories(hooks.cache_dir);
    write_sample_cache(main.string(), out.samples);
    if (data.config().qra) write_sample_cache(qra.string(), out.qra_samples);
    return out;
}

template <class T>
struct SampleLoss {
    T total = T(0);
    std::optional<T> mlm, order, align;
};

/// One pretext sample: sum of the losses its labels enable, with backward.
template <class T>
SampleLoss<T> pretext_sample_loss(ModelBundle<T>& model, const PretextSample& s, Rng* dropout_rng, bool backward) {
    SampleLoss<T> out;
    auto enc = model.encode(s.input, dropout_rng, backward);
    Mat<T> d;
    if (backward) d = Mat<T>::Zero(enc.states.rows(), enc.states.cols());
    if (!s.mlm_targets.empty() && model.has_head(Head::mlm)) {
        auto lg = mlm_loss(model, enc.states, s.mlm_targets, backward);
        out.mlm = lg.loss;
        out.total += lg.loss;
        if (backward) d += lg.dinput;
    }
    const RowVec<T> cls = enc.cls();
    if (s.order_label && model.has_head(Head::order)) {
        auto lg = order_loss(model, cls, *s.order_label, backward);
        out.order = lg.loss;
        out.total += lg.loss;
        if (backward) d.row(0) += lg.dinput;
    }
    if (s.match_label && model.has_head(Head::align)) {
        auto lg = align_loss(model, cls, *s.match_label, backward);
        out.align = lg.loss;
        out.total += lg.loss;
        if (backward) d.row(0) += lg.dinput;
    }
    if (backward) model.encode_backward(enc.cache, d);
    return out;
}

/// Adds the heads a self-supervised loss set needs.
template <class T>
void prepare_selfsup_heads(ModelBundle<T>& model, const LossSet& losses, std::uint64_t seed) {
    if (losses.mlm) model.add_head(Head::mlm, seed);
    if (losses.order()) model.add_head(Head::order, seed);
    if (losses.qra) model.add_head(Head::align, seed);
}

template <class T>
SelfSupResult self_supervised_train(ModelBundle<T>& model, const PretextDataset& data, const TrainConfig& cfg,
                                    const TrainHooks& hooks = {}) {
    cfg.validate();
    prepare_selfsup_heads(model, cfg.losses, cfg.seed);
    Adam<T> opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    SelfSupResult result;
    if (!hooks.out_dir.empty()) std::filesystem::create_directories(hooks.out_dir);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto samples = cached_epoch_samples(data, epoch, cfg.seed, hooks);
        std::vector<const PretextSample*> stream;
        for (const auto& s : samples.samples) stream.push_back(&s);
        for (const auto& s : samples.qra_samples) stream.push_back(&s);
        auto order_rng = make_rng(cfg.seed, {tag("selfsup-order"), epoch});
        std::shuffle(stream.begin(), stream.end(), order_rng);
        auto dropout_rng = make_rng(cfg.seed, {tag("selfsup-dropout"), epoch});

        SelfSupEpoch rec;
        rec.epoch = epoch;
        std::map<std::string, std::pair<double, std::size_t>> terms;
        for (std::size_t start = 0; start < stream.size(); start += cfg.batch) {
            const auto end = std::min(stream.size(), start + cfg.batch);
            model.zero_grad();
            double step_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto l = pretext_sample_loss(model, *stream[k], &dropout_rng, true);
                step_loss += static_cast<double>(l.total);
                if (l.mlm) terms["mlm"].first += static_cast<double>(*l.mlm), ++terms["mlm"].second;
                if (l.order) terms["order"].first += static_cast<double>(*l.order), ++terms["order"].second;
                if (l.align) terms["qra"].first += static_cast<double>(*l.align), ++terms["qra"].second;
            }
            const auto bs = static_cast<double>(end - start);
            step_loss /= bs;
            if (!std::isfinite(step_loss)) {
                if (!hooks.out_dir.empty()) {
                    auto meta = hooks.metadata;
                    meta["diverged"] = {{"epoch", epoch}, {"step", result.steps}};
                    save_checkpoint(model, hooks.out_dir / "diverged", meta);
                }
                throw Error(ErrorKind::training_diverged, "non-finite loss at epoch " + std::to_string(epoch) +
                                                              ", step " + std::to_string(result.steps));
            }
            scale_grads(model.params(), static_cast<T>(1.0 / bs));
            clip_grad_norm(model.params(), cfg.clip);
            const double progress = (static_cast<double>(epoch) + static_cast<double>(start) / static_cast<double>(stream.size())) /
                                    static_cast<double>(cfg.epochs);
            opt.set_lr(scheduled_lr(cfg.lr, result.steps, cfg.warmup_steps, cfg.linear_decay ? 1.0 - progress : 1.0));
            opt.step(model.params());
            ++result.steps;
            rec.step_losses.push_back(step_loss);
        }
        rec.lr = opt.lr();
        rec.loss = rec.step_losses.empty()
                       ? 0.0
                       : std::accumulate(rec.step_losses.begin(), rec.step_losses.end(), 0.0) /
                             static_cast<double>(rec.step_losses.size());
        for (const auto& [name, acc] : terms) rec.terms[name] = acc.first / static_cast<double>(acc.second);

        if (!hooks.out_dir.empty()) {
            auto meta = hooks.metadata;
            meta["epoch"] = epoch;
            save_checkpoint(model, hooks.out_dir / detail::epoch_dir(epoch), meta);
            detail::append_jsonl(hooks.out_dir / "metrics.jsonl",
                                 {{"epoch", epoch}, {"train_loss", rec.terms}, {"loss", rec.loss}, {"lr", rec.lr}});
        }
        if (hooks.log) {
            std::ostringstream s;
            s << "epoch " << epoch << " loss " << rec.loss;
            for (const auto& [n, v] : rec.terms) s << ' ' << n << ' ' << v;
            hooks.log(s.str());
        }
        result.epochs.push_back(std::move(rec));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct FinetuneEpoch {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    std::optional<double> test_accuracy;
    double lr = 0.0;
};

struct FinetuneResult {
    std::vector<FinetuneEpoch> trajectory;
    std::size_t best_epoch = 0;
    double best_val_accuracy = 0.0;
    bool stopped_early = false;
};

/// Runs early stopping over a stream of per-epoch validation scores produced by
/// `run_epoch(epoch)` (1-based). `on_best` fires whenever a new best appears.
/// Returns the epoch count actually run.
inline std::size_t run_with_early_stopping(EarlyStopping& es, std::size_t max_epochs,
                                           const std::function<double(std::size_t)>& run_epoch,
                                           const std::function<void(std::size_t)>& on_best) {
    std::size_t epoch = 0;
    while (epoch < max_epochs) {
        ++epoch;
        if (es.update(epoch, run_epoch(epoch)) && on_best) on_best(epoch);
        if (es.should_stop()) break;
    }
    return epoch;
}

/// Per-epoch training items: AUG expands every problem with its permutations,
/// fixed within each k-epoch cycle.
inline std::vector<Problem> finetune_epoch_items(const std::vector<Problem>& train, const TrainConfig& cfg,
                                                 std::size_t epoch) {
    if (cfg.scheme != Scheme::aug) return train;
    std::vector<Problem> out;
    out.reserve(train.size() * (cfg.aug_permutations + 1));
    const auto cycle = epoch / std::max<std::size_t>(cfg.regenerate_every, 1);
    for (std::size_t i = 0; i < train.size(); ++i) {
        out.push_back(train[i]);
        auto rng = make_rng(cfg.seed, {tag("aug"), cycle, i});
        auto variants = augment_permutations(train[i], rng, cfg.aug_permutations);
        out.insert(out.end(), std::make_move_iterator(variants.begin()), std::make_move_iterator(variants.end()));
    }
    return out;
}

template <class T>
void prepare_finetune_heads(ModelBundle<T>& model, Scheme scheme, std::uint64_t seed) {
    model.discard_self_supervised_heads();
    model.add_head(uses_match_head(scheme) ? Head::match : Head::qa, seed);
}

/// Fine-tunes with early stopping on validation accuracy and leaves the model
/// at its best validation epoch. `test` (optional) is scored every epoch for
/// dev/test correlation only.
template <class T>
FinetuneResult finetune(ModelBundle<T>& model, const Tokenizer& tok, const std::vector<Problem>& train,
                        const std::vector<Problem>& validation, const TrainConfig& cfg, const TrainHooks& hooks = {},
                        const std::vector<Problem>* test = nullptr) {
    cfg.validate();
    if (validation.empty()) throw Error(ErrorKind::empty_validation, "fine-tuning needs a validation set");
    if (train.empty()) throw Error(ErrorKind::empty_fold, "fine-tuning needs training problems");
    prepare_finetune_heads(model, cfg.scheme, cfg.seed);
    if (!hooks.out_dir.empty()) std::filesystem::create_directories(hooks.out_dir);

    Adam<T> opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    const AnswerScorer<T> scorer(model, tok, cfg.scheme == Scheme::aug ? Scheme::orig : cfg.scheme);
    FinetuneResult result;
    EarlyStopping es(cfg.patience);
    std::vector<Mat<T>> best;
    std::size_t steps = 0;

    auto run_epoch = [&](std::size_t epoch) {
        const auto items = finetune_epoch_items(train, cfg, epoch - 1);
        std::vector<QaItem> qa;
        qa.reserve(items.size());
        for (const auto& p : items) qa.push_back(QaItem::of(p, tok));
        std::vector<std::size_t> order(qa.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto order_rng = make_rng(cfg.seed, {tag("finetune-order"), epoch});
        std::shuffle(order.begin(), order.end(), order_rng);
        auto dropout_rng = make_rng(cfg.seed, {tag("finetune-dropout"), epoch});

        std::vector<double> step_losses;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const auto end = std::min(order.size(), start + cfg.batch);
            model.zero_grad();
            double loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                loss += static_cast<double>(
                    scheme_loss(model, tok, qa[order[k]], cfg.scheme, &dropout_rng, true, cfg.sep_negatives));
            }
            const auto bs = static_cast<double>(end - start);
            loss /= bs;
            if (!std::isfinite(loss)) {
                throw Error(ErrorKind::training_diverged, "non-finite fine-tuning loss at epoch " + std::to_string(epoch));
            }
            scale_grads(model.params(), static_cast<T>(1.0 / bs));
            clip_grad_norm(model.params(), cfg.clip);
            const double progress = (static_cast<double>(epoch) + static_cast<double>(start) / static_cast<double>(order.size())) /
                                    static_cast<double>(cfg.epochs);
            opt.set_lr(scheduled_lr(cfg.lr, steps, cfg.warmup_steps, cfg.linear_decay ? 1.0 - progress : 1.0));
            opt.step(model.params());
            ++steps;
            step_losses.push_back(loss);
        }
        FinetuneEpoch rec;
        rec.epoch = epoch;
        rec.train_loss = std::accumulate(step_losses.begin(), step_losses.end(), 0.0) /
                         static_cast<double>(std::max<std::size_t>(step_losses.size(), 1));
        rec.val_accuracy = accuracy(predict(scorer, validation));
        if (test && !test->empty()) rec.test_accuracy = accuracy(predict(scorer, *test));
        rec.lr = opt.lr();
        if (!hooks.out_dir.empty()) {
            nlohmann::json j = {{"epoch", epoch},
                                {"train_loss", {{to_string(cfg.scheme), rec.train_loss}}},
                                {"val_acc", rec.val_accuracy},
                                {"lr", rec.lr}};
            if (rec.test_accuracy) j["test_acc"] = *rec.test_accuracy;
            detail::append_jsonl(hooks.out_dir / "metrics.jsonl", j);
        }
        if (hooks.log) {
            hooks.log("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.train_loss) + " val " +
                      percent(rec.val_accuracy));
        }
        result.trajectory.push_back(rec);
        return rec.val_accuracy;
    };

    const auto ran = run_with_early_stopping(es, cfg.epochs, run_epoch, [&](std::size_t) { best = model.snapshot(); });
    result.best_epoch = es.best_epoch();
    result.best_val_accuracy = es.best_value();
    result.stopped_early = es.should_stop() && ran < cfg.epochs;
    if (!best.empty()) model.restore(best);
    if (!hooks.out_dir.empty()) {
        auto meta = hooks.metadata;
        meta["best_epoch"] = result.best_epoch;
        meta["best_val_accuracy"] = result.best_val_accuracy;
        save_checkpoint(model, hooks.out_dir / "best", meta);
    }
    return result;
}

/// Carves a deterministic validation slice off `train` (used when no
/// separate validation fold is available).
inline std::pair<std::vector<Problem>, std::vector<Problem>> holdout_split(std::vector<Problem> train, double fraction,
                                                                          std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0) throw Error(ErrorKind::config, "holdout fraction must be in (0, 1)");
    auto rng = make_rng(seed, {tag("holdout")});
    std::shuffle(train.begin(), train.end(), rng);
    const auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(train.size())));
    std::vector<Problem> val(train.end() - static_cast<std::ptrdiff_t>(n), train.end());
    train.resize(train.size() - n);
    return {std::move(train), std::move(val)};
}

}  // namespace mwp
