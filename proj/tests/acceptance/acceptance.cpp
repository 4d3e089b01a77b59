// Acceptance run: one PASS/FAIL/SKIP line per criterion.
//   acceptance [--only name[,name...]] [--skip-code N] [--list]
// Exit status is 1 when a gating criterion fails. With --skip-code, a run in
// which every selected criterion was skipped exits with that code instead of 0.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "mwp/answer_scoring.hpp"
#include "mwp/cli.hpp"
#include "mwp/evaluation.hpp"
#include "mwp/training.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace mwp;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
    Status status;
    std::string detail;
};

Outcome pass(std::string d) { return {Status::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::fail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Status::pass : Status::fail, std::move(d)}; }

struct Criterion {
    std::string name;
    bool gating;
    double budget_seconds;  // 0: no runtime bound
    std::function<Outcome()> run;
};

std::string num(double v, int digits = 4) {
    std::ostringstream s;
    s << std::setprecision(digits) << v;
    return s.str();
}

// ---------------------------------------------------------------------------

constexpr std::size_t kPretextSamples = 10000;
constexpr double kRateTolerance = 0.02;

Outcome pretext_invariants() {
    const auto problems = fixtures::synthetic_corpus(kPretextSamples, 101, {1, 6});
    const auto tok = fixtures::synthetic_tokenizer(problems);
    const auto& sp = tok.specials();
    auto rng = make_rng(7, {tag("acceptance-pretext")});

    std::size_t bad_count = 0, bad_segment = 0, bad_restore = 0;
    std::size_t rop_swaps = 0, nrop_swaps = 0, order_samples = 0;
    std::size_t non_adjacent = 0, bad_involution = 0, bad_transposition = 0;
    for (std::size_t i = 0; i < problems.size(); ++i) {
        const auto steps = split_rationale(problems[i].rationale);
        const auto input = assemble_ss_input(problems[i].question, steps, tok);
        const auto s = apply_mlm_mask(input, sp, rng);

        std::set<int> segs;
        for (const auto& t : s.mlm_targets) segs.insert(input.segments[t.position]);
        if (segs.size() != 1) {
            ++bad_segment;
        } else {
            const auto span = content_span(input, *segs.begin(), sp).size();
            if (s.mlm_targets.size() != fixtures::expected_mask_count(span)) ++bad_count;
        }
        auto restored = s.input;
        for (const auto& t : s.mlm_targets) restored.ids[t.position] = t.original;
        if (!(restored == input)) ++bad_restore;

        const auto ids = encode_steps(steps, tok);
        for (auto variant : {OrderVariant::rop, OrderVariant::nrop}) {
            const auto o = make_order_sample(ids, variant, rng);
            if (!o) continue;
            if (variant == OrderVariant::rop) ++order_samples;
            const bool swapped = o->label == OrderLabel::swapped;
            (variant == OrderVariant::rop ? rop_swaps : nrop_swaps) += swapped ? 1 : 0;
            if (swapped && variant == OrderVariant::nrop && o->second - o->first != 1) ++non_adjacent;
            auto back = o->steps;
            if (swapped) std::swap(back[o->first], back[o->second]);
            if (back != ids) ++bad_involution;
            const auto t = fixtures::single_transposition(ids, o->steps);
            const bool t_ok = swapped ? (t && t->first == o->first && t->second == o->second) || ids[o->first] == ids[o->second]
                                      : o->steps == ids;
            if (!t_ok) ++bad_transposition;
        }
    }
    const double rop = static_cast<double>(rop_swaps) / static_cast<double>(order_samples);
    const double nrop = static_cast<double>(nrop_swaps) / static_cast<double>(order_samples);
    const bool ok = bad_count == 0 && bad_segment == 0 && bad_restore == 0 && non_adjacent == 0 &&
                    bad_involution == 0 && bad_transposition == 0 && std::abs(rop - 0.5) <= kRateTolerance &&
                    std::abs(nrop - 0.5) <= kRateTolerance;
    return check(ok, "mask count/segment/restore violations " + std::to_string(bad_count) + "/" +
                         std::to_string(bad_segment) + "/" + std::to_string(bad_restore) + ", swap rate ROP " +
                         num(rop) + " NROP " + num(nrop) + " (0.5 +- 0.02), non-adjacent NROP " +
                         std::to_string(non_adjacent) + ", involution failures " + std::to_string(bad_involution) +
                         ", transposition mismatches " + std::to_string(bad_transposition));
}

// ---------------------------------------------------------------------------

Problem swap_example() {
    Problem p;
    p.id = "table";
    p.question = "how much is 27 / 3";
    p.options = lettered_options({"13", "9", "3", "12", "17"});
    p.correct = 'B';
    p.rationale = "27 / 3 = 9";
    return p;
}

Outcome swap_variants_oracle() {
    const auto variants = perm_variants(swap_example());
    std::size_t row_mismatch = 0;
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        const auto& want = fixtures::kSwapExampleRows[i];
        const auto got = option_values(variants[i]);
        const bool values_ok = std::equal(got.begin(), got.end(), want.values.begin(), want.values.end());
        const bool label_ok = variants[i].correct == want.label && option_values(variants[i])[i] == "9";
        if (!values_ok || !label_ok) ++row_mismatch;
    }

    auto rng = make_rng(13, {tag("acceptance-table")});
    std::size_t bad_multiset = 0, bad_identity = 0, bad_oracle = 0;
    for (std::size_t k = 0; k < 1000; ++k) {
        const auto p = fixtures::random_problem(rng, k);
        const auto src = option_values(p);
        auto sorted_src = src;
        std::sort(sorted_src.begin(), sorted_src.end());
        const auto vs = perm_variants(p);
        for (std::size_t i = 0; i < kNumOptions; ++i) {
            auto v = option_values(vs[i]);
            if (v != fixtures::swap_reference(src, p.correct_index(), i)) ++bad_oracle;
            std::sort(v.begin(), v.end());
            if (v != sorted_src) ++bad_multiset;
        }
        if (!(vs[p.correct_index()].options == p.options && vs[p.correct_index()].correct == p.correct)) ++bad_identity;
    }
    return check(row_mismatch == 0 && bad_multiset == 0 && bad_identity == 0 && bad_oracle == 0,
                 "example rows differing " + std::to_string(row_mismatch) + "/5; over 1000 problems multiset " +
                     std::to_string(bad_multiset) + ", identity " + std::to_string(bad_identity) +
                     ", swap oracle " + std::to_string(bad_oracle) + " violations");
}

// ---------------------------------------------------------------------------

constexpr std::size_t kRandomProblems = 1000000;
constexpr double kRandomConsistency = 0.00032;
constexpr double kRandomTolerance = 0.0001;  // 0.01 percentage points

std::vector<Problem> bare_fold(std::size_t n, std::size_t offset, Rng& rng) {
    std::vector<Problem> fold(n);
    for (std::size_t i = 0; i < n; ++i) {
        fold[i].id = "p" + std::to_string(offset + i);
        fold[i].correct = label_letter(uniform_index(rng, kNumOptions));
    }
    return fold;
}

std::vector<Prediction> random_dump(const std::vector<Problem>& fold, Rng& rng, bool coarse) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Prediction> dump;
    dump.reserve(fold.size() * kNumOptions);
    for (const auto& p : fold) {
        for (std::size_t i = 0; i < kNumOptions; ++i) {
            Scores s;
            for (auto& x : s) x = coarse ? static_cast<double>(uniform_index(rng, 3)) : u(rng);
            dump.push_back({perm_variant_id(p.id, i), Scheme::orig, s, argmax_lowest(s), i});
        }
    }
    return dump;
}

Outcome consistency_bounds() {
    auto rng = make_rng(17, {tag("acceptance-consistency")});
    std::size_t violations = 0;
    for (std::size_t k = 0; k < 1000; ++k) {
        const auto fold = bare_fold(1 + uniform_index(rng, 30), 0, rng);
        const auto r = perm_consistency(random_dump(fold, rng, k % 2 == 0), fold);
        if (r.score() > r.accuracy()) ++violations;
    }

    constexpr std::size_t chunk = 20000;
    std::size_t consistent = 0;
    for (std::size_t start = 0; start < kRandomProblems; start += chunk) {
        const auto fold = bare_fold(chunk, start, rng);
        const auto r = perm_consistency(random_dump(fold, rng, false), fold);
        for (const auto& e : r.entries) consistent += e.all_correct() ? 1 : 0;
    }
    const double c = static_cast<double>(consistent) / static_cast<double>(kRandomProblems);
    return check(violations == 0 && std::abs(c - kRandomConsistency) <= kRandomTolerance,
                 "consistency > accuracy on " + std::to_string(violations) + "/1000 dumps; random guesser " +
                     num(100 * c) + "% (target 0.032 +- 0.01, closed form " +
                     num(100 * fixtures::random_consistency()) + "%)");
}

// ---------------------------------------------------------------------------

constexpr std::size_t kSepNcProblems = 200;

Outcome sep_nc_invariance() {
    const auto corpus = fixtures::synthetic_corpus(600, 211);
    const auto tok = fixtures::synthetic_tokenizer(corpus);
    auto cfg = EncoderConfig::toy(tok.vocab().size());
    cfg.layers = 2;
    cfg.max_positions = 128;
    ModelBundle<float> model(cfg, 5);

    const std::vector<Problem> train(corpus.begin(), corpus.begin() + 300);
    const std::vector<Problem> val(corpus.begin() + 300, corpus.begin() + 350);
    auto tc = TrainConfig::finetune_defaults();
    tc.scheme = Scheme::sep_nc;
    tc.lr = 1e-4;
    tc.epochs = 2;
    tc.max_len = 128;
    tc.seed = 9;
    finetune(model, tok, train, val, tc);

    const AnswerScorer<float> scorer(model, tok, Scheme::sep_nc);
    auto perms = non_identity_permutations();
    perms.insert(perms.begin(), Permutation{0, 1, 2, 3, 4});

    std::size_t used = 0, changed = 0, skipped = 0;
    for (std::size_t i = 350; i < corpus.size() && used < kSepNcProblems; ++i) {
        const auto& p = corpus[i];
        const auto base = scorer.score(p);
        std::set<double> distinct(base.scores.begin(), base.scores.end());
        if (distinct.size() != kNumOptions) {
            ++skipped;
            continue;
        }
        ++used;
        const auto value = option_values(p)[base.chosen];
        for (const auto& perm : perms) {
            const auto q = permute_problem(p, perm, p.id);
            if (option_values(q)[scorer.score(q).chosen] != value) {
                ++changed;
                break;
            }
        }
    }
    if (used < kSepNcProblems) return fail("only " + std::to_string(used) + " problems with distinct scores");
    return check(changed == 0, std::to_string(changed) + "/" + std::to_string(used) +
                                   " problems changed their chosen value over 120 orderings (" +
                                   std::to_string(skipped) + " tied-score problems passed over)");
}

// ---------------------------------------------------------------------------

WordPieceTokenizer digit_letter_tokenizer() {
    Vocab v;
    for (const char* t : {"what", "is", "plus", "?", ";", "how", "much"}) v.add(t);
    for (char c : std::string("0123456789abcdefghij")) {
        v.add(std::string(1, c));
        v.add("##" + std::string(1, c));
    }
    return WordPieceTokenizer(std::move(v));
}

Outcome sep_c_reset() {
    const auto tok = digit_letter_tokenizer();
    const CandidateValues values = {"10", "20", "30", "40", "50"};
    const auto q = tok.encode("how much is 10 plus 40");
    const auto in = assemble_qa_input(q, encode_candidates(values, tok), tok.specials(), separator_id(tok),
                                      AnswerPositions::reset_per_candidate);
    const auto zero = tok.vocab().id("##0");
    std::set<int> zero_pos, lead_pos;
    const auto answer_start = q.size() + 2;
    for (std::size_t i = answer_start; i < in.size(); ++i) {
        if (in.ids[i] == zero) zero_pos.insert(in.positions[i]);
        for (char d = '1'; d <= '5'; ++d) {
            if (in.ids[i] == tok.vocab().id(std::string(1, d))) lead_pos.insert(in.positions[i]);
        }
    }
    const bool example_ok = zero_pos == std::set<int>{1} && lead_pos == std::set<int>{0};

    auto rng = make_rng(23, {tag("acceptance-sepc")});
    std::size_t violations = 0;
    for (std::size_t k = 0; k < 1000; ++k) {
        const auto p = fixtures::random_problem(rng, k);
        const auto qids = tok.encode(p.question);
        auto max_answer_position = [&](const CandidateValues& vals) {
            const auto enc = assemble_qa_input(qids, encode_candidates(vals, tok), tok.specials(), separator_id(tok),
                                               AnswerPositions::reset_per_candidate);
            int m = -1;
            for (std::size_t i = qids.size() + 2; i < enc.size(); ++i) m = std::max(m, enc.positions[i]);
            return m;
        };
        const auto base = max_answer_position(option_values(p));
        Permutation perm{0, 1, 2, 3, 4};
        std::shuffle(perm.begin(), perm.end(), rng);
        if (max_answer_position(option_values(permute_problem(p, perm, p.id))) != base) ++violations;
    }
    return check(example_ok && violations == 0,
                 std::string("'10;20;30;40;50': '0' positions ") + (zero_pos == std::set<int>{1} ? "all 1" : "differ") +
                     ", leading digits " + (lead_pos == std::set<int>{0} ? "all 0" : "not all 0") +
                     "; max position changed under permutation in " + std::to_string(violations) + "/1000 cases");
}

// ---------------------------------------------------------------------------

constexpr std::size_t kGradEntries = 100;
constexpr double kGradTolerance = 1e-3;

Outcome gradient_check() {
    constexpr std::size_t vocab = 40;
    auto model = fixtures::grad_check_model(vocab, 31);
    auto rng = make_rng(37, {tag("acceptance-grad")});
    const auto c = fixtures::grad_check_case(vocab, rng);
    const auto entries = fixtures::grad_check(model, c, kGradEntries, rng);
    double worst = 0;
    std::string worst_name;
    for (const auto& e : entries) {
        if (e.rel > worst) {
            worst = e.rel;
            worst_name = e.name;
        }
    }
    return check(worst <= kGradTolerance, std::to_string(entries.size()) + " entries, max rel. error " + num(worst) +
                                              (worst_name.empty() ? "" : " (" + worst_name + ")") + ", bound 1e-3");
}

// ---------------------------------------------------------------------------

constexpr double kSwapAccuracyFloor = 0.60;

Outcome toy_learning() {
    const auto all = fixtures::synthetic_corpus(2400, 11);
    const std::vector<Problem> train(all.begin(), all.begin() + 2000), held(all.begin() + 2000, all.end());
    const auto tok = fixtures::synthetic_tokenizer(all);
    auto cfg = EncoderConfig::toy(tok.vocab().size());
    cfg.max_positions = 128;
    ModelBundle<float> model(cfg, 3);

    auto tc = TrainConfig::selfsup_defaults();
    tc.losses = LossSet::parse("MLM,NROP");
    tc.epochs = 10;
    tc.lr = 1e-3;
    tc.linear_decay = true;
    tc.max_len = 128;
    tc.seed = 5;
    const PretextDataset data(train, tok, tc.pretext());
    const auto r = self_supervised_train(model, data, tc);

    std::vector<double> mlm;
    for (const auto& e : r.epochs) mlm.push_back(e.terms.at("mlm"));
    bool monotone = true;
    for (std::size_t i = 1; i < mlm.size(); ++i) monotone = monotone && mlm[i] < mlm[i - 1];

    auto pc = tc.pretext();
    pc.mlm = false;
    const PretextDataset held_data(held, tok, pc);
    std::size_t right = 0, n = 0;
    for (std::size_t i = 0; i < held_data.size(); ++i) {
        const auto s = make_epoch_sample(held_data, i, 0, 99);
        if (!s.order_label) continue;
        const auto enc = model.encode(s.input, nullptr, false);
        const bool predicted_swap = binary_logit(model, Head::order, RowVec<float>(enc.cls())) > 0;
        right += predicted_swap == (*s.order_label == OrderLabel::swapped) ? 1 : 0;
        ++n;
    }
    const double acc = static_cast<double>(right) / static_cast<double>(n);
    std::string curve;
    for (auto v : mlm) curve += (curve.empty() ? "" : " ") + num(v, 3);
    return check(acc >= kSwapAccuracyFloor && monotone,
                 "held-out swap accuracy " + num(acc) + " on " + std::to_string(n) + " samples (floor 0.60); MLM " +
                     (monotone ? "decreasing" : "NOT monotone") + ": " + curve);
}

// ---------------------------------------------------------------------------

Outcome early_stopping() {
    // Scripted trajectory: peak at epoch 3, never beaten again.
    std::vector<double> curve = {0.20, 0.25, 0.31, 0.30, 0.31, 0.29};
    curve.resize(40, 0.28);
    EarlyStopping es(15);
    double saved = -1;
    const auto ran = run_with_early_stopping(
        es, 100, [&](std::size_t e) { return curve[e - 1]; }, [&](std::size_t e) { saved = curve[e - 1]; });
    const bool scripted_ok = ran == 18 && es.best_epoch() == 3 && saved == 0.31;

    // Random curves against a direct scan.
    auto rng = make_rng(41, {tag("acceptance-es")});
    std::size_t mismatches = 0;
    for (std::size_t k = 0; k < 2000; ++k) {
        std::vector<double> c(60);
        for (auto& v : c) v = static_cast<double>(uniform_index(rng, 8));
        std::size_t best = 0, stale = 0, expect_ran = c.size();
        for (std::size_t e = 0; e < c.size(); ++e) {
            if (e == 0 || c[e] > c[best]) {
                best = e;
                stale = 0;
            } else if (++stale == 15) {
                expect_ran = e + 1;
                break;
            }
        }
        EarlyStopping s(15);
        const auto n = run_with_early_stopping(s, c.size(), [&](std::size_t e) { return c[e - 1]; }, nullptr);
        if (n != expect_ran || s.best_epoch() != best + 1) ++mismatches;
    }

    // Real fine-tuning: the returned model scores the best validation accuracy.
    const auto corpus = fixtures::synthetic_corpus(60, 43);
    const auto tok = fixtures::synthetic_tokenizer(corpus);
    EncoderConfig ec;
    ec.layers = 2;
    ec.heads = 2;
    ec.hidden = 16;
    ec.ff = 32;
    ec.vocab = tok.vocab().size();
    ec.max_positions = 128;
    ModelBundle<double> model(ec, 47);
    const std::vector<Problem> train(corpus.begin(), corpus.begin() + 40), val(corpus.begin() + 40, corpus.end());
    auto tc = TrainConfig::finetune_defaults();
    tc.scheme = Scheme::orig;
    tc.lr = 3e-3;
    tc.epochs = 40;
    tc.max_len = 128;
    tc.seed = 3;
    const auto r = finetune(model, tok, train, val, tc);
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < r.trajectory.size(); ++i) {
        if (r.trajectory[i].val_accuracy > r.trajectory[argmax].val_accuracy) argmax = i;
    }
    const bool len_ok = r.stopped_early ? r.trajectory.size() == r.best_epoch + 15 : r.trajectory.size() == tc.epochs;
    const double restored = accuracy(predict(AnswerScorer<double>(model, tok, Scheme::orig), val));
    const bool real_ok = r.best_epoch == argmax + 1 && len_ok && restored == r.best_val_accuracy;

    return check(scripted_ok && mismatches == 0 && real_ok,
                 "peak-at-3 curve ran " + std::to_string(ran) + " epochs, best " + std::to_string(es.best_epoch()) +
                     "; random curves mismatched " + std::to_string(mismatches) + "/2000; fine-tune ran " +
                     std::to_string(r.trajectory.size()) + ", best epoch " + std::to_string(r.best_epoch) +
                     ", restored val acc " + num(restored) + " vs best " + num(r.best_val_accuracy));
}

// ---------------------------------------------------------------------------

// Reference per-letter percentages for the three folds, A..E.
const std::map<std::string, std::array<double, kNumOptions>> kReferenceDistribution = {
    {"train", {21.03, 22.00, 22.87, 19.95, 14.15}},
    {"dev", {27.17, 25.98, 16.93, 19.69, 10.24}},
    {"test", {24.80, 22.83, 20.87, 18.11, 13.38}},
};
constexpr double kDistributionTolerance = 0.05;  // percentage points
constexpr double kConstantA = 0.24, kConstantATolerance = 0.01;

Outcome statistics_oracle() {
    const char* dir = std::getenv("AQUA_RAT_DIR");
    if (!dir || !*dir) return {Status::skip, "AQUA_RAT_DIR not set; released folds unavailable"};
    std::string detail;
    bool ok = true;
    for (const auto& [fold, ref] : kReferenceDistribution) {
        const auto problems = load_jsonl(cli::find_fold_file(dir, fold).string(), fold);
        const auto h = answer_distribution(problems);
        double worst = 0;
        for (std::size_t i = 0; i < kNumOptions; ++i) worst = std::max(worst, std::abs(h[i] - ref[i]));
        ok = ok && worst <= kDistributionTolerance;
        detail += fold + " max dev " + num(worst) + "pp; ";
        if (fold == "test") {
            const double constant_a = h[0] / 100.0;
            ok = ok && std::abs(constant_a - kConstantA) <= kConstantATolerance;
            detail += "constant-A test accuracy " + num(100 * constant_a) + "%; ";
        }
    }
    return check(ok, detail);
}

// ---------------------------------------------------------------------------

Outcome difficulty_coherence() {
    auto rng = make_rng(53, {tag("acceptance-difficulty")});
    std::size_t mismatches = 0, rank_mismatches = 0;
    for (std::size_t k = 0; k < 1000; ++k) {
        const auto fold = bare_fold(1 + uniform_index(rng, 50), 0, rng);
        const auto dump = random_dump(fold, rng, k % 2 == 0);
        const auto r = difficulty_report(dump);
        const double d1 = static_cast<double>(r.histogram[0]) / static_cast<double>(dump.size());
        if (d1 != accuracy(dump)) ++mismatches;
        for (const auto& p : dump) {
            if (difficulty_rank(p.scores, p.correct) != fixtures::brute_force_rank(p.scores, p.correct)) ++rank_mismatches;
        }
    }
    return check(mismatches == 0 && rank_mismatches == 0,
                 "D1 != accuracy on " + std::to_string(mismatches) + "/1000 dumps; rank vs sort oracle mismatches " +
                     std::to_string(rank_mismatches));
}

// ---------------------------------------------------------------------------

Outcome stretch_full_scale() {
    return {Status::skip,
            "needs pretrained BERT-base weights and multi-day GPU fine-tuning; targets BERT 28.3 +- 2.0%, "
            "BERT-NROP 37.0 +- 1.1% accuracy"};
}

std::vector<Criterion> criteria() {
    return {
        {"pretext_invariants", true, 60, pretext_invariants},
        {"swap_variants", true, 10, swap_variants_oracle},
        {"consistency_bounds", true, 60, consistency_bounds},
        {"sep_nc_invariance", true, 300, sep_nc_invariance},
        {"sep_c_reset", true, 0, sep_c_reset},
        {"gradient_check", true, 120, gradient_check},
        {"toy_learning", true, 1200, toy_learning},
        {"early_stopping", true, 0, early_stopping},
        {"statistics", true, 0, statistics_oracle},
        {"difficulty_coherence", true, 0, difficulty_coherence},
        {"stretch_full_scale", false, 0, stretch_full_scale},
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<std::string> only;
    int skip_code = 0;
    bool list = false;
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    app.add_option("--skip-code", skip_code, "exit code when every selected criterion is skipped");
    app.add_flag("--list", list, "print criterion names");
    CLI11_PARSE(app, argc, argv);

    const auto all = criteria();
    if (list) {
        for (const auto& c : all) std::cout << c.name << (c.gating ? "" : " (non-gating)") << '\n';
        return 0;
    }
    for (const auto& name : only) {
        if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return c.name == name; })) {
            std::cerr << "unknown criterion " << name << '\n';
            return 2;
        }
    }

    bool gating_failed = false;
    std::size_t ran = 0, skipped = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = fail(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (o.status == Status::pass && c.budget_seconds > 0 && secs > c.budget_seconds) {
            o = fail(o.detail + "; over runtime budget " + num(c.budget_seconds) + "s");
        }
        const char* label = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
        std::cout << label << ' ' << c.name << (c.gating ? "" : " [non-gating]") << " (" << std::fixed
                  << std::setprecision(1) << secs << "s): " << std::defaultfloat << o.detail << std::endl;
        if (o.status == Status::skip) ++skipped;
        if (o.status == Status::fail && c.gating) gating_failed = true;
    }
    if (gating_failed) return 1;
    if (skip_code != 0 && ran > 0 && skipped == ran) return skip_code;
    return 0;
}
