#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/error.hpp"
#include "mwp/hash.hpp"
#include "mwp/random.hpp"
#include "mwp/tokenizer.hpp"

namespace mwp {

inline constexpr std::size_t kNumOptions = 5;
inline constexpr std::array<char, kNumOptions> kOptionLetters = {'A', 'B', 'C', 'D', 'E'};

inline std::optional<std::size_t> label_index(char letter) {
    if (letter >= 'A' && letter <= 'E') {
        return static_cast<std::size_t>(letter - 'A');
    }
    return std::nullopt;
}

inline char label_letter(std::size_t index) { return kOptionLetters.at(index); }

/// One AQuA-RAT record. Options are kept verbatim ("A)30").
struct Problem {
    std::string id;
    std::string question;
    std::array<std::string, kNumOptions> options;
    std::string rationale;
    char correct = 'A';

    std::size_t correct_index() const { return static_cast<std::size_t>(correct - 'A'); }
};

struct RationaleSteps {
    std::vector<std::string> steps;

    std::size_t size() const { return steps.size(); }
    bool empty() const { return steps.empty(); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

}  // namespace detail

inline Problem parse_problem(const nlohmann::json& record, std::string id = {}) {
    for (const char* key : {"question", "options", "rationale", "correct"}) {
        if (!record.contains(key)) {
            throw Error(ErrorKind::missing_field, std::string("record lacks '") + key + "'");
        }
    }
    Problem p;
    p.id = record.contains("id") ? record.at("id").get<std::string>() : std::move(id);
    p.question = record.at("question").get<std::string>();
    p.rationale = record.at("rationale").get<std::string>();

    const auto& opts = record.at("options");
    if (!opts.is_array() || opts.size() != kNumOptions) {
        throw Error(ErrorKind::malformed_options,
                    "expected 5 options, got " + std::to_string(opts.is_array() ? opts.size() : 0));
    }
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        const auto s = opts[i].get<std::string>();
        const auto t = detail::trim(s);
        if (t.size() < 2 || t[0] != kOptionLetters[i] || t[1] != ')') {
            throw Error(ErrorKind::malformed_options,
                        "option " + std::to_string(i) + " lacks prefix '" + kOptionLetters[i] + ")': " + s);
        }
        p.options[i] = s;
    }

    const auto correct = std::string(detail::trim(record.at("correct").get<std::string>()));
    if (correct.size() != 1 || !label_index(correct[0])) {
        throw Error(ErrorKind::invalid_correct_label, "correct label '" + correct + "'");
    }
    p.correct = correct[0];
    return p;
}

inline nlohmann::json to_json(const Problem& p) {
    return {{"id", p.id},
            {"question", p.question},
            {"options", std::vector<std::string>(p.options.begin(), p.options.end())},
            {"rationale", p.rationale},
            {"correct", std::string(1, p.correct)}};
}

/// Splits a rationale into steps on line boundaries; steps are trimmed and
/// blank lines dropped.
inline RationaleSteps split_rationale(std::string_view rationale) {
    RationaleSteps out;
    std::size_t start = 0;
    while (start <= rationale.size()) {
        auto end = rationale.find('\n', start);
        if (end == std::string_view::npos) {
            end = rationale.size();
        }
        const auto line = detail::trim(rationale.substr(start, end - start));
        if (!line.empty()) {
            out.steps.emplace_back(line);
        }
        start = end + 1;
    }
    return out;
}

inline std::string join_steps(const RationaleSteps& steps) {
    std::string out;
    for (std::size_t i = 0; i < steps.steps.size(); ++i) {
        if (i) {
            out += '\n';
        }
        out += steps.steps[i];
    }
    return out;
}

struct OptionValue {
    std::string value;
    bool had_prefix = true;
};

/// Strips the "X)" letter prefix from an option. Inputs without a prefix come
/// back unchanged with `had_prefix` cleared.
inline OptionValue option_value(std::string_view option) {
    const auto t = detail::trim(option);
    if (t.size() >= 2 && label_index(t[0]) && t[1] == ')') {
        return {std::string(detail::trim(t.substr(2))), true};
    }
    return {std::string(option), false};
}

inline std::array<std::string, kNumOptions> option_values(const Problem& p) {
    std::array<std::string, kNumOptions> out;
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        out[i] = option_value(p.options[i]).value;
    }
    return out;
}

/// Rebuilds the lettered option strings for a list of values.
inline std::array<std::string, kNumOptions> lettered_options(const std::array<std::string, kNumOptions>& values) {
    std::array<std::string, kNumOptions> out;
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        out[i] = std::string(1, kOptionLetters[i]) + ")" + values[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::vector<Problem> load_jsonl(const std::string& path, const std::string& fold_name) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::io, "cannot read " + path);
    }
    std::vector<Problem> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::io, path + ":" + std::to_string(lineno + 1) + ": " + e.what());
        }
        out.push_back(parse_problem(rec, fold_name + "-" + std::to_string(lineno)));
        ++lineno;
    }
    return out;
}

inline void write_jsonl(const std::vector<Problem>& problems, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorKind::io, "cannot write " + path);
    }
    for (const auto& p : problems) {
        out << to_json(p).dump() << '\n';
    }
}

inline std::string corpus_hash(const std::vector<Problem>& problems) {
    Fnv1a h;
    for (const auto& p : problems) {
        h.update(to_json(p).dump()).update("\n");
    }
    return h.hex();
}

// ---------------------------------------------------------------------------
// Splits

inline constexpr std::size_t kExtendedDevSamples = 5000;

struct Folds {
    std::vector<Problem> train;
    std::vector<Problem> dev;
    std::vector<Problem> test;
};

struct SplitSet {
    std::vector<Problem> train;  // effective training fold
    std::vector<Problem> dev;
    std::vector<Problem> ext_dev;
    std::vector<Problem> test;
    std::uint64_t seed = 0;
    std::vector<std::string> sampled_ids;  // train ids moved into ext_dev
    std::vector<std::string> warnings;
};

struct SplitOptions {
    std::size_t ext_dev_samples = kExtendedDevSamples;
    bool keep_in_train = false;
};

/// Builds the extended dev fold: `ext_dev_samples` train problems drawn without
/// replacement under `seed`, followed by the whole dev fold. Sampled problems
/// leave the effective training fold unless `keep_in_train` is set.
inline SplitSet build_splits(const Folds& folds, std::uint64_t seed, SplitOptions opts = {}) {
    SplitSet s;
    s.seed = seed;
    s.dev = folds.dev;
    s.test = folds.test;

    std::unordered_set<std::string> held_out;
    for (const auto& p : folds.dev) held_out.insert(p.id);
    for (const auto& p : folds.test) held_out.insert(p.id);

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < folds.train.size(); ++i) {
        if (!held_out.count(folds.train[i].id)) {
            eligible.push_back(i);
        }
    }

    std::size_t n = opts.ext_dev_samples;
    if (eligible.size() < n) {
        s.warnings.push_back("train fold has " + std::to_string(eligible.size()) + " eligible problems, fewer than " +
                             std::to_string(n) + "; sampling all of train");
        n = eligible.size();
    }

    auto rng = make_rng(seed, {tag("ext-dev")});
    std::shuffle(eligible.begin(), eligible.end(), rng);
    std::vector<std::size_t> picked(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(picked.begin(), picked.end());

    std::vector<bool> in_ext(folds.train.size(), false);
    s.ext_dev = folds.dev;
    for (auto i : picked) {
        in_ext[i] = true;
        s.ext_dev.push_back(folds.train[i]);
        s.sampled_ids.push_back(folds.train[i].id);
    }
    for (std::size_t i = 0; i < folds.train.size(); ++i) {
        if (opts.keep_in_train || !in_ext[i]) {
            s.train.push_back(folds.train[i]);
        }
    }
    return s;
}

inline nlohmann::json splits_manifest(const SplitSet& s) {
    auto ids = [](const std::vector<Problem>& fold) {
        std::vector<std::string> out;
        out.reserve(fold.size());
        for (const auto& p : fold) out.push_back(p.id);
        return out;
    };
    return {{"seed", s.seed},
            {"folds",
             {{"train", ids(s.train)}, {"dev", ids(s.dev)}, {"ext_dev", ids(s.ext_dev)}, {"test", ids(s.test)}}},
            {"warnings", s.warnings}};
}

// ---------------------------------------------------------------------------
// Statistics

using AnswerHistogram = std::array<double, kNumOptions>;

/// Percentage of problems per correct label.
inline AnswerHistogram answer_distribution(const std::vector<Problem>& fold) {
    if (fold.empty()) {
        throw Error(ErrorKind::empty_fold, "answer distribution of an empty fold");
    }
    std::array<std::size_t, kNumOptions> counts{};
    for (const auto& p : fold) {
        ++counts[p.correct_index()];
    }
    AnswerHistogram pct{};
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        pct[i] = 100.0 * static_cast<double>(counts[i]) / static_cast<double>(fold.size());
    }
    return pct;
}

struct TokenCounts {
    std::vector<std::size_t> question;
    std::vector<std::size_t> rationale;

    std::size_t total_question() const { return std::accumulate(question.begin(), question.end(), std::size_t{0}); }
    std::size_t total_rationale() const { return std::accumulate(rationale.begin(), rationale.end(), std::size_t{0}); }
};

inline TokenCounts count_tokens(const std::vector<Problem>& problems, const Tokenizer& tok) {
    TokenCounts c;
    c.question.reserve(problems.size());
    c.rationale.reserve(problems.size());
    for (const auto& p : problems) {
        c.question.push_back(tok.tokenize(p.question).size());
        std::size_t r = 0;
        for (const auto& step : split_rationale(p.rationale).steps) {
            r += tok.tokenize(step).size();
        }
        c.rationale.push_back(r);
    }
    return c;
}

/// Ratio of rationale tokens to question tokens over a fold.
inline double rationale_question_token_ratio(const std::vector<Problem>& problems, const Tokenizer& tok) {
    const auto c = count_tokens(problems, tok);
    if (c.total_question() == 0) {
        throw Error(ErrorKind::empty_fold, "no question tokens");
    }
    return static_cast<double>(c.total_rationale()) / static_cast<double>(c.total_question());
}

struct TokenMatchedPair {
    double question_fraction = 0.0;
    std::size_t budget_tokens = 0;             // tokens in the questions-only subset
    std::vector<std::size_t> questions_only;   // indices into train
    std::vector<std::size_t> with_rationales;  // indices into train
    std::size_t with_rationales_tokens = 0;
    double with_rationales_fraction = 0.0;

    double relative_gap() const {
        const auto a = static_cast<double>(budget_tokens);
        return a == 0.0 ? 0.0 : std::abs(a - static_cast<double>(with_rationales_tokens)) / a;
    }
};

inline constexpr double kTokenMatchTolerance = 0.02;

/// For each fraction f, a questions-only subset holding f of the train
/// questions and a question+rationale subset with the same token count (within 2%).
inline std::vector<TokenMatchedPair> token_matched_subsets(const std::vector<Problem>& train, const Tokenizer& tok,
                                                           const std::vector<double>& question_fractions,
                                                           std::uint64_t seed) {
    const auto counts = count_tokens(train, tok);
    const std::size_t total_joint = counts.total_question() + counts.total_rationale();

    std::vector<std::size_t> q_order(train.size());
    std::iota(q_order.begin(), q_order.end(), std::size_t{0});
    auto joint_order = q_order;
    auto rng_q = make_rng(seed, {tag("tokens-q")});
    auto rng_j = make_rng(seed, {tag("tokens-qr")});
    std::shuffle(q_order.begin(), q_order.end(), rng_q);
    std::shuffle(joint_order.begin(), joint_order.end(), rng_j);

    std::vector<TokenMatchedPair> out;
    for (double f : question_fractions) {
        if (!(f > 0.0 && f <= 1.0)) {
            throw Error(ErrorKind::invalid_argument, "question fraction must lie in (0, 1]");
        }
        TokenMatchedPair pair;
        pair.question_fraction = f;
        const auto nq = static_cast<std::size_t>(std::llround(f * static_cast<double>(train.size())));
        pair.questions_only.assign(q_order.begin(), q_order.begin() + static_cast<std::ptrdiff_t>(nq));
        for (auto i : pair.questions_only) pair.budget_tokens += counts.question[i];

        if (pair.budget_tokens > total_joint) {
            throw Error(ErrorKind::budget_exceeds_corpus,
                        "budget of " + std::to_string(pair.budget_tokens) + " tokens exceeds corpus");
        }
        // Grow the joint prefix and keep whichever cut lands closest to the budget.
        std::size_t acc = 0;
        std::size_t best_len = 0;
        std::size_t best_tokens = 0;
        for (std::size_t k = 0; k < joint_order.size(); ++k) {
            const auto i = joint_order[k];
            const auto next = acc + counts.question[i] + counts.rationale[i];
            const auto gap_now = acc > pair.budget_tokens ? acc - pair.budget_tokens : pair.budget_tokens - acc;
            const auto gap_next = next > pair.budget_tokens ? next - pair.budget_tokens : pair.budget_tokens - next;
            if (gap_next <= gap_now) {
                acc = next;
                best_len = k + 1;
                best_tokens = acc;
            } else {
                break;
            }
        }
        pair.with_rationales.assign(joint_order.begin(), joint_order.begin() + static_cast<std::ptrdiff_t>(best_len));
        pair.with_rationales_tokens = best_tokens;
        pair.with_rationales_fraction = static_cast<double>(best_len) / static_cast<double>(train.size());
        out.push_back(std::move(pair));
    }
    return out;
}

}  // namespace mwp
