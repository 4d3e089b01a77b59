#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mwp/answer_scoring.hpp"
#include "mwp/corpus.hpp"

namespace mwp {

// ---------------------------------------------------------------------------
// Accuracy

/// Fraction (0..1) of predictions whose chosen option is the correct one.
inline double accuracy(const std::vector<Prediction>& preds) {
    if (preds.empty()) throw Error(ErrorKind::missing_predictions, "no predictions");
    std::size_t hits = 0;
    for (const auto& p : preds) hits += p.solved() ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

/// Predictions restricted to `fold`, in fold order; throws if any problem has none.
inline std::vector<Prediction> select_fold(const std::vector<Prediction>& preds, const std::vector<Problem>& fold) {
    std::map<std::string, const Prediction*> by_id;
    for (const auto& p : preds) by_id[p.problem_id] = &p;
    std::vector<Prediction> out;
    out.reserve(fold.size());
    std::vector<std::string> missing;
    for (const auto& prob : fold) {
        auto it = by_id.find(prob.id);
        if (it == by_id.end()) {
            missing.push_back(prob.id);
            continue;
        }
        out.push_back(*it->second);
    }
    if (!missing.empty()) {
        throw Error(ErrorKind::missing_predictions,
                    std::to_string(missing.size()) + " problems without predictions, first: " + missing.front());
    }
    return out;
}

inline double accuracy(const std::vector<Prediction>& preds, const std::vector<Problem>& fold) {
    if (fold.empty()) throw Error(ErrorKind::empty_fold, "accuracy over an empty fold");
    return accuracy(select_fold(preds, fold));
}

// ---------------------------------------------------------------------------
// Permutation consistency

inline std::string perm_variant_id(const std::string& source_id, std::size_t target) {
    return source_id + "#perm" + std::string(1, label_letter(target));
}

/// Variant i moves the correct value to position i by swapping it with the
/// value found there; the other values keep their places.
inline std::array<Problem, kNumOptions> perm_variants(const Problem& p) {
    const auto values = option_values(p);
    const auto c = p.correct_index();
    std::array<Problem, kNumOptions> out;
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        auto v = values;
        std::swap(v[i], v[c]);
        Problem q = p;
        q.id = perm_variant_id(p.id, i);
        q.options = i == c ? p.options : lettered_options(v);
        q.correct = label_letter(i);
        out[i] = std::move(q);
    }
    return out;
}

struct ConsistencyEntry {
    std::string problem_id;
    std::array<std::size_t, kNumOptions> chosen{};  // prediction for the variant whose answer sits at i
    std::size_t source_correct = 0;                 // original position of the correct answer

    bool variant_correct(std::size_t i) const { return chosen[i] == i; }
    bool all_correct() const {
        for (std::size_t i = 0; i < kNumOptions; ++i) {
            if (!variant_correct(i)) return false;
        }
        return true;
    }
    bool source_correct_flag() const { return variant_correct(source_correct); }
};

struct ConsistencyReport {
    std::vector<ConsistencyEntry> entries;

    std::size_t size() const { return entries.size(); }

    /// Fraction of problems whose five variants are all solved.
    double score() const {
        if (entries.empty()) return 0.0;
        std::size_t n = 0;
        for (const auto& e : entries) n += e.all_correct() ? 1 : 0;
        return static_cast<double>(n) / static_cast<double>(entries.size());
    }

    /// Accuracy under the original answer ordering.
    double accuracy() const {
        if (entries.empty()) return 0.0;
        std::size_t n = 0;
        for (const auto& e : entries) n += e.source_correct_flag() ? 1 : 0;
        return static_cast<double>(n) / static_cast<double>(entries.size());
    }
};

/// Builds the report from a dump holding predictions for "<id>#permA".."<id>#permE".
inline ConsistencyReport perm_consistency(const std::vector<Prediction>& dump, const std::vector<Problem>& fold) {
    std::map<std::string, const Prediction*> by_id;
    for (const auto& p : dump) by_id[p.problem_id] = &p;
    ConsistencyReport report;
    report.entries.reserve(fold.size());
    for (const auto& prob : fold) {
        ConsistencyEntry e{prob.id, {}, prob.correct_index()};
        for (std::size_t i = 0; i < kNumOptions; ++i) {
            auto it = by_id.find(perm_variant_id(prob.id, i));
            if (it == by_id.end()) {
                throw Error(ErrorKind::partial_coverage, "no prediction for " + perm_variant_id(prob.id, i));
            }
            e.chosen[i] = it->second->chosen;
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

/// Scores all five variants of every problem and returns the dump plus the report.
template <class T>
std::pair<std::vector<Prediction>, ConsistencyReport> perm_consistency(const AnswerScorer<T>& scorer,
                                                                       const std::vector<Problem>& fold) {
    std::vector<Prediction> dump;
    dump.reserve(fold.size() * kNumOptions);
    for (const auto& p : fold) {
        for (const auto& v : perm_variants(p)) {
            dump.push_back(make_prediction(v.id, scorer.score(v), v.correct_index()));
        }
    }
    auto report = perm_consistency(dump, fold);
    return {std::move(dump), std::move(report)};
}

inline nlohmann::json to_json(const ConsistencyReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : r.entries) {
        std::string chosen;
        for (auto c : e.chosen) chosen += label_letter(c);
        rows.push_back({{"problem_id", e.problem_id}, {"chosen", chosen}, {"all_correct", e.all_correct()}});
    }
    return {{"problems", r.size()}, {"consistency", r.score()}, {"accuracy", r.accuracy()}, {"entries", rows}};
}

// ---------------------------------------------------------------------------
// Difficulty

/// 1 + number of candidates ranked above the correct one. A candidate with an
/// equal score ranks above it only when it comes earlier, matching argmax_lowest.
inline std::size_t difficulty_rank(const Scores& scores, std::size_t correct) {
    std::size_t above = 0;
    for (std::size_t j = 0; j < kNumOptions; ++j) {
        if (scores[j] > scores[correct] || (scores[j] == scores[correct] && j < correct)) ++above;
    }
    return above + 1;
}

enum class DifficultyGroup { easy, medium, hard };

inline DifficultyGroup difficulty_group(std::size_t rank) {
    if (rank <= 1) return DifficultyGroup::easy;
    if (rank <= 3) return DifficultyGroup::medium;
    return DifficultyGroup::hard;
}

inline std::string to_string(DifficultyGroup g) {
    switch (g) {
    case DifficultyGroup::easy: return "easy";
    case DifficultyGroup::medium: return "medium";
    case DifficultyGroup::hard: return "hard";
    }
    return "easy";
}

struct DifficultyReport {
    std::vector<std::pair<std::string, std::size_t>> ranks;
    std::array<std::size_t, kNumOptions> histogram{};
    std::array<std::size_t, 3> groups{};  // easy, medium, hard

    std::size_t size() const { return ranks.size(); }
    double fraction(std::size_t rank) const {
        return ranks.empty() ? 0.0 : static_cast<double>(histogram.at(rank - 1)) / static_cast<double>(ranks.size());
    }
};

inline DifficultyReport difficulty_report(const std::vector<Prediction>& preds) {
    DifficultyReport r;
    r.ranks.reserve(preds.size());
    for (const auto& p : preds) {
        for (double s : p.scores) {
            if (!std::isfinite(s)) throw Error(ErrorKind::missing_field, "non-finite score for " + p.problem_id);
        }
        const auto rank = difficulty_rank(p.scores, p.correct);
        r.ranks.emplace_back(p.problem_id, rank);
        ++r.histogram[rank - 1];
        ++r.groups[static_cast<std::size_t>(difficulty_group(rank))];
    }
    return r;
}

inline DifficultyReport difficulty_report(const std::vector<Prediction>& preds, const std::vector<Problem>& fold) {
    return difficulty_report(select_fold(preds, fold));
}

inline nlohmann::json to_json(const DifficultyReport& r) {
    nlohmann::json hist = nlohmann::json::object();
    for (std::size_t i = 0; i < kNumOptions; ++i) hist["D" + std::to_string(i + 1)] = r.histogram[i];
    return {{"problems", r.size()},
            {"histogram", hist},
            {"groups", {{"easy", r.groups[0]}, {"medium", r.groups[1]}, {"hard", r.groups[2]}}}};
}

// ---------------------------------------------------------------------------
// Correlation

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw Error(ErrorKind::invalid_argument, "pearson: length mismatch");
    if (x.size() < 3) throw Error(ErrorKind::invalid_argument, "pearson: need at least 3 points");
    const auto n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::zero_variance, "pearson: a series is constant");
    return sxy / std::sqrt(sxx * syy);
}

struct EpochAccuracy {
    std::size_t epoch = 0;
    double val = 0.0;
    double test = 0.0;
};

struct CorrelationSummary {
    std::vector<double> per_run;
    double mean = 0.0;
    double stddev = 0.0;
};

/// Pearson r between validation and test accuracy, one value per run.
inline CorrelationSummary dev_test_correlation(const std::vector<std::vector<EpochAccuracy>>& runs) {
    CorrelationSummary s;
    for (const auto& run : runs) {
        std::vector<double> v, t;
        for (const auto& e : run) {
            v.push_back(e.val);
            t.push_back(e.test);
        }
        s.per_run.push_back(pearson(v, t));
    }
    if (s.per_run.empty()) return s;
    for (double r : s.per_run) s.mean += r;
    s.mean /= static_cast<double>(s.per_run.size());
    if (s.per_run.size() > 1) {
        double ss = 0;
        for (double r : s.per_run) ss += (r - s.mean) * (r - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.per_run.size() - 1));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Embeddings

namespace detail {

inline bool is_operand_char(char c) {
    return std::isdigit(static_cast<unsigned char>(c)) || c == ')' || c == ']' || c == '.' || c == '%';
}

}  // namespace detail

/// Distinct arithmetic operators in `text`. '-' (or U+2212) counts unless it is
/// a sign (no operand to its left, digit right after) or a hyphen inside a word.
/// A left operand is a number, a closing bracket or a one-letter variable.
inline std::set<char> arithmetic_operators(std::string_view text) {
    std::set<char> ops;
    auto left_operand = [&](std::size_t i) {
        while (i > 0 && std::isspace(static_cast<unsigned char>(text[i - 1]))) --i;
        if (i == 0) return false;
        const char c = text[i - 1];
        if (detail::is_operand_char(c)) return true;
        if (!std::isalpha(static_cast<unsigned char>(c))) return false;
        return i < 2 || !std::isalpha(static_cast<unsigned char>(text[i - 2]));
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '+' || c == '*' || c == '/') {
            ops.insert(c);
            continue;
        }
        std::size_t next = i + 1;
        if (static_cast<unsigned char>(c) == 0xE2 && i + 2 < text.size() &&
            static_cast<unsigned char>(text[i + 1]) == 0x88 && static_cast<unsigned char>(text[i + 2]) == 0x92) {
            next = i + 3;
        } else if (c != '-') {
            continue;
        }
        const char right = next < text.size() ? text[next] : '\0';
        const bool has_left = left_operand(i);
        const std::size_t start = i;
        i = next - 1;
        if (!has_left && std::isdigit(static_cast<unsigned char>(right))) continue;  // sign
        const bool word_left = start > 0 && std::isalpha(static_cast<unsigned char>(text[start - 1]));
        if (word_left && std::isalpha(static_cast<unsigned char>(right))) continue;  // hyphenated word
        ops.insert('-');
    }
    return ops;
}

/// The operator when the rationale uses exactly one kind of operator.
inline std::optional<char> single_operator(std::string_view rationale) {
    const auto ops = arithmetic_operators(rationale);
    if (ops.size() != 1) return std::nullopt;
    return *ops.begin();
}

struct EmbeddingExport {
    std::vector<std::string> ids;
    std::vector<std::string> labels;
    Eigen::MatrixXd vectors;  // one row per problem
};

/// [CLS] embeddings of questions whose rationale has a single operator. With
/// `limit` set, keeps the first `limit` matches; fewer matches export all and warn.
template <class T>
EmbeddingExport export_embeddings(const ModelBundle<T>& model, const Tokenizer& tok, const std::vector<Problem>& fold,
                                  std::optional<std::size_t> limit = std::nullopt, Warnings* warnings = nullptr) {
    std::vector<std::pair<const Problem*, char>> picked;
    for (const auto& p : fold) {
        if (auto op = single_operator(p.rationale)) picked.emplace_back(&p, *op);
        if (limit && picked.size() == *limit) break;
    }
    if (limit && picked.size() < *limit) {
        warn(warnings, "only " + std::to_string(picked.size()) + " single-operator problems, requested " +
                           std::to_string(*limit));
    }
    EmbeddingExport out;
    out.vectors.resize(static_cast<Eigen::Index>(picked.size()), static_cast<Eigen::Index>(model.config().hidden));
    for (std::size_t i = 0; i < picked.size(); ++i) {
        const auto in = assemble_question_input(tok.encode(picked[i].first->question), tok.specials());
        out.vectors.row(static_cast<Eigen::Index>(i)) = model.encode(in, nullptr, false).cls().template cast<double>();
        out.ids.push_back(picked[i].first->id);
        out.labels.emplace_back(1, picked[i].second);
    }
    return out;
}

using Projection = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Projection onto the two leading principal components. Component signs are
/// fixed so the largest-magnitude loading is positive.
inline Eigen::MatrixXd pca_2d(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), 2);
    if (x.rows() == 0) return out;
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const auto& vecs = es.eigenvectors();  // ascending eigenvalues
    const auto k = std::min<Eigen::Index>(2, vecs.cols());
    for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::VectorXd v = vecs.col(vecs.cols() - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        out.col(c) = centered * v;
    }
    return out;
}

inline Eigen::MatrixXd project_2d(const Eigen::MatrixXd& x, const Projection& method = pca_2d) {
    Eigen::MatrixXd out = method(x);
    if (out.rows() != x.rows() || out.cols() != 2) {
        throw Error(ErrorKind::invalid_argument, "projection must return N x 2");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report writers

inline std::string percent(double fraction, int digits = 2) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << fraction * 100.0 << '%';
    return s.str();
}

inline std::string embeddings_csv(const EmbeddingExport& e) {
    std::ostringstream s;
    s.precision(9);
    s << "id,label";
    for (Eigen::Index c = 0; c < e.vectors.cols(); ++c) s << ",v" << c;
    s << '\n';
    for (Eigen::Index r = 0; r < e.vectors.rows(); ++r) {
        s << e.ids[static_cast<std::size_t>(r)] << ',' << e.labels[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < e.vectors.cols(); ++c) s << ',' << e.vectors(r, c);
        s << '\n';
    }
    return s.str();
}

inline std::string consistency_markdown(const ConsistencyReport& r, std::string_view model_name) {
    std::ostringstream s;
    s << "| Model | Accuracy | Permutation consistency |\n|---|---|---|\n";
    s << "| " << model_name << " | " << percent(r.accuracy()) << " | " << percent(r.score()) << " |\n";
    return s.str();
}

inline std::string difficulty_markdown(const DifficultyReport& r) {
    std::ostringstream s;
    s << "| D1 | D2 | D3 | D4 | D5 | Easy | Medium | Hard |\n|---|---|---|---|---|---|---|---|\n|";
    for (auto h : r.histogram) s << ' ' << h << " |";
    for (auto g : r.groups) s << ' ' << g << " |";
    s << '\n';
    return s.str();
}

}  // namespace mwp
