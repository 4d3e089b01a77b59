#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <array>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/corpus.hpp"
#include "mwp/encoder.hpp"
#include "mwp/pretext.hpp"
#include "mwp/tokenizer.hpp"

namespace mwp {

enum class Scheme { orig, aug, sep_nc, sep_c };

inline std::string to_string(Scheme s) {
    switch (s) {
    case Scheme::orig: return "ORIG";
    case Scheme::aug: return "AUG";
    case Scheme::sep_nc: return "SEP-NC";
    case Scheme::sep_c: return "SEP-C";
    }
    return "ORIG";
}

inline Scheme parse_scheme(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
    std::replace(s.begin(), s.end(), '_', '-');
    if (s == "ORIG") return Scheme::orig;
    if (s == "AUG") return Scheme::aug;
    if (s == "SEP-NC") return Scheme::sep_nc;
    if (s == "SEP-C") return Scheme::sep_c;
    throw Error(ErrorKind::config, "unknown scheme '" + s + "'");
}

/// SEP schemes score candidates with the matching head; ORIG and AUG with the 5-way classifier.
inline bool uses_match_head(Scheme s) { return s == Scheme::sep_nc || s == Scheme::sep_c; }

using CandidateValues = std::array<std::string, kNumOptions>;

/// Bare option values (letter prefixes stripped) and their order relative to the source problem.
struct CandidateSet {
    CandidateValues values;
    std::array<std::size_t, kNumOptions> order{0, 1, 2, 3, 4};

    static CandidateSet of(const Problem& p) { return {option_values(p), {0, 1, 2, 3, 4}}; }

    /// Entry i of the result is entry perm[i] of this set.
    CandidateSet permuted(const std::array<std::size_t, kNumOptions>& perm) const {
        CandidateSet out;
        for (std::size_t i = 0; i < kNumOptions; ++i) {
            out.values[i] = values[perm[i]];
            out.order[i] = order[perm[i]];
        }
        return out;
    }

    bool valid_order() const {
        auto sorted = order;
        std::sort(sorted.begin(), sorted.end());
        return sorted == std::array<std::size_t, kNumOptions>{0, 1, 2, 3, 4};
    }
};

using Scores = std::array<double, kNumOptions>;

/// First index of the maximum; ties resolve toward the lowest index.
inline std::size_t argmax_lowest(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

struct ScoredAnswer {
    Scores scores{};
    std::size_t chosen = 0;
    Scheme scheme = Scheme::orig;
};

inline ScoredAnswer make_scored(const Scores& s, Scheme scheme) { return {s, argmax_lowest(s), scheme}; }

// ---------------------------------------------------------------------------
// Input layouts

inline TokenId separator_id(const Tokenizer& tok) { return tok.vocab().id(";"); }

using CandidateTokens = std::array<std::vector<TokenId>, kNumOptions>;

inline CandidateTokens encode_candidates(const CandidateValues& values, const Tokenizer& tok) {
    CandidateTokens out;
    for (std::size_t i = 0; i < kNumOptions; ++i) out[i] = tok.encode(values[i]);
    return out;
}

/// Answer span "c1 ; c2 ; ... ; cN [SEP]": every candidate is followed by one
/// separator, ';' between candidates and the closing [SEP] after the last.
inline std::vector<TokenId> answer_span(std::span<const std::vector<TokenId>> candidates, TokenId semicolon,
                                        TokenId sep) {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        out.insert(out.end(), candidates[i].begin(), candidates[i].end());
        out.push_back(i + 1 < candidates.size() ? semicolon : sep);
    }
    return out;
}

/// Position ids for the answer span with a reset at the start of every
/// candidate: each token gets its offset within its own candidate, and a
/// separator belongs to the candidate before it.
inline std::vector<int> sep_c_positions(std::span<const std::vector<TokenId>> candidates) {
    std::vector<int> out;
    for (const auto& c : candidates) {
        for (std::size_t k = 0; k <= c.size(); ++k) out.push_back(static_cast<int>(k));
    }
    return out;
}

inline std::vector<int> sep_c_positions(std::span<const std::string> candidates, const Tokenizer& tok) {
    std::vector<std::vector<TokenId>> ids;
    for (const auto& c : candidates) ids.push_back(tok.encode(c));
    return sep_c_positions(std::span<const std::vector<TokenId>>(ids));
}

enum class AnswerPositions { monotone, reset_per_candidate };

/// [CLS] question [SEP] c1 ; c2 ; c3 ; c4 ; c5 [SEP]. Segment 0 on [CLS], the
/// question and its [SEP]; segment 1 on the answer span. Overflow truncates the
/// question tail, never the candidates.
inline EncodedInput assemble_qa_input(const std::vector<TokenId>& question, const CandidateTokens& candidates,
                                      const SpecialIds& sp, TokenId semicolon,
                                      AnswerPositions layout = AnswerPositions::monotone,
                                      std::size_t max_len = kMaxPositions, Warnings* warnings = nullptr) {
    const auto span = answer_span(candidates, semicolon, sp.sep);
    if (span.size() + 2 > max_len) {
        throw Error(ErrorKind::length_overflow, "candidates alone exceed the sequence limit");
    }
    std::size_t q_len = question.size();
    if (q_len + 2 + span.size() > max_len) {
        q_len = max_len - 2 - span.size();
        warn(warnings, "question truncated to " + std::to_string(q_len) + " tokens");
    }
    EncodedInput in;
    in.push(sp.cls, kQuestionSegment, 0);
    for (std::size_t i = 0; i < q_len; ++i) in.push(question[i], kQuestionSegment, 0);
    in.push(sp.sep, kQuestionSegment, 0);
    const auto answer_start = in.size();
    for (auto id : span) in.push(id, kRationaleSegment, 0);
    in.renumber();
    if (layout == AnswerPositions::reset_per_candidate) {
        const auto reset = sep_c_positions(candidates);
        std::copy(reset.begin(), reset.end(), in.positions.begin() + static_cast<std::ptrdiff_t>(answer_start));
    }
    return in;
}

inline EncodedInput assemble_qa_input(std::string_view question, const CandidateValues& values, const Tokenizer& tok,
                                      AnswerPositions layout = AnswerPositions::monotone,
                                      std::size_t max_len = kMaxPositions) {
    return assemble_qa_input(tok.encode(question), encode_candidates(values, tok), tok.specials(), separator_id(tok),
                             layout, max_len);
}

inline EncodedInput assemble_qa_input(std::string_view question, std::span<const std::string> values,
                                      const Tokenizer& tok, AnswerPositions layout = AnswerPositions::monotone) {
    if (values.size() != kNumOptions) {
        throw Error(ErrorKind::invalid_argument, "expected 5 candidates, got " + std::to_string(values.size()));
    }
    CandidateValues v;
    std::copy(values.begin(), values.end(), v.begin());
    return assemble_qa_input(question, v, tok, layout);
}

/// [CLS] candidate [SEP], candidate tokens on segment 1.
inline EncodedInput assemble_candidate_input(const std::vector<TokenId>& candidate, const SpecialIds& sp,
                                             std::size_t max_len = kMaxPositions) {
    EncodedInput in;
    in.push(sp.cls, kQuestionSegment, 0);
    const auto n = std::min(candidate.size(), max_len - 2);
    for (std::size_t i = 0; i < n; ++i) in.push(candidate[i], kRationaleSegment, 0);
    in.push(sp.sep, kRationaleSegment, 0);
    in.renumber();
    return in;
}

inline EncodedInput assemble_question_input(const std::vector<TokenId>& question, const SpecialIds& sp,
                                            std::size_t max_len = kMaxPositions) {
    return assemble_ss_input(question, {}, sp, max_len);
}

// ---------------------------------------------------------------------------
// AUG: answer-order augmentation

using Permutation = std::array<std::size_t, kNumOptions>;

inline std::vector<Permutation> non_identity_permutations() {
    std::vector<Permutation> out;
    Permutation p{0, 1, 2, 3, 4};
    while (std::next_permutation(p.begin(), p.end())) out.push_back(p);
    return out;  // the identity is the starting point and never emitted
}

inline Problem permute_problem(const Problem& src, const Permutation& perm, std::string id) {
    const auto values = option_values(src);
    CandidateValues permuted;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        permuted[i] = values[perm[i]];
        if (perm[i] == src.correct_index()) correct = i;
    }
    Problem out = src;
    out.id = std::move(id);
    out.options = lettered_options(permuted);
    out.correct = label_letter(correct);
    return out;
}

/// `n` distinct non-identity orderings of the candidates, sampled without
/// replacement; the correct label follows its value.
inline std::vector<Problem> augment_permutations(const Problem& problem, Rng& rng, std::size_t n = 25) {
    auto perms = non_identity_permutations();
    if (n > perms.size()) {
        throw Error(ErrorKind::invalid_argument, "at most 119 non-identity permutations, asked for " + std::to_string(n));
    }
    std::shuffle(perms.begin(), perms.end(), rng);
    std::vector<Problem> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        out.push_back(permute_problem(problem, perms[k], problem.id + "#aug" + std::to_string(k)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scoring

/// Tokenized view of one problem for the answer schemes.
struct QaItem {
    std::vector<TokenId> question;
    CandidateTokens candidates;
    std::size_t correct = 0;

    static QaItem of(const Problem& p, const Tokenizer& tok) {
        return {tok.encode(p.question), encode_candidates(option_values(p), tok), p.correct_index()};
    }
};

template <class T>
class AnswerScorer {
public:
    AnswerScorer(const ModelBundle<T>& model, const Tokenizer& tok, Scheme scheme)
        : model_(&model), tok_(&tok), scheme_(scheme) {}

    Scheme scheme() const { return scheme_; }

    ScoredAnswer score(const QaItem& item) const {
        Scores s{};
        const auto& sp = tok_->specials();
        if (!uses_match_head(scheme_)) {
            const auto in = assemble_qa_input(item.question, item.candidates, sp, separator_id(*tok_));
            const auto p = qa_forward(*model_, model_->encode(in, nullptr, false).cls());
            for (std::size_t i = 0; i < kNumOptions; ++i) s[i] = static_cast<double>(p[i]);
        } else {
            const auto context = context_embedding(item);
            for (std::size_t i = 0; i < kNumOptions; ++i) {
                s[i] = static_cast<double>(match_score(*model_, context, candidate_embedding(item.candidates[i])));
            }
        }
        return make_scored(s, scheme_);
    }

    ScoredAnswer score(const Problem& p) const { return score(QaItem::of(p, *tok_)); }

    /// Question-side embedding for the SEP schemes: BERT(Q) for SEP-NC,
    /// BERT(Q || P_m) for SEP-C.
    RowVec<T> context_embedding(const QaItem& item) const {
        const auto& sp = tok_->specials();
        if (scheme_ == Scheme::sep_nc) {
            return model_->encode(assemble_question_input(item.question, sp), nullptr, false).cls();
        }
        const auto in = assemble_qa_input(item.question, item.candidates, sp, separator_id(*tok_),
                                          AnswerPositions::reset_per_candidate);
        return model_->encode(in, nullptr, false).cls();
    }

    RowVec<T> candidate_embedding(const std::vector<TokenId>& candidate) const {
        return model_->encode(assemble_candidate_input(candidate, tok_->specials()), nullptr, false).cls();
    }

private:
    const ModelBundle<T>* model_;
    const Tokenizer* tok_;
    Scheme scheme_;
};

/// o2 = f(BERT(Q) || BERT(C)): the candidate is scored without seeing the others.
template <class T>
double sep_nc_score(const ModelBundle<T>& model, const Tokenizer& tok, std::string_view question,
                    std::string_view candidate) {
    const auto& sp = tok.specials();
    const auto q = model.encode(assemble_question_input(tok.encode(question), sp), nullptr, false).cls();
    const auto c = model.encode(assemble_candidate_input(tok.encode(candidate), sp), nullptr, false).cls();
    return static_cast<double>(match_score(model, q, c));
}

/// o3 = f(BERT(Q || P_m) || BERT(C)) with per-candidate position resets in P_m.
template <class T>
double sep_c_score(const ModelBundle<T>& model, const Tokenizer& tok, std::string_view question,
                   const CandidateValues& candidates, std::string_view candidate) {
    if (std::find(candidates.begin(), candidates.end(), candidate) == candidates.end()) {
        throw Error(ErrorKind::invalid_argument, "candidate '" + std::string(candidate) + "' not in the candidate set");
    }
    const auto& sp = tok.specials();
    const auto joint = assemble_qa_input(tok.encode(question), encode_candidates(candidates, tok), sp,
                                         separator_id(tok), AnswerPositions::reset_per_candidate);
    const auto ctx = model.encode(joint, nullptr, false).cls();
    const auto c = model.encode(assemble_candidate_input(tok.encode(candidate), sp), nullptr, false).cls();
    return static_cast<double>(match_score(model, ctx, c));
}

// ---------------------------------------------------------------------------
// Training objective per scheme

/// Forward and optional backward pass for one problem. ORIG and AUG use 5-way
/// cross-entropy; the SEP schemes average binary cross-entropy over the five
/// (context, candidate) pairs. Parameter gradients accumulate into the bundle.
/// `negatives` below 4 subsamples the wrong candidates for the SEP schemes,
/// drawing them from `dropout_rng`.
template <class T>
T scheme_loss(ModelBundle<T>& model, const Tokenizer& tok, const QaItem& item, Scheme scheme, Rng* dropout_rng,
              bool backward, std::size_t negatives = kNumOptions - 1) {
    const auto& sp = tok.specials();
    if (!uses_match_head(scheme)) {
        const auto in = assemble_qa_input(item.question, item.candidates, sp, separator_id(tok));
        auto enc = model.encode(in, dropout_rng, backward);
        auto lg = qa_loss(model, RowVec<T>(enc.cls()), item.correct, backward);
        if (backward) {
            Mat<T> d = Mat<T>::Zero(enc.states.rows(), enc.states.cols());
            d.row(0) = lg.dinput.row(0);
            model.encode_backward(enc.cache, d);
        }
        return lg.loss;
    }

    const EncodedInput ctx_in = scheme == Scheme::sep_nc
                                    ? assemble_question_input(item.question, sp)
                                    : assemble_qa_input(item.question, item.candidates, sp, separator_id(tok),
                                                        AnswerPositions::reset_per_candidate);
    auto ctx = model.encode(ctx_in, dropout_rng, backward);
    const RowVec<T> ctx_cls = ctx.cls();
    RowVec<T> dctx = RowVec<T>::Zero(ctx_cls.cols());
    std::vector<std::size_t> pairs{item.correct};
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        if (i != item.correct) pairs.push_back(i);
    }
    negatives = std::min(negatives, kNumOptions - 1);
    if (negatives < kNumOptions - 1) {
        if (!dropout_rng) throw Error(ErrorKind::invalid_argument, "negative subsampling needs an rng");
        std::shuffle(pairs.begin() + 1, pairs.end(), *dropout_rng);
        pairs.resize(1 + negatives);
    }
    const T weight = T(1) / static_cast<T>(pairs.size());
    T total = T(0);
    for (auto i : pairs) {
        auto cand = model.encode(assemble_candidate_input(item.candidates[i], sp), dropout_rng, backward);
        auto lg = match_loss(model, ctx_cls, RowVec<T>(cand.cls()), i == item.correct, backward, weight);
        total += lg.loss;
        if (backward) {
            dctx += lg.dfirst;
            Mat<T> dc = Mat<T>::Zero(cand.states.rows(), cand.states.cols());
            dc.row(0) = lg.dsecond;
            model.encode_backward(cand.cache, dc);
        }
    }
    if (backward) {
        Mat<T> d = Mat<T>::Zero(ctx.states.rows(), ctx.states.cols());
        d.row(0) = dctx;
        model.encode_backward(ctx.cache, d);
    }
    return total * weight;
}

// ---------------------------------------------------------------------------
// Prediction dump: one JSON object per line.

struct Prediction {
    std::string problem_id;
    Scheme scheme = Scheme::orig;
    Scores scores{};
    std::size_t chosen = 0;
    std::size_t correct = 0;

    bool solved() const { return chosen == correct; }
};

inline nlohmann::json to_json(const Prediction& p) {
    return {{"problem_id", p.problem_id},
            {"scheme", to_string(p.scheme)},
            {"scores", p.scores},
            {"chosen", std::string(1, label_letter(p.chosen))},
            {"correct", std::string(1, label_letter(p.correct))}};
}

inline std::size_t parse_label_field(const nlohmann::json& j) {
    if (j.is_number_integer()) {
        const auto v = j.get<long long>();
        if (v < 0 || v >= static_cast<long long>(kNumOptions)) throw Error(ErrorKind::invalid_correct_label, j.dump());
        return static_cast<std::size_t>(v);
    }
    const auto s = j.get<std::string>();
    const auto idx = s.size() == 1 ? label_index(s[0]) : std::nullopt;
    if (!idx) throw Error(ErrorKind::invalid_correct_label, "'" + s + "' is not an option letter");
    return *idx;
}

inline Prediction prediction_from_json(const nlohmann::json& j) {
    Prediction p;
    try {
        p.problem_id = j.at("problem_id").get<std::string>();
        p.scheme = parse_scheme(j.value("scheme", std::string("ORIG")));
        const auto& s = j.at("scores");
        if (!s.is_array() || s.size() != kNumOptions) {
            throw Error(ErrorKind::missing_field, "prediction " + p.problem_id + " needs 5 scores");
        }
        for (std::size_t i = 0; i < kNumOptions; ++i) p.scores[i] = s[i].get<double>();
        p.chosen = j.contains("chosen") ? parse_label_field(j.at("chosen")) : argmax_lowest(p.scores);
        p.correct = parse_label_field(j.at("correct"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::missing_field, std::string("bad prediction record: ") + e.what());
    }
    return p;
}

inline Prediction make_prediction(const std::string& id, const ScoredAnswer& s, std::size_t correct) {
    return {id, s.scheme, s.scores, s.chosen, correct};
}

template <class T>
std::vector<Prediction> predict(const AnswerScorer<T>& scorer, const std::vector<Problem>& problems) {
    std::vector<Prediction> out;
    out.reserve(problems.size());
    for (const auto& p : problems) out.push_back(make_prediction(p.id, scorer.score(p), p.correct_index()));
    return out;
}

inline void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    for (const auto& p : preds) out << to_json(p).dump() << '\n';
}

inline std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
    std::vector<Prediction> out;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::io, path.string() + ": " + e.what());
        }
        out.push_back(prediction_from_json(j));
    }
    return out;
}

}  // namespace mwp
