#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mwp/encoder.hpp"
#include "mwp/pretext.hpp"

// Finite-difference check of the hand-written backward pass. The objective
// sums every head's loss over two fixed inputs so each parameter is reachable.

namespace mwp::fixtures {

struct GradCase {
    EncodedInput first;
    EncodedInput second;
    std::vector<MlmTarget> targets;
    OrderLabel order = OrderLabel::swapped;
    MatchLabel align = MatchLabel::mismatched;
    std::size_t correct = 2;
    bool match = true;
};

inline double combined_loss(ModelBundle<double>& m, const GradCase& c, bool backward) {
    auto a = m.encode(c.first, nullptr, backward);
    auto b = m.encode(c.second, nullptr, backward);
    const RowVec<double> ca = a.cls(), cb = b.cls();
    const auto mlm = mlm_loss(m, a.states, c.targets, backward);
    const auto ord = order_loss(m, ca, c.order, backward);
    const auto ali = align_loss(m, ca, c.align, backward);
    const auto qa = qa_loss(m, ca, c.correct, backward);
    const auto mt = match_loss(m, ca, cb, c.match, backward);
    if (backward) {
        Mat<double> da = mlm.dinput;
        da.row(0) += ord.dinput + ali.dinput + qa.dinput + mt.dfirst;
        m.encode_backward(a.cache, da);
        Mat<double> db = Mat<double>::Zero(b.states.rows(), b.states.cols());
        db.row(0) += mt.dsecond;
        m.encode_backward(b.cache, db);
    }
    return mlm.loss + ord.loss + ali.loss + qa.loss + mt.loss;
}

struct GradCheckEntry {
    std::string name;
    Eigen::Index index;
    double analytic;
    double numeric;
    double rel;
};

/// Relative error with a floor on the denominator so entries whose true
/// gradient is zero (e.g. attention key biases) compare on absolute error.
inline double relative_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences on `count` entries: tensors are drawn uniformly, then an
/// entry; embedding tables only offer rows the inputs use.
inline std::vector<GradCheckEntry> grad_check(ModelBundle<double>& m, const GradCase& c, std::size_t count, Rng& rng,
                                              double h = 1e-5) {
    m.zero_grad();
    combined_loss(m, c, true);
    std::vector<std::string> names;
    for (const auto& [name, _] : m.params()) names.push_back(name);

    auto used_rows = [&](const std::string& name) {
        std::vector<int> rows;
        for (const auto* in : {&c.first, &c.second}) {
            const auto& src = name == "embeddings.token" ? in->ids : name == "embeddings.position" ? in->positions : in->segments;
            rows.insert(rows.end(), src.begin(), src.end());
        }
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        return rows;
    };

    std::vector<GradCheckEntry> out;
    for (std::size_t k = 0; k < count; ++k) {
        const auto& name = names[uniform_index(rng, names.size())];
        auto& p = m.params().at(name);
        Eigen::Index idx = 0;
        if (name.rfind("embeddings.", 0) == 0 && name.find(".ln.") == std::string::npos) {
            const auto rows = used_rows(name);
            const auto r = rows[uniform_index(rng, rows.size())];
            idx = static_cast<Eigen::Index>(r) * p.value.cols() +
                  static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(p.value.cols())));
        } else {
            idx = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(p.value.size())));
        }
        const double orig = p.value.data()[idx];
        p.value.data()[idx] = orig + h;
        const double up = combined_loss(m, c, false);
        p.value.data()[idx] = orig - h;
        const double down = combined_loss(m, c, false);
        p.value.data()[idx] = orig;
        const double numeric = (up - down) / (2 * h);
        const double analytic = p.grad.data()[idx];
        out.push_back({name, idx, analytic, numeric, relative_error(analytic, numeric)});
    }
    return out;
}

/// Two-layer double-precision toy with every head attached and dropout off.
inline ModelBundle<double> grad_check_model(std::size_t vocab, std::uint64_t seed) {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.hidden = 16;
    cfg.ff = 32;
    cfg.vocab = vocab;
    cfg.max_positions = 32;
    cfg.dropout = 0.0;
    cfg.init_std = 0.3;
    cfg.layer_norm_eps = 1e-12;
    ModelBundle<double> m(cfg, seed);
    for (auto h : kAllHeads) m.add_head(h, seed);
    return m;
}

inline GradCase grad_check_case(std::size_t vocab, Rng& rng) {
    GradCase c;
    auto make = [&](std::size_t n) {
        EncodedInput in;
        in.push(2, 0, 0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            in.push(6 + static_cast<TokenId>(uniform_index(rng, vocab - 6)), i < n / 2 ? 0 : 1, 0);
        }
        in.push(3, 1, 0);
        in.renumber();
        return in;
    };
    c.first = make(9);
    c.second = make(6);
    c.targets = {{2, c.first.ids[2]}, {6, c.first.ids[6]}};
    c.first.ids[2] = 4;
    c.first.ids[6] = 4;
    c.correct = uniform_index(rng, 5);
    return c;
}

}  // namespace mwp::fixtures
