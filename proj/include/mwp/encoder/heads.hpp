#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "mwp/encoder/model.hpp"
#include "mwp/encoder/ops.hpp"

namespace mwp {

/// A loss value plus the gradient with respect to the head's input. Parameter
/// gradients are accumulated into the bundle only when `backward` was requested.
template <class T>
struct LossGrad {
    T loss = T(0);
    Mat<T> dinput;
    bool valid = true;  // false when the loss has nothing to score (e.g. no MLM targets)
};

template <class T>
struct PairLossGrad {
    T loss = T(0);
    RowVec<T> dfirst;
    RowVec<T> dsecond;
};

// ---------------------------------------------------------------------------
// MLM: dense + GELU + LayerNorm transform, then a vocabulary decoder.

template <class T>
Mat<T> mlm_logits(const ModelBundle<T>& m, const Mat<T>& states, const std::vector<std::size_t>& positions) {
    const auto& ps = m.params();
    Mat<T> x(static_cast<Eigen::Index>(positions.size()), states.cols());
    for (std::size_t i = 0; i < positions.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = states.row(static_cast<Eigen::Index>(positions[i]));
    Mat<T> h = ops::activate(ops::affine(x, ps.at("mlm.transform.weight"), ps.at("mlm.transform.bias")), Activation::gelu);
    Mat<T> n = ops::layer_norm(h, ps.at("mlm.ln.gamma"), ps.at("mlm.ln.beta"), m.config().layer_norm_eps,
                               static_cast<ops::LayerNormCache<T>*>(nullptr));
    return ops::affine(n, ps.at("mlm.decoder.weight"), ps.at("mlm.decoder.bias"));
}

/// Mean cross-entropy over masked positions only. Empty targets contribute 0
/// and come back flagged invalid.
template <class T>
LossGrad<T> mlm_loss(ModelBundle<T>& m, const Mat<T>& states, const std::vector<MlmTarget>& targets, bool backward) {
    LossGrad<T> out;
    if (backward) out.dinput = Mat<T>::Zero(states.rows(), states.cols());
    if (targets.empty()) {
        out.valid = false;
        return out;
    }
    auto& ps = m.params();
    auto& tw = ps.at("mlm.transform.weight");
    auto& tb = ps.at("mlm.transform.bias");
    auto& g = ps.at("mlm.ln.gamma");
    auto& b = ps.at("mlm.ln.beta");
    auto& dw = ps.at("mlm.decoder.weight");
    auto& db = ps.at("mlm.decoder.bias");

    const auto M = static_cast<Eigen::Index>(targets.size());
    Mat<T> x(M, states.cols());
    for (Eigen::Index i = 0; i < M; ++i) x.row(i) = states.row(static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)].position));
    Mat<T> pre = ops::affine(x, tw, tb);
    Mat<T> act = ops::activate(pre, Activation::gelu);
    ops::LayerNormCache<T> ln;
    Mat<T> n = ops::layer_norm(act, g, b, m.config().layer_norm_eps, &ln);
    Mat<T> logits = ops::affine(n, dw, db);

    Mat<T> dlogits = logits;
    ops::softmax_rows(dlogits);
    T loss = T(0);
    for (Eigen::Index i = 0; i < M; ++i) {
        const auto y = targets[static_cast<std::size_t>(i)].original;
        const T mx = logits.row(i).maxCoeff();
        const T lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        loss += lse - logits(i, y);
        dlogits(i, y) -= T(1);
    }
    const T inv = T(1) / static_cast<T>(M);
    out.loss = loss * inv;
    if (!backward) return out;

    dlogits *= inv;
    Mat<T> dn = ops::affine_backward(dlogits, n, dw, db);
    Mat<T> dact = ops::layer_norm_backward(dn, ln, g, b);
    Mat<T> dpre = ops::activate_backward(dact, pre, Activation::gelu);
    Mat<T> dx = ops::affine_backward(dpre, x, tw, tb);
    for (Eigen::Index i = 0; i < M; ++i) {
        out.dinput.row(static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)].position)) += dx.row(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Single-logit heads on [CLS]: reasoning order (ROP/NROP) and question-rationale alignment.

template <class T>
T binary_logit(const ModelBundle<T>& m, Head head, const RowVec<T>& cls) {
    const std::string p(head_prefix(head));
    const auto& w = m.params().at(p + "weight");
    const auto& b = m.params().at(p + "bias");
    return (cls * w.value)(0, 0) + b.value(0, 0);
}

/// Binary cross-entropy with the positive class meaning "swapped" / "mismatched".
template <class T>
LossGrad<T> binary_loss(ModelBundle<T>& m, Head head, const RowVec<T>& cls, bool positive, bool backward) {
    const T logit = binary_logit(m, head, cls);
    auto [loss, dlogit] = ops::bce_with_logit(logit, positive ? T(1) : T(0));
    LossGrad<T> out;
    out.loss = loss;
    if (backward) {
        const std::string p(head_prefix(head));
        auto& w = m.params().at(p + "weight");
        auto& b = m.params().at(p + "bias");
        w.grad.col(0) += cls.transpose() * dlogit;
        b.grad(0, 0) += dlogit;
        out.dinput = w.value.transpose() * dlogit;
    }
    return out;
}

template <class T>
LossGrad<T> order_loss(ModelBundle<T>& m, const RowVec<T>& cls, OrderLabel label, bool backward) {
    return binary_loss(m, Head::order, cls, label == OrderLabel::swapped, backward);
}

template <class T>
LossGrad<T> align_loss(ModelBundle<T>& m, const RowVec<T>& cls, MatchLabel label, bool backward) {
    return binary_loss(m, Head::align, cls, label == MatchLabel::mismatched, backward);
}

// ---------------------------------------------------------------------------
// Five-way answer classifier: one affine layer plus softmax.

template <class T>
std::array<T, kNumOptions> qa_forward(const ModelBundle<T>& m, const RowVec<T>& cls) {
    const auto& w = m.params().at("qa.weight");
    const auto& b = m.params().at("qa.bias");
    Mat<T> logits = cls * w.value + b.value;
    ops::softmax_rows(logits);
    std::array<T, kNumOptions> p{};
    for (std::size_t i = 0; i < kNumOptions; ++i) p[i] = logits(0, static_cast<Eigen::Index>(i));
    return p;
}

template <class T>
LossGrad<T> qa_loss(ModelBundle<T>& m, const RowVec<T>& cls, std::size_t correct, bool backward) {
    auto& w = m.params().at("qa.weight");
    auto& b = m.params().at("qa.bias");
    Mat<T> logits = cls * w.value + b.value;
    const T mx = logits.maxCoeff();
    const T lse = mx + std::log((logits.array() - mx).exp().sum());
    LossGrad<T> out;
    out.loss = lse - logits(0, static_cast<Eigen::Index>(correct));
    if (backward) {
        Mat<T> d = logits;
        ops::softmax_rows(d);
        d(0, static_cast<Eigen::Index>(correct)) -= T(1);
        w.grad.noalias() += cls.transpose() * d;
        b.grad += d;
        out.dinput = d * w.value.transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Two-layer matching perceptron on [first ; second] embeddings, sigmoid output.

template <class T>
T match_logit(const ModelBundle<T>& m, const RowVec<T>& first, const RowVec<T>& second) {
    const auto& ps = m.params();
    const auto d = first.cols();
    RowVec<T> x(2 * d);
    x << first, second;
    Mat<T> pre = ops::affine(Mat<T>(x), ps.at("match.hidden.weight"), ps.at("match.hidden.bias"));
    Mat<T> act = ops::activate(pre, m.config().match_activation);
    return (act * ps.at("match.out.weight").value)(0, 0) + ps.at("match.out.bias").value(0, 0);
}

template <class T>
T match_score(const ModelBundle<T>& m, const RowVec<T>& first, const RowVec<T>& second) {
    return ops::sigmoid(match_logit(m, first, second));
}

template <class T>
PairLossGrad<T> match_loss(ModelBundle<T>& m, const RowVec<T>& first, const RowVec<T>& second, bool is_match,
                           bool backward, T weight = T(1)) {
    auto& ps = m.params();
    auto& hw = ps.at("match.hidden.weight");
    auto& hb = ps.at("match.hidden.bias");
    auto& ow = ps.at("match.out.weight");
    auto& ob = ps.at("match.out.bias");
    const auto d = first.cols();
    Mat<T> x(1, 2 * d);
    x << first, second;
    Mat<T> pre = ops::affine(x, hw, hb);
    Mat<T> act = ops::activate(pre, m.config().match_activation);
    const T logit = (act * ow.value)(0, 0) + ob.value(0, 0);
    auto [loss, dlogit] = ops::bce_with_logit(logit, is_match ? T(1) : T(0));
    PairLossGrad<T> out;
    out.loss = loss;
    if (backward) {
        Mat<T> dlog(1, 1);
        dlog(0, 0) = dlogit * weight;
        Mat<T> dact = ops::affine_backward(dlog, act, ow, ob);
        Mat<T> dpre = ops::activate_backward(dact, pre, m.config().match_activation);
        Mat<T> dx = ops::affine_backward(dpre, x, hw, hb);
        out.dfirst = dx.leftCols(d);
        out.dsecond = dx.rightCols(d);
    }
    return out;
}

}  // namespace mwp
