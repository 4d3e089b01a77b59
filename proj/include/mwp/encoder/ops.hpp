#pragma once

#include <cmath>
#include <random>

#include "mwp/encoder/config.hpp"
#include "mwp/encoder/params.hpp"

// Forward/backward primitives on row-major activations (one row per token).

namespace mwp::ops {

template <class T>
struct LayerNormCache {
    Mat<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <class T>
Mat<T> layer_norm(const Mat<T>& x, const Param<T>& gamma, const Param<T>& beta, double eps, LayerNormCache<T>* cache) {
    const auto rows = x.rows();
    const auto d = static_cast<T>(x.cols());
    Mat<T> xhat(x.rows(), x.cols());
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const T mean = x.row(r).sum() / d;
        const auto centered = x.row(r).array() - mean;
        const T var = centered.square().sum() / d;
        const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std(r) = is;
        xhat.row(r) = centered * is;
    }
    Mat<T> y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LayerNormCache<T>& cache, Param<T>& gamma, Param<T>& beta) {
    gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    Mat<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const auto d = static_cast<T>(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const T mean_d = dxhat.row(r).sum() / d;
        const T mean_dx = (dxhat.row(r).array() * cache.xhat.row(r).array()).sum() / d;
        dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
    }
    return dx;
}

template <class T>
T activate(T x, Activation a) {
    switch (a) {
    case Activation::gelu: return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
    case Activation::relu: return x > T(0) ? x : T(0);
    case Activation::tanh: return std::tanh(x);
    }
    return x;
}

template <class T>
T activate_grad(T x, Activation a) {
    switch (a) {
    case Activation::gelu: {
        const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
        const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
        return cdf + x * pdf;
    }
    case Activation::relu: return x > T(0) ? T(1) : T(0);
    case Activation::tanh: {
        const T t = std::tanh(x);
        return T(1) - t * t;
    }
    }
    return T(1);
}

template <class T>
Mat<T> activate(const Mat<T>& x, Activation a) {
    return x.unaryExpr([a](T v) { return activate(v, a); });
}

template <class T>
Mat<T> activate_backward(const Mat<T>& dy, const Mat<T>& pre, Activation a) {
    return dy.cwiseProduct(pre.unaryExpr([a](T v) { return activate_grad(v, a); }));
}

/// y = x W + b
template <class T>
Mat<T> affine(const Mat<T>& x, const Param<T>& w, const Param<T>& b) {
    Mat<T> y = x * w.value;
    y.rowwise() += b.value.row(0);
    return y;
}

/// Accumulates dW, db and returns dx.
template <class T>
Mat<T> affine_backward(const Mat<T>& dy, const Mat<T>& x, Param<T>& w, Param<T>& b) {
    w.grad.noalias() += x.transpose() * dy;
    b.grad.row(0) += dy.colwise().sum();
    return dy * w.value.transpose();
}

/// Inverted dropout mask (entries 0 or 1/(1-p)); empty when inactive.
template <class T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
    if (!rng || p <= 0.0) return {};
    Mat<T> m(rows, cols);
    std::bernoulli_distribution keep(1.0 - p);
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*rng) ? scale : T(0);
    return m;
}

template <class T>
void apply_mask(Mat<T>& x, const Mat<T>& mask) {
    if (mask.size() != 0) x.array() *= mask.array();
}

template <class T>
void softmax_rows(Mat<T>& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
    }
}

template <class T>
T sigmoid(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

/// Binary cross-entropy on a logit; returns (loss, dloss/dlogit).
template <class T>
std::pair<T, T> bce_with_logit(T logit, T target) {
    const T loss = std::max(logit, T(0)) - logit * target + std::log1p(std::exp(-std::abs(logit)));
    return {loss, sigmoid(logit) - target};
}

}  // namespace mwp::ops
