#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mwp/error.hpp"
#include "mwp/random.hpp"

namespace mwp {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
struct Param {
    Mat<T> value;
    Mat<T> grad;

    Eigen::Index size() const { return value.size(); }
};

/// Named parameter tensors in name order. Node-based storage keeps references
/// stable while heads are attached or dropped.
template <class T>
class ParamStore {
public:
    Param<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        auto [it, inserted] = params_.try_emplace(name);
        if (!inserted) {
            throw Error(ErrorKind::invalid_argument, "duplicate parameter " + name);
        }
        it->second.value = Mat<T>::Zero(rows, cols);
        it->second.grad = Mat<T>::Zero(rows, cols);
        return it->second;
    }

    Param<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error(ErrorKind::invalid_argument, "no parameter " + name);
        return it->second;
    }
    const Param<T>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error(ErrorKind::invalid_argument, "no parameter " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    void erase_prefix(std::string_view prefix) {
        for (auto it = params_.begin(); it != params_.end();) {
            if (std::string_view(it->first).starts_with(prefix)) {
                it = params_.erase(it);
            } else {
                ++it;
            }
        }
    }

    void zero_grad() {
        for (auto& [_, p] : params_) p.grad.setZero();
    }

    std::size_t count(std::string_view prefix = {}) const {
        std::size_t n = 0;
        for (const auto& [name, p] : params_) {
            if (std::string_view(name).starts_with(prefix)) n += static_cast<std::size_t>(p.size());
        }
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t tensors() const { return params_.size(); }

private:
    std::map<std::string, Param<T>> params_;
};

/// Normal(0, std) truncated to two standard deviations.
template <class T>
void truncated_normal(Mat<T>& m, double std, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        double z = dist(rng);
        while (std::abs(z) > 2.0) z = dist(rng);
        m.data()[i] = static_cast<T>(z * std);
    }
}

}  // namespace mwp
