#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "deepred/tensor.hpp"

namespace deepred {

/// Bias-corrected adaptive-moment gradient descent over a flat list of
/// parameter tensors.
template <class T>
struct OptimizerStateT {
    std::vector<TensorT<T>> first_moment;
    std::vector<TensorT<T>> second_moment;
    std::size_t step = 0;
    T learning_rate = T(0.001);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);

    static OptimizerStateT init(const std::vector<TensorT<T>>& params, T learning_rate,
                                T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
        OptimizerStateT s;
        s.learning_rate = learning_rate;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.eps = eps;
        for (const auto& p : params) {
            s.first_moment.emplace_back(p.shape());
            s.second_moment.emplace_back(p.shape());
        }
        return s;
    }
};

using OptimizerState = OptimizerStateT<double>;

template <class T>
void adam_step(std::vector<TensorT<T>>& params, const std::vector<TensorT<T>>& grads,
               OptimizerStateT<T>& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
    state.step += 1;
    const T bc1 = T(1) - std::pow(state.beta1, T(state.step));
    const T bc2 = T(1) - std::pow(state.beta2, T(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        params[p].check_congruent(grads[p], "adam_step");
        auto& m = state.first_moment[p];
        auto& v = state.second_moment[p];
        auto& w = params[p];
        const auto& g = grads[p];
        for (std::size_t i = 0; i < w.numel(); ++i) {
            m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g[i] * g[i];
            w[i] -= state.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
        }
    }
}

}  // namespace deepred
