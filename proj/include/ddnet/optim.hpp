#pragma once

// Adam with bias correction.

#include "ddnet/tensor.hpp"

namespace ddnet {

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m, v;  // per-parameter moment arrays
    long t = 0;
    T beta1 = T(0.9), beta2 = T(0.999), epsilon = T(1e-8);

    explicit AdamState(const std::vector<Parameter<T>>& params) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (const auto& p : params) {
            m.emplace_back(p.value.numel(), T(0));
            v.emplace_back(p.value.numel(), T(0));
        }
    }
};

template <typename T>
void adam_step(std::vector<Parameter<T>>& params, AdamState<T>& state, T lr) {
    if (params.size() != state.m.size())
        throw std::invalid_argument("adam_step: state/parameter mismatch");
    ++state.t;
    const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.t));
    const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.t));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& value = params[p].value;
        if (!value.has_grad())
            throw std::invalid_argument("adam_step: parameter " +
                                        params[p].name + " has no gradient");
        const auto& g = value.grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        auto& theta = value.data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace ddnet
