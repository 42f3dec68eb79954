#pragma once

#include <cmath>
#include <vector>

#include "gmark/tensor.hpp"

namespace gmark {

// Per-parameter Adam moment buffers. Call init() once with the parameter
// list; shapes are checked on every step.
template <class S>
struct AdamState {
    std::vector<std::vector<S>> first_moment;
    std::vector<std::vector<S>> second_moment;
    long long step_count = 0;
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S epsilon = S(1e-8);

    void init(const std::vector<Tensor<S>>& params) {
        first_moment.clear();
        second_moment.clear();
        for (const auto& p : params) {
            first_moment.emplace_back(p.data().size(), S(0));
            second_moment.emplace_back(p.data().size(), S(0));
        }
        step_count = 0;
    }
};

// One bias-corrected Adam update. Parameters with no populated gradient are
// treated as zero-gradient (their moments still decay).
template <class S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& state, S lr) {
    if (params.size() != state.first_moment.size())
        throw ShapeError("adam_step: state holds " + std::to_string(state.first_moment.size()) +
                         " buffers for " + std::to_string(params.size()) + " params");
    state.step_count += 1;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta1),
                                                 static_cast<double>(state.step_count)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta2),
                                                 static_cast<double>(state.step_count)));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].data();
        auto& m = state.first_moment[pi];
        auto& v = state.second_moment[pi];
        if (m.size() != data.size())
            throw ShapeError("adam_step: param " + std::to_string(pi) + " size " +
                             std::to_string(data.size()) + " != state size " +
                             std::to_string(m.size()));
        const bool has_grad = params[pi].has_grad();
        const std::vector<S>* grad = has_grad ? &params[pi].grad() : nullptr;
        for (size_t i = 0; i < data.size(); ++i) {
            const S g = has_grad ? (*grad)[i] : S(0);
            m[i] = state.beta1 * m[i] + (S(1) - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (S(1) - state.beta2) * g * g;
            const S mhat = m[i] / bc1;
            const S vhat = v[i] / bc2;
            data[i] -= lr * mhat / (static_cast<S>(std::sqrt(static_cast<double>(vhat))) +
                                    state.epsilon);
        }
    }
}

}  // namespace gmark
