#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "gmark/tensor.hpp"

// Shared helpers for the test binaries: random tensors and the central
// finite-difference gradient oracle.
namespace testsupport {

using gmark::Shape;
using gmark::Tensor;

// kink_margin pushes samples away from 0 so subgradient points (relu, abs)
// never land inside the finite-difference stencil
inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0, bool requires_grad = true,
                                    double kink_margin = 0.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(static_cast<size_t>(gmark::shape_numel(shape)));
    for (auto& v : data) {
        v = dist(rng);
        if (kink_margin > 0.0 && std::abs(v) < kink_margin)
            v = v < 0.0 ? v - kink_margin : v + kink_margin;
    }
    return Tensor<double>::from_data(std::move(shape), std::move(data), requires_grad);
}

// ||a - f||2 / max(||a||2 + ||f||2, tiny): zero when both gradients vanish
inline double grad_disagreement(const std::vector<double>& analytic,
                                const std::vector<double>& fd) {
    double dn = 0.0, an = 0.0, fn = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - fd[i];
        dn += d * d;
        an += analytic[i] * analytic[i];
        fn += fd[i] * fd[i];
    }
    return std::sqrt(dn) / std::max(std::sqrt(an) + std::sqrt(fn), 1e-12);
}

// Worst per-leaf disagreement between backward() and central differences.
// `build` must rebuild the whole graph from the leaves' current data.
inline double max_grad_disagreement(const std::function<Tensor<double>()>& build,
                                    std::vector<Tensor<double>> leaves, double h = 1e-5) {
    // grads accumulate across backward calls, so clear any residue from
    // earlier checks that shared these leaves
    for (auto& leaf : leaves)
        if (leaf.has_grad()) leaf.zero_grad();
    auto loss = build();
    gmark::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves)
        analytic.push_back(leaf.has_grad() ? leaf.grad()
                                           : std::vector<double>(leaf.data().size(), 0.0));
    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        std::vector<double> fd(leaf.data().size());
        for (size_t i = 0; i < fd.size(); ++i) {
            const double orig = leaf.data()[i];
            leaf.data()[i] = orig + h;
            const double up = build().value();
            leaf.data()[i] = orig - h;
            const double down = build().value();
            leaf.data()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        worst = std::max(worst, grad_disagreement(analytic[li], fd));
    }
    return worst;
}

}  // namespace testsupport
