#pragma once

#include <vector>

#include "gmark/heatmap.hpp"
#include "gmark/ops.hpp"
#include "gmark/tensor.hpp"

namespace gmark {

// Scalar loss plus the per-landmark bracketed terms before the 1/n average.
struct LossValue {
    float value = 0.0f;
    std::vector<float> per_landmark;
};

namespace detail {

template <class S>
struct IndicatorTensors {
    std::vector<Tensor<S>> disk;        // 1 on the landmark disk
    std::vector<Tensor<S>> background;  // 1 off the disk
    std::vector<long long> disk_count;
    std::vector<long long> background_count;
};

template <class S>
IndicatorTensors<S> split_indicator(const IndicatorMask& ind) {
    IndicatorTensors<S> out;
    const long long per_map = static_cast<long long>(ind.grid) * ind.grid;
    for (int i = 0; i < ind.count; ++i) {
        const std::uint8_t* bits = ind.bits.data() + static_cast<size_t>(i) * per_map;
        std::vector<S> disk(static_cast<size_t>(per_map)), bg(static_cast<size_t>(per_map));
        long long ones = 0;
        for (long long j = 0; j < per_map; ++j) {
            disk[static_cast<size_t>(j)] = bits[j] ? S(1) : S(0);
            bg[static_cast<size_t>(j)] = bits[j] ? S(0) : S(1);
            ones += bits[j];
        }
        if (ones == 0 || ones == per_map)
            throw ValueError("weighted_loss: indicator for landmark " + std::to_string(i) +
                             " is degenerate (all " + (ones == 0 ? "0" : "1") +
                             "); normalizer would divide by zero");
        out.disk.push_back(Tensor<S>::from_data({ind.grid, ind.grid}, std::move(disk)));
        out.background.push_back(Tensor<S>::from_data({ind.grid, ind.grid}, std::move(bg)));
        out.disk_count.push_back(ones);
        out.background_count.push_back(per_map - ones);
    }
    return out;
}

}  // namespace detail

// The weighted two-term L1 heatmap loss, differentiable w.r.t. pred.
// Per landmark i the term is
//   1/2 * sum(disk_i * |pred_i - gt_i|) / |disk_i|
// + 1/2 * sum(bg_i   * |pred_i - gt_i|) / |bg_i|
// and the loss is the mean of the n terms, so it stays in [0,1] whenever
// all entries do. pred shape [n,G,G].
template <class S>
Tensor<S> weighted_loss_graph(const Tensor<S>& pred, const Tensor<S>& gt,
                              const IndicatorMask& ind, std::vector<S>* per_landmark = nullptr) {
    const Shape& ps = pred.shape();
    if (ps.size() != 3 || ps[0] != ind.count || ps[1] != ind.grid || ps[2] != ind.grid)
        throw ShapeError("weighted_loss: pred shape " + shape_str(ps) +
                         " does not match indicator (n=" + std::to_string(ind.count) +
                         ", G=" + std::to_string(ind.grid) + ")");
    if (!same_shape(ps, gt.shape()))
        throw ShapeError("weighted_loss: pred shape " + shape_str(ps) + " != gt shape " +
                         shape_str(gt.shape()));
    auto masks = detail::split_indicator<S>(ind);
    const int n = ind.count;
    if (per_landmark) per_landmark->clear();
    Tensor<S> total;
    for (int i = 0; i < n; ++i) {
        auto diff = abs(sub(select0(pred, i), select0(gt, i)));
        auto disk_term = scalar_mul(sum(mul(diff, masks.disk[static_cast<size_t>(i)])),
                                    S(0.5) / static_cast<S>(masks.disk_count[static_cast<size_t>(i)]));
        auto bg_term = scalar_mul(sum(mul(diff, masks.background[static_cast<size_t>(i)])),
                                  S(0.5) / static_cast<S>(masks.background_count[static_cast<size_t>(i)]));
        auto term = add(disk_term, bg_term);
        if (per_landmark) per_landmark->push_back(term.value());
        total = total.defined() ? add(total, term) : term;
    }
    return scalar_mul(total, S(1) / static_cast<S>(n));
}

// Plain regression baseline: mean over landmarks of ||pred_i - gt_i|| / G^2.
template <class S>
Tensor<S> plain_l1_loss_graph(const Tensor<S>& pred, const Tensor<S>& gt) {
    const Shape& ps = pred.shape();
    if (ps.size() != 3) throw ShapeError("plain_l1_loss: expected [n,G,G], got " + shape_str(ps));
    if (!same_shape(ps, gt.shape()))
        throw ShapeError("plain_l1_loss: pred shape " + shape_str(ps) + " != gt shape " +
                         shape_str(gt.shape()));
    const long long per_map = static_cast<long long>(ps[1]) * ps[2];
    return scalar_mul(sum(abs(sub(pred, gt))),
                      S(1) / static_cast<S>(ps[0] * per_map));
}

// Plain-buffer entry points used by evaluation and tests.
LossValue weighted_loss(const HeatmapStack& pred, const HeatmapStack& gt,
                        const IndicatorMask& ind);
float plain_l1_loss(const HeatmapStack& pred, const HeatmapStack& gt);

}  // namespace gmark
