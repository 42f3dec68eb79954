#include "gmark/loss.hpp"

namespace gmark {

LossValue weighted_loss(const HeatmapStack& pred, const HeatmapStack& gt,
                        const IndicatorMask& ind) {
    if (pred.count != gt.count || pred.grid != gt.grid)
        throw ShapeError("weighted_loss: pred and gt stacks disagree");
    LossValue out;
    auto loss = weighted_loss_graph(to_tensor<float>(pred), to_tensor<float>(gt), ind,
                                    &out.per_landmark);
    out.value = loss.value();
    return out;
}

float plain_l1_loss(const HeatmapStack& pred, const HeatmapStack& gt) {
    if (pred.count != gt.count || pred.grid != gt.grid)
        throw ShapeError("plain_l1_loss: pred and gt stacks disagree");
    return plain_l1_loss_graph(to_tensor<float>(pred), to_tensor<float>(gt)).value();
}

}  // namespace gmark
