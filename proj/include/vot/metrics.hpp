#pragma once

#include "vot/config.hpp"
#include "vot/tensor.hpp"

namespace vot {

// Mean squared cell-wise difference over the 12 x 16 grid.
inline double prediction_error(const Tensor<float>& truth, const Tensor<float>& pred) {
    const Shape want{kGridRows, kGridCols};
    if (truth.shape() != want || pred.shape() != want)
        throw ShapeError("prediction_error: grids must be " + shape_str(want) + ", got " +
                         shape_str(truth.shape()) + " and " + shape_str(pred.shape()));
    double acc = 0.0;
    for (std::int64_t i = 0; i < truth.numel(); ++i) {
        const double d = static_cast<double>(truth[i]) - static_cast<double>(pred[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(kGridRows * kGridCols);
}

// Transferred-model PE minus the scratch-trained PE on the same eval set.
// Positive values mean the transfer generalizes worse than scratch training.
inline double generation_gap(double pe_new, double pe_previous) { return pe_new - pe_previous; }

}  // namespace vot
