#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cst/matrix.hpp"
#include "cst/model.hpp"

namespace cst {

struct LossAndGrad {
    double value = 0.0;
    Matrix grad;  ///< Same shape as the input the loss was taken of.
};

/// Mean softmax cross-entropy of logits against class ids; grad w.r.t. logits.
LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels);
/// Same, restricted to rows where mask[i] is true (mean over selected rows).
LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels,
                          const std::vector<bool>& mask);

/// Rows of {0,1} with a single 1 at the class column.
Matrix one_hot(std::span<const int> labels, std::size_t num_classes);

/// Pulls a gradient w.r.t. softmax probabilities back to the logits.
Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs);

/// Closed-form least-squares head on one-hot targets: [H, 1] θ ≈ Y.
/// The ridge penalty also covers the bias row.
LinearHead fit_ridge_head(const Matrix& features, std::span<const int> labels,
                          std::size_t num_classes, double lambda);

}  // namespace cst
