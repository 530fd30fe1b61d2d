#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cst/datagen.hpp"
#include "cst/losses.hpp"
#include "cst/matrix.hpp"
#include "cst/model.hpp"

namespace cst {

/// 1.0, 1.1, ..., 2.0
std::vector<double> default_alpha_grid();

struct TsallisConfig {
    double alpha = 2.0;
    std::vector<double> grid = default_alpha_grid();
    double weight = 1.0;

    /// Grid nonempty, ascending, inside [1, 2]; alpha in (0, 2]; weight >= 0.
    void validate() const;
};

/**
 * S_α(y) = (1 − Σ y_i^α) / (α − 1), with the Gibbs entropy −Σ y_i ln y_i at
 * α = 1. Throws std::invalid_argument if y is not on the simplex (1e-8).
 */
double tsallis_entropy(std::span<const double> y, double alpha);

/// ∂S_α/∂y_i = −α y_i^{α−1} / (α − 1); at α = 1, −(1 + ln y_i) with y_i clamped away from 0.
std::vector<double> tsallis_grad(std::span<const double> y, double alpha);

/// weight · mean over rows of S_α(row); grad is w.r.t. probs. Empty batch throws.
LossAndGrad tsallis_batch_loss(const Matrix& probs, const TsallisConfig& cfg);
/// Same loss, with the gradient pulled back through the softmax to the logits.
LossAndGrad tsallis_logit_loss(const Matrix& logits, const TsallisConfig& cfg);

struct InnerBudget {
    std::size_t steps = 200;
    double learning_rate = 0.1;
    double ridge_lambda = 1e-4;
    /// Only the first max_rows rows of each dataset enter the trials.
    std::size_t max_rows = 256;
};

struct AlphaSelection {
    double alpha = 0.0;
    std::vector<double> grid;
    std::vector<double> scores;  ///< Source loss of the trial target head; NaN when skipped.
    std::vector<std::string> warnings;
};

class SelectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Picks the entropic index for the coming epoch.
 *
 * For each α in cfg.grid, a copy of the "source" head is trained on the
 * frozen features (source cross-entropy + α-Tsallis on the target), its
 * argmax target labels fit a closed-form ridge head, and that head's source
 * cross-entropy is the score. Lowest score wins; near-ties go to the larger α.
 * The extractor is never modified.
 */
AlphaSelection select_alpha(const MlpModel& model, const Dataset& source, const Dataset& target,
                            const TsallisConfig& cfg, const InnerBudget& budget = {});

}  // namespace cst
