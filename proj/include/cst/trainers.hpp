#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cst/datagen.hpp"
#include "cst/matrix.hpp"
#include "cst/model.hpp"
#include "cst/tsallis.hpp"

namespace cst {

enum class SelectionRule {
    none,
    confidence,  ///< keep rows whose max probability is >= threshold
    entropy,     ///< keep rows whose entropy / ln K is <= threshold
};

std::string to_string(SelectionRule r);
SelectionRule parse_selection_rule(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t iters_per_epoch = 20;
    std::size_t batch_size = 64;
    double learning_rate = 0.1;
    double lr_decay_factor = 0.1;
    /// Epochs between decays; 0 means ceil(2·epochs/3), i.e. one decay.
    std::size_t lr_decay_period = 0;
    double ridge_lambda = 1e-4;
    std::uint64_t seed = 0;
    TsallisConfig tsallis;
    /// CST only: run select_alpha every epoch; otherwise tsallis.alpha is used.
    bool select_alpha = true;
    InnerBudget alpha_budget;
    SelectionRule selection = SelectionRule::none;
    double selection_threshold = 0.9;
    /// Standard self-training: weight of the pseudo-label term.
    double target_weight = 1.0;

    void validate() const;
    double learning_rate_at(std::size_t epoch) const;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double source_loss = 0.0;
    double cycle_loss = 0.0;
    double tsallis_loss = 0.0;
    double target_acc = 0.0;
    double pl_tv = 0.0;
    double alpha = 0.0;
    double learning_rate = 0.0;
};

struct TrainReport {
    std::string method;
    std::vector<EpochRecord> epochs;

    /// epoch,source_loss,cycle_loss,tsallis_loss,target_acc,pl_tv,alpha
    void write_csv(std::ostream& out) const;
    nlohmann::json summary() const;
};

// --- building blocks ---------------------------------------------------------

struct PseudoLabels {
    std::vector<int> labels;
    std::vector<bool> selected;
    std::size_t selected_count() const;
};

/// Hard argmax labels from the "source" head, with the configured selection mask.
PseudoLabels forward_step(const MlpModel& model, const Matrix& target_x,
                          SelectionRule rule = SelectionRule::none, double threshold = 0.0);

/**
 * Closed-form target head θ̂_t = argmin ‖[H, 1]θ − Y‖² + λ‖θ‖² on one-hot
 * pseudo-labels, with the pathway from θ̂_t back to H.
 *
 * λ > 0 uses (AᵀA + λI)⁻¹AᵀY; λ = 0 uses the pseudo-inverse A⁺Y. The labels
 * are constants: pullback() differentiates through A only.
 */
class ClosedFormHead {
public:
    static ClosedFormHead fit(const Matrix& features, std::span<const int> labels,
                              std::size_t num_classes, double lambda);

    const LinearHead& head() const { return head_; }
    /// Stacked (m+1)×K solution, bias in the last row.
    const Matrix& theta() const { return theta_; }
    /// Given ∂L/∂θ̂_t as a LinearHead-shaped gradient, returns ∂L/∂H (n×m).
    Matrix pullback(const LinearHead& d_head) const;

private:
    Matrix design_;   // A = [H, 1]
    Matrix targets_;  // Y
    Matrix theta_;
    Matrix inverse_;  // (AᵀA + λI)⁻¹ or A⁺
    bool min_norm_ = false;
    LinearHead head_;
};

/// Reverse step: closed-form head on the selected rows of the target batch.
ClosedFormHead reverse_step(const MlpModel& model, const Matrix& target_x,
                            const PseudoLabels& pseudo, double lambda);

struct CstGradients {
    double source_loss = 0.0;
    double cycle_loss = 0.0;
    double tsallis_loss = 0.0;
    bool has_cycle = false;
    double total() const { return source_loss + cycle_loss + tsallis_loss; }
    std::vector<DenseLayer> d_extractor;  ///< ∇φ [source + cycle + Tsallis]
    LinearHead d_source_head;             ///< ∇θs [source + Tsallis]
};

/**
 * Losses and outer gradients of one CST step with pseudo-labels held fixed.
 * `tsallis.alpha` must already hold the selected index.
 */
CstGradients cst_gradients(const MlpModel& model, const Matrix& source_x,
                           std::span<const int> source_y, const Matrix& target_x,
                           const PseudoLabels& pseudo, const TsallisConfig& tsallis,
                           double ridge_lambda);

/// Objective value of cst_gradients alone (for line searches and finite differences).
double cst_objective(const MlpModel& model, const Matrix& source_x, std::span<const int> source_y,
                     const Matrix& target_x, const PseudoLabels& pseudo,
                     const TsallisConfig& tsallis, double ridge_lambda);

/// One simultaneous gradient step on φ and θs at rate `learning_rate`.
CstGradients cst_outer_update(MlpModel& model, const Matrix& source_x,
                              std::span<const int> source_y, const Matrix& target_x,
                              const PseudoLabels& pseudo, const TsallisConfig& tsallis,
                              double ridge_lambda, double learning_rate);

/// Full-dataset metrics recorded at the end of every epoch.
EpochRecord evaluate_epoch(const MlpModel& model, const Dataset& source, const Dataset* target,
                           const TsallisConfig& tsallis, double ridge_lambda);

// --- trainers ------------------------------------------------------------------

TrainReport train_cst(MlpModel& model, const Dataset& source, const Dataset& target,
                      const TrainConfig& cfg);
TrainReport train_standard_st(MlpModel& model, const Dataset& source, const Dataset& target,
                              const TrainConfig& cfg);
TrainReport train_source_only(MlpModel& model, const Dataset& source, const TrainConfig& cfg);
/// Source-only training that also reports target metrics (target labels read for reporting only).
TrainReport train_source_only(MlpModel& model, const Dataset& source, const Dataset& eval_target,
                              const TrainConfig& cfg);

}  // namespace cst
