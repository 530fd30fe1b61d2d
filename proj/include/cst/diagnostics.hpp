#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cst/datagen.hpp"
#include "cst/matrix.hpp"
#include "cst/rng.hpp"

namespace cst {

/// ½ Σ |c_i − c'_i|. Both inputs must be normalized (1e-8) and equally long.
double tv_distance(std::span<const double> c, std::span<const double> c2);

/// Class proportions of integer labels in [0, num_classes).
std::vector<double> label_histogram(std::span<const int> labels, std::size_t num_classes);

struct ErrorBound {
    double error_rate = 0.0;
    double d_tv = 0.0;
    bool holds = false;
};

/// joint(i, j) = P(Y = i, Ŷ = j). Checks P(Y ≠ Ŷ) ≥ d_TV(Y, Ŷ) − 1e-12.
ErrorBound error_lower_bound_check(const Matrix& joint);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  ///< From (0,0) to (1,1).
    double auc = 0.0;
};

/**
 * Threshold sweep: a sample is "selected" when score >= t, for t = +inf,
 * every distinct score in descending order, and -inf. Positives are the
 * correct samples. Needs at least one correct and one incorrect sample.
 */
RocCurve roc_curve(std::span<const double> scores, const std::vector<bool>& correct);

/// Largest minus second-largest entry of every row. Needs K >= 2.
std::vector<double> margin_scores(const Matrix& probs);
/// Max softmax probability per row.
std::vector<double> confidence_scores(const Matrix& probs);
/// Negated Gibbs entropy per row, so higher means more trusted.
std::vector<double> negative_entropy_scores(const Matrix& probs);

/// 1 for x <= 0, 1 − x/γ on (0, γ], 0 above γ.
double ramp_loss(double x, double gamma);
/// Ramp of the class-y margin v_y − max_{y'≠y} v_{y'}.
double margin_loss(std::span<const double> v, std::size_t y, double gamma);

/**
 * Margin objective of the confidence analysis, for reporting:
 * mean ramp margin loss of f_t on labeled source rows, plus mean ramp
 * inconsistency of f_t against f_s's argmax on target rows, plus
 * (1 − mean margin of f_t over both sets) / tau.
 */
double cst_margin_objective(const Matrix& ft_source, std::span<const int> source_labels,
                            const Matrix& ft_target, std::span<const int> fs_target_labels,
                            double gamma, double tau);

/// Fractions of `values` in `bins` equal-width bins over [0, 1]; 1.0 falls in the last bin.
std::vector<double> unit_histogram(std::span<const double> values, std::size_t bins = 20);

using ProbabilityFn = std::function<Matrix(const Matrix&)>;

struct RobustnessEstimate {
    double estimate = 0.0;  ///< Fraction of rows with at least one flipped probe.
    std::vector<bool> flipped;
};

/**
 * Sampled lower estimate of R(f): for each row, `probes` points uniform in
 * the Euclidean ξ-ball are classified and compared with the row's argmax.
 */
RobustnessEstimate empirical_robustness(const ProbabilityFn& model, const Matrix& x, double xi,
                                        std::size_t probes, RngStream& rng);

/// Lipschitz constant (Euclidean) valid for every softmax coordinate of
/// x ↦ softmax(xW + b): max_{i,j} ‖w_i − w_j‖ / 4 over columns of W.
double linear_softmax_lipschitz(const Matrix& weight);

struct DiagnosticsReport {
    std::vector<double> histogram_pseudo;
    std::vector<double> histogram_truth;
    double d_tv = 0.0;
    double error_rate = 0.0;
    std::map<std::string, RocCurve> roc;  ///< "confidence", "entropy"
    std::vector<double> margin_histogram;
    double robustness = 0.0;
    double robustness_radius = 0.0;

    nlohmann::json to_json() const;
    void write_roc_csv(std::ostream& out) const;
    void write_margin_csv(std::ostream& out) const;
};

struct DiagnoseOptions {
    double robustness_radius = 0.1;
    std::size_t robustness_probes = 8;
    std::size_t margin_bins = 20;
};

/// Pseudo-label diagnostics of `model` on `data` against its true labels.
DiagnosticsReport diagnose(const ProbabilityFn& model, const Dataset& data,
                           const DiagnoseOptions& options, RngStream& rng);

}  // namespace cst
