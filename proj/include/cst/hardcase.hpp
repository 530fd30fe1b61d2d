#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cst/datagen.hpp"
#include "cst/matrix.hpp"
#include "cst/model.hpp"
#include "cst/rng.hpp"

namespace cst {

/**
 * One zero-source-loss, minimum-norm quadratic net of the hard case.
 *
 * phi has two columns c·e₁ and c·e_l with c = 2^{1/6}; theta is
 * (+2^{-1/3}, −2^{-1/3}), so f(x) = x₁² − x_l². l is 1-based and lies in [2, d].
 */
struct HardCaseSolution {
    std::size_t l = 2;
    Matrix phi;
    std::vector<double> theta;
    double norm_sq = 0.0;

    QuadraticNet net() const { return {phi, theta}; }
};

/// Builds the solution for coordinate l without verification.
HardCaseSolution make_solution(std::size_t d, std::size_t l);

/// One solution per l in [2, d], each checked for zero residual on 1000 fresh source rows.
/// Throws NumericalError if a residual exceeds 1e-9 (a construction bug, not a data issue).
std::vector<HardCaseSolution> enumerate_solutions(std::size_t d, std::uint64_t verify_seed = 0);

/// Squared feature patterns 2^{1/3}·(x₁², x_l²) over the four corners of {0,1}².
struct FeatureLaw {
    std::array<std::array<double, 2>, 4> patterns;
    std::array<double, 4> masses;
};

/// Law of the learned features on the source for any enumerated solution.
FeatureLaw source_feature_law();

/// Empirical distribution of the solution's features over the corners of source_feature_law().
std::array<double, 4> feature_pattern_histogram(const HardCaseSolution& sol, const Matrix& x);

enum class Method { fa, st, cst };
std::string to_string(Method m);

struct TrialOutcome {
    Method method = Method::fa;
    std::size_t selected_l = 0;
    double err_q = 0.0;           ///< 0-1 error of the rounded prediction on a fresh target sample
    double err_q_analytic = 0.0;  ///< same, exactly on the target law
    double cycle_loss = 0.0;      ///< empirical cycle loss of the selected solution
    std::vector<double> tv_scores;     ///< per l, FA only
    std::vector<double> cycle_losses;  ///< per l, CST only
};

/// Mean of 1(round(f(x)) != y) over the rows of data.
double empirical_error(const HardCaseSolution& sol, const Dataset& data);
/// The same error under the exact target law.
double population_error(const HardCaseSolution& sol);

/// Min-norm least-squares head fitted to the solution's own rounded predictions on target.
std::vector<double> fit_target_head(const HardCaseSolution& sol, const Dataset& target);
/// Mean (θ_tᵀh(x) − y)² over source_eval, with h the solution's features.
double cycle_loss(const HardCaseSolution& sol, std::span<const double> theta_t,
                  const Dataset& source_eval);
/// The same loss under the exact source law.
double population_cycle_loss(const HardCaseSolution& sol, std::span<const double> theta_t);

/// Total variation between source_feature_law() and the solution's target feature histogram.
double fa_tv_score(const HardCaseSolution& sol, const Dataset& target);

/// Feature adaptation: smallest TV score wins, ties to the smallest l.
TrialOutcome fa_select(const std::vector<HardCaseSolution>& solutions, const Dataset& target,
                       const Dataset& eval_target);
/// Standard self-training: the solution it settles on is uniform over l.
TrialOutcome st_select(const std::vector<HardCaseSolution>& solutions, RngStream& rng,
                       const Dataset& eval_target);
/// Cycle self-training: smallest cycle loss on source_eval wins, ties to the smallest l.
TrialOutcome cst_select(const std::vector<HardCaseSolution>& solutions, const Dataset& target,
                        const Dataset& source_eval, const Dataset& eval_target);

struct SuiteConfig {
    std::size_t d = 10;
    std::size_t n_t = 100;
    std::size_t trials = 1000;
    std::uint64_t seed = 0;
    std::size_t source_eval_rows = 1000;
    std::size_t target_eval_rows = 1000;
    std::size_t parallel = 1;

    void validate() const;
};

struct TrialRecord {
    std::uint64_t seed = 0;
    TrialOutcome outcome;
};

struct MethodStats {
    std::size_t trials = 0;
    std::size_t successes = 0;  ///< analytic Err_Q == 0
    double success_rate = 0.0;
    double std_error = 0.0;
    double ci_low = 0.0;   ///< Wilson 95%
    double ci_high = 0.0;
    double mean_err_q = 0.0;
    std::map<std::size_t, std::size_t> selected_counts;
};

struct SuiteResult {
    SuiteConfig config;
    std::vector<TrialRecord> rows;  ///< ordered by trial seed, then FA, ST, CST
    std::map<Method, MethodStats> stats;

    /// seed,method,d,n_t,selected_l,err_q,cycle_loss (err_q is the analytic value)
    void write_csv(std::ostream& out) const;
    nlohmann::json summary() const;
};

/// Trial i uses seed config.seed + i and its own streams, so results do not depend on `parallel`.
SuiteResult run_theorem_suite(const SuiteConfig& config);

}  // namespace cst
