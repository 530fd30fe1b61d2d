#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cst/matrix.hpp"

namespace cst {

enum class SolvePath {
    automatic,  ///< Cholesky when lambda > 0, minimum-norm otherwise.
    cholesky,   ///< Normal equations; fails if HᵀH + λI is not positive definite.
    min_norm,   ///< Truncated SVD pseudo-inverse (ignores lambda only when lambda == 0).
};

/// Relative singular-value cutoff for the minimum-norm path.
inline constexpr double kSingularCutoff = 1e-10;

/**
 * Solves argmin_θ ‖Hθ − Y‖² + λ‖θ‖² for an n×m H and n×K Y.
 *
 * With λ = 0 and the min-norm path the result is the least-norm minimizer
 * H⁺Y, with singular values below kSingularCutoff·σ_max treated as zero.
 * Throws NumericalError when the Cholesky path meets a singular system.
 */
Matrix ridge_solve(const Matrix& h, const Matrix& y, double lambda,
                   SolvePath path = SolvePath::automatic);

/// Moore-Penrose pseudo-inverse (m×n for an n×m input) with the same cutoff.
Matrix pseudo_inverse(const Matrix& h);

/// Inverse of a symmetric positive-definite matrix via Cholesky.
Matrix spd_inverse(const Matrix& a);

/// Numerically stable softmax; subtracts the max before exponentiating.
std::vector<double> softmax(std::span<const double> v);
Matrix softmax_rows(const Matrix& logits);

/// Index of the largest entry; the first one wins ties.
std::size_t argmax(std::span<const double> v);

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;  ///< Row-major index into params.
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed = false;
    Matrix numeric;
};

using ScalarLoss = std::function<double(const Matrix&)>;

/**
 * Central finite-difference check of an analytic gradient.
 *
 * Per coordinate the relative error is |a − n| / max(|a|, |n|, 1e-6).
 * Passes iff the maximum is below tol. A non-finite loss at any probe
 * throws NumericalError.
 */
GradcheckReport gradcheck(const ScalarLoss& loss, const Matrix& params, const Matrix& analytic,
                          double step = 1e-5, double tol = 1e-4);

}  // namespace cst
