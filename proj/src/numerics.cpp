#include "cst/numerics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>
#include <fmt/format.h>

namespace cst {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> view(const Matrix& m) {
    return {m.data().data(), static_cast<Eigen::Index>(m.rows()),
            static_cast<Eigen::Index>(m.cols())};
}

Matrix from_eigen(const RowMajor& e) {
    Matrix out(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
    std::copy_n(e.data(), e.size(), out.data().begin());
    if (!out.all_finite()) throw NumericalError("solver produced non-finite values");
    return out;
}

RowMajor pinv_eigen(const Matrix& h) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(view(h), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double cutoff = s.size() > 0 ? kSingularCutoff * s(0) : 0.0;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > cutoff) inv(i) = 1.0 / s(i);
    }
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

Matrix ridge_solve(const Matrix& h, const Matrix& y, double lambda, SolvePath path) {
    if (h.rows() == 0 || h.cols() == 0) throw ShapeError("ridge_solve: empty design matrix");
    if (h.rows() != y.rows()) {
        throw ShapeError(fmt::format("ridge_solve: H {} vs Y {}", shape_string(h), shape_string(y)));
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw std::invalid_argument("ridge_solve: lambda must be finite and non-negative");
    }
    if (path == SolvePath::automatic) path = lambda > 0.0 ? SolvePath::cholesky : SolvePath::min_norm;

    if (path == SolvePath::min_norm && lambda == 0.0) {
        return from_eigen(pinv_eigen(h) * view(y));
    }

    const auto hv = view(h);
    Eigen::MatrixXd normal = hv.transpose() * hv;
    normal.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(normal);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("ridge_solve: normal matrix is not positive definite");
    }
    // LLT succeeds on numerically singular matrices; reject them by pivot size.
    const auto& l = llt.matrixLLT();
    const double scale = normal.diagonal().cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        if (l(i, i) * l(i, i) <= kSingularCutoff * kSingularCutoff * scale) {
            throw NumericalError("ridge_solve: normal matrix is singular");
        }
    }
    return from_eigen(llt.solve(hv.transpose() * view(y)));
}

Matrix pseudo_inverse(const Matrix& h) {
    if (h.empty()) throw ShapeError("pseudo_inverse: empty matrix");
    return from_eigen(pinv_eigen(h));
}

Matrix spd_inverse(const Matrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("spd_inverse: matrix is not square");
    Eigen::LLT<Eigen::MatrixXd> llt(view(a));
    if (llt.info() != Eigen::Success) throw NumericalError("spd_inverse: not positive definite");
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    return from_eigen(llt.solve(eye));
}

std::vector<double> softmax(std::span<const double> v) {
    std::vector<double> out(v.size());
    if (v.empty()) return out;
    const double top = *std::max_element(v.begin(), v.end());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - top);
        total += out[i];
    }
    for (double& p : out) p /= total;
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto p = softmax(logits.row(r));
        std::copy(p.begin(), p.end(), out.row(r).begin());
    }
    return out;
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

GradcheckReport gradcheck(const ScalarLoss& loss, const Matrix& params, const Matrix& analytic,
                          double step, double tol) {
    if (!(step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
    if (params.rows() != analytic.rows() || params.cols() != analytic.cols()) {
        throw ShapeError(fmt::format("gradcheck: params {} vs gradient {}", shape_string(params),
                                     shape_string(analytic)));
    }
    GradcheckReport report;
    report.numeric = Matrix(params.rows(), params.cols());
    Matrix probe = params;
    auto pd = probe.data();
    const auto ad = analytic.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
        const double saved = pd[i];
        pd[i] = saved + step;
        const double up = loss(probe);
        pd[i] = saved - step;
        const double down = loss(probe);
        pd[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericalError(fmt::format("gradcheck: non-finite loss at coordinate {}", i));
        }
        const double numeric = (up - down) / (2.0 * step);
        report.numeric.data()[i] = numeric;
        const double denom = std::max({std::abs(ad[i]), std::abs(numeric), 1e-6});
        const double rel = std::abs(ad[i] - numeric) / denom;
        if (i == 0 || rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = ad[i];
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

}  // namespace cst
