#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "cst/matrix.hpp"
#include "cst/numerics.hpp"
#include "cst/rng.hpp"
#include "oracles.hpp"

using namespace cst;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

oracle::Dense to_dense(const Matrix& m) {
    oracle::Dense d(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) d[r].assign(m.row(r).begin(), m.row(r).end());
    return d;
}

std::vector<double> column_of(const Matrix& m, std::size_t c) {
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = m(r, c);
    return out;
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("matrix construction rejects non-finite entries and bad sizes") {
    CHECK_THROWS_AS(Matrix(1, 2, std::vector<double>{1.0, std::nan("")}), NumericalError);
    CHECK_THROWS_AS(Matrix(1, 2, std::vector<double>{1.0, std::numeric_limits<double>::infinity()}),
                    NumericalError);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS((Matrix{{1.0, 2.0}, {3.0}}), ShapeError);
}

TEST_CASE("matmul examples") {
    const Matrix a{{1, 2}, {3, 4}};
    CHECK(matmul(Matrix::identity(2), a) == a);
    CHECK(matmul(a, Matrix{{1}, {1}}) == Matrix{{3}, {7}});
    CHECK(matmul(Matrix(2, 3), Matrix(3, 2, 1.0)) == Matrix(2, 2));
    CHECK_THROWS_AS(matmul(a, Matrix(3, 1)), ShapeError);
}

TEST_CASE("transposed products agree with explicit transposes") {
    RngStream rng(1, 0);
    const Matrix a = random_matrix(4, 3, rng);
    const Matrix b = random_matrix(4, 5, rng);
    const Matrix c = random_matrix(6, 3, rng);
    CHECK(max_abs_diff(matmul_tn(a, b), matmul(a.transpose(), b)) < 1e-14);
    CHECK(max_abs_diff(matmul_nt(a, c), matmul(a, c.transpose())) < 1e-14);
}

TEST_CASE("row helpers") {
    const Matrix a{{1, 2}, {3, 4}, {5, 6}};
    const std::vector<std::size_t> rows = {2, 0};
    CHECK(a.select_rows(rows) == Matrix{{5, 6}, {1, 2}});
    CHECK(a.with_constant_column(1.0) == Matrix{{1, 2, 1}, {3, 4, 1}, {5, 6, 1}});
    CHECK(a.with_constant_column(1.0).drop_trailing_columns(1) == a);
    CHECK_THROWS(a.at(3, 0));
}

TEST_CASE("ridge_solve examples") {
    CHECK(max_abs_diff(ridge_solve(Matrix::identity(2), Matrix::identity(2), 0.0), Matrix::identity(2)) < 1e-15);
    CHECK(max_abs_diff(ridge_solve(Matrix{{1}, {1}}, Matrix{{1}, {0}}, 0.0), Matrix{{0.5}}) < 1e-15);
    // Lagrange multiplier: min ‖θ‖² s.t. θ₁ + θ₂ = 2 gives θ = (1, 1).
    CHECK(max_abs_diff(ridge_solve(Matrix{{1, 1}}, Matrix{{2}}, 0.0), Matrix{{1}, {1}}) < 1e-14);
}

TEST_CASE("ridge_solve matches Gaussian elimination on random 10x5 systems") {
    RngStream rng(2, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix h = random_matrix(10, 5, rng);
        const Matrix y = random_matrix(10, 2, rng);
        for (double lambda : {0.0, 0.3}) {
            const Matrix theta = ridge_solve(h, y, lambda);
            for (std::size_t k = 0; k < 2; ++k) {
                const auto expected =
                    oracle::gauss_solve(oracle::gram(to_dense(h), lambda), oracle::at_times(to_dense(h), column_of(y, k)));
                for (std::size_t i = 0; i < 5; ++i) {
                    CHECK(std::abs(theta(i, k) - expected[i]) <= 1e-10 * std::max(1.0, std::abs(expected[i])));
                }
            }
        }
    }
}

TEST_CASE("minimum-norm solution beats every other exact solution") {
    RngStream rng(3, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix h = random_matrix(3, 6, rng);
        const Matrix y = random_matrix(3, 1, rng);
        const Matrix theta = ridge_solve(h, y, 0.0, SolvePath::min_norm);
        CHECK(max_abs_diff(matmul(h, theta), y) < 1e-10);
        // Null-space direction: v − Hᵀ(HHᵀ)⁻¹Hv for a random v.
        const Matrix v = random_matrix(6, 1, rng);
        const Matrix proj = matmul(pseudo_inverse(h), matmul(h, v));
        const Matrix null_dir = v - proj;
        const Matrix other = theta + null_dir;
        CHECK(max_abs_diff(matmul(h, other), y) < 1e-10);
        CHECK(other.frobenius_norm_sq() > theta.frobenius_norm_sq());
    }
}

TEST_CASE("singular normal equations without the min-norm path fail") {
    const Matrix h{{1, 1}, {2, 2}, {3, 3}};
    const Matrix y{{1}, {2}, {3}};
    CHECK_THROWS_AS(ridge_solve(h, y, 0.0, SolvePath::cholesky), NumericalError);
    CHECK_NOTHROW(ridge_solve(h, y, 0.0, SolvePath::min_norm));
    CHECK_THROWS_AS(ridge_solve(h, Matrix(2, 1), 0.0), ShapeError);
    CHECK_THROWS_AS(ridge_solve(h, y, -1.0), std::invalid_argument);
}

TEST_CASE("pseudo-inverse of the zero matrix is zero") {
    CHECK(pseudo_inverse(Matrix(3, 2)) == Matrix(2, 3));
}

TEST_CASE("softmax examples and invariants") {
    const auto half = softmax(std::vector<double>{0.0, 0.0});
    CHECK(half[0] == doctest::Approx(0.5));
    const auto sat = softmax(std::vector<double>{1000.0, 0.0});
    CHECK(std::isfinite(sat[0]));
    CHECK(sat[0] == doctest::Approx(1.0));
    const auto p = softmax(std::vector<double>{std::log(1.0), std::log(2.0), std::log(3.0)});
    for (int i = 0; i < 3; ++i) CHECK(std::abs(p[i] - (i + 1) / 6.0) < 1e-15);

    RngStream rng(4, 0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(5);
        for (double& x : v) x = rng.uniform(-50.0, 50.0);
        const auto q = softmax(v);
        CHECK(std::abs(std::accumulate(q.begin(), q.end(), 0.0) - 1.0) < 1e-12);
        std::vector<double> shifted = v;
        for (double& x : shifted) x += 7.5;
        const auto r = softmax(shifted);
        for (std::size_t i = 0; i < q.size(); ++i) CHECK(std::abs(q[i] - r[i]) < 1e-12);
    }
}

TEST_CASE("argmax keeps the first of tied maxima") {
    CHECK(argmax(std::vector<double>{1.0, 3.0, 3.0}) == 1);
    CHECK(argmax(std::vector<double>{2.0}) == 0);
}

TEST_CASE("gradcheck accepts a correct gradient and rejects a wrong one") {
    const Matrix x{{0.3, -1.2}, {2.0, 0.7}};
    const ScalarLoss sq = [](const Matrix& p) { return p.frobenius_norm_sq(); };
    CHECK(gradcheck(sq, x, x * 2.0, 1e-5, 1e-6).passed);
    const auto bad = gradcheck(sq, x, x, 1e-5, 1e-6);
    CHECK_FALSE(bad.passed);
    CHECK(bad.max_rel_error == doctest::Approx(0.5));
    const ScalarLoss blowup = [](const Matrix&) { return std::nan(""); };
    CHECK_THROWS_AS(gradcheck(blowup, x, x, 1e-5, 1e-4), NumericalError);
}

TEST_CASE("rng streams are reproducible and distinct") {
    RngStream a(42, 3), b(42, 3), c(42, 4), d(43, 3);
    bool differs_stream = false, differs_seed = false;
    for (int i = 0; i < 100; ++i) {
        const auto va = a.next_u64();
        CHECK(va == b.next_u64());
        differs_stream |= va != c.next_u64();
        differs_seed |= va != d.next_u64();
    }
    CHECK(differs_stream);
    CHECK(differs_seed);
}

TEST_CASE("rng draws have the advertised laws") {
    RngStream rng(5, 0);
    constexpr int n = 100000;
    double sum = 0.0, sum_n = 0.0, sum_n2 = 0.0;
    int signs = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        sum += u;
        const double z = rng.normal();
        sum_n += z;
        sum_n2 += z * z;
        signs += rng.sign();
    }
    CHECK(std::abs(sum / n - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n) + 1e-3);
    CHECK(std::abs(sum_n / n) < 0.02);
    CHECK(std::abs(sum_n2 / n - 1.0) < 0.03);
    CHECK(std::abs(signs) < 4.0 * std::sqrt(double(n)));
    for (int i = 0; i < 1000; ++i) CHECK(rng.uniform_index(7) < 7);
}

TEST_CASE("shuffle yields a permutation") {
    RngStream rng(6, 0);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(v);
    CHECK(std::set<int>(v.begin(), v.end()).size() == 50);
    std::vector<int> sorted(50);
    std::iota(sorted.begin(), sorted.end(), 0);
    CHECK(v != sorted);
}

}
