#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "cst/hardcase.hpp"
#include "oracles.hpp"

using namespace cst;

namespace {

Dataset target_sample(std::size_t d, std::size_t n, std::uint64_t seed) {
    RngStream rng(seed, 50);
    return sample_hardcase(Domain::target, d, n, rng);
}

Dataset source_sample(std::size_t d, std::size_t n, std::uint64_t seed) {
    RngStream rng(seed, 51);
    return sample_hardcase(Domain::source, d, n, rng);
}

bool within_3sigma(double observed, double p, std::size_t n) {
    return std::abs(observed - p) <= 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n)) + 1e-12;
}

}  // namespace

TEST_SUITE("hardcase") {

TEST_CASE("enumeration yields d - 1 verified solutions") {
    CHECK(enumerate_solutions(3).size() == 2);
    const auto sols = enumerate_solutions(10, 4);
    REQUIRE(sols.size() == 9);
    for (std::size_t i = 0; i < sols.size(); ++i) {
        CHECK(sols[i].l == i + 2);
        CHECK(sols[i].norm_sq == doctest::Approx(3.0 * std::cbrt(2.0)).epsilon(1e-14));
    }
    CHECK_THROWS_AS(enumerate_solutions(2), std::invalid_argument);
    CHECK_THROWS_AS(make_solution(5, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_solution(5, 6), std::invalid_argument);
}

TEST_CASE("the common norm is the minimum over rescaled two-column nets") {
    // Column norms a, b force θ = (1/a², −1/b²) for zero source loss.
    double best = 1e300;
    for (double a = 0.5; a <= 2.0; a += 1e-4) {
        const double col = a * a + 1.0 / std::pow(a, 4);
        best = std::min(best, 2.0 * col);
    }
    CHECK(std::abs(best - make_solution(4, 2).norm_sq) < 1e-6);
}

TEST_CASE("source feature law masses") {
    const auto law = source_feature_law();
    CHECK(law.masses[0] == doctest::Approx(0.81));
    CHECK(law.masses[1] == doctest::Approx(0.09));
    CHECK(law.masses[2] == doctest::Approx(0.09));
    CHECK(law.masses[3] == doctest::Approx(0.01));
    CHECK(std::accumulate(law.masses.begin(), law.masses.end(), 0.0) == doctest::Approx(1.0));
    const double c = std::cbrt(2.0);
    CHECK(law.patterns[3][0] == doctest::Approx(c));
    CHECK(law.patterns[1][0] == 0.0);
    CHECK(law.patterns[1][1] == doctest::Approx(c));

    const Dataset source = source_sample(10, 100000, 1);
    for (const auto& sol : {make_solution(10, 2), make_solution(10, 7)}) {
        const auto hist = feature_pattern_histogram(sol, source.features);
        for (std::size_t k = 0; k < 4; ++k) CHECK(within_3sigma(hist[k], law.masses[k], source.size()));
    }
}

TEST_CASE("population error separates the true solution from the spurious ones") {
    CHECK(population_error(make_solution(10, 2)) == 0.0);
    for (std::size_t l = 3; l <= 10; ++l) CHECK(population_error(make_solution(10, l)) == doctest::Approx(0.5));
    const Dataset target = target_sample(10, 20000, 2);
    CHECK(empirical_error(make_solution(10, 2), target) == 0.0);
    CHECK(within_3sigma(empirical_error(make_solution(10, 5), target), 0.5, target.size()));
}

TEST_CASE("spurious solutions pseudo-label every target row as 0") {
    const Dataset target = target_sample(8, 500, 3);
    for (std::size_t l = 3; l <= 8; ++l) {
        for (double v : quad_round(quad_forward(make_solution(8, l).net(), target.features))) CHECK(v == 0.0);
        for (double t : fit_target_head(make_solution(8, l), target)) CHECK(t == 0.0);
    }
}

TEST_CASE("cycle loss constants") {
    const Dataset target = target_sample(10, 100, 4);
    for (std::size_t l = 3; l <= 10; ++l) {
        const auto sol = make_solution(10, l);
        CHECK(population_cycle_loss(sol, fit_target_head(sol, target)) == doctest::Approx(0.18).epsilon(1e-12));
    }
    const auto good = make_solution(10, 2);
    const auto hist = feature_pattern_histogram(good, target.features);
    for (double h : hist) REQUIRE(h > 0.0);
    const auto theta_t = fit_target_head(good, target);
    CHECK(std::abs(theta_t[0] - good.theta[0]) < 1e-10);
    CHECK(std::abs(theta_t[1] - good.theta[1]) < 1e-10);
    CHECK(population_cycle_loss(good, theta_t) < 1e-18);

    const Dataset source = source_sample(10, 10000, 5);
    const auto spurious = make_solution(10, 4);
    CHECK(std::abs(cycle_loss(spurious, fit_target_head(spurious, target), source) - 0.18) < 0.02);
    CHECK(cycle_loss(good, theta_t, source) < 1e-18);
}

TEST_CASE("CST separates the true solution by a wide cycle-loss gap") {
    const auto sols = enumerate_solutions(10);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto out = cst_select(sols, target_sample(10, 100, 100 + seed), source_sample(10, 1000, seed),
                                    target_sample(10, 200, 200 + seed));
        CHECK(out.selected_l == 2);
        CHECK(out.err_q_analytic == 0.0);
        CHECK(out.cycle_losses[0] < 1e-18);
        const double others = *std::min_element(out.cycle_losses.begin() + 1, out.cycle_losses.end());
        CHECK(others - out.cycle_losses[0] > 0.15);
    }
}

TEST_CASE("standard self-training picks uniformly among solutions") {
    const auto sols = enumerate_solutions(10);
    const Dataset eval = target_sample(10, 10, 6);
    RngStream rng(7, 0);
    std::vector<double> counts(sols.size(), 0.0);
    constexpr int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[st_select(sols, rng, eval).selected_l - 2] += 1.0;
    double chi2 = 0.0;
    const double expected = draws / static_cast<double>(sols.size());
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 26.12);  // chi-square, 8 degrees of freedom, p = 0.001

    // A single candidate is always selected.
    RngStream one(8, 0);
    const std::vector<HardCaseSolution> single = {make_solution(2, 2)};
    CHECK(st_select(single, one, target_sample(2, 10, 9)).selected_l == 2);
}

TEST_CASE("feature adaptation rate follows the exact binomial law") {
    for (std::size_t nt : {100u, 200u}) {
        SuiteConfig cfg;
        cfg.n_t = nt;
        cfg.trials = 1000;
        cfg.seed = 11;
        cfg.source_eval_rows = 50;
        cfg.target_eval_rows = 50;
        const auto result = run_theorem_suite(cfg);
        std::size_t spurious = 0;
        for (const auto& row : result.rows) {
            if (row.outcome.method != Method::fa) continue;
            if (row.outcome.selected_l >= 3) {
                ++spurious;
                CHECK(row.outcome.err_q_analytic == doctest::Approx(0.5));
            }
        }
        // Spurious wins iff the count of target rows with x1 = 0, x2 != 0 exceeds 0.18 n_t.
        const auto threshold = static_cast<std::size_t>(std::floor(0.18 * static_cast<double>(nt) + 1e-9));
        const double p = 1.0 - oracle::binomial_cdf(static_cast<int>(threshold), static_cast<int>(nt), 0.25);
        CHECK(within_3sigma(static_cast<double>(spurious) / 1000.0, p, 1000));
    }
}

TEST_CASE("suite output does not depend on the worker count") {
    SuiteConfig cfg;
    cfg.d = 5;
    cfg.trials = 40;
    cfg.source_eval_rows = 100;
    cfg.target_eval_rows = 100;
    cfg.seed = 3;
    std::ostringstream a, b;
    run_theorem_suite(cfg).write_csv(a);
    cfg.parallel = 3;
    run_theorem_suite(cfg).write_csv(b);
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("seed,method,d,n_t,selected_l,err_q,cycle_loss\n", 0) == 0);

    cfg.trials = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("method statistics") {
    SuiteConfig cfg;
    cfg.d = 4;
    cfg.trials = 30;
    cfg.source_eval_rows = 100;
    cfg.target_eval_rows = 100;
    const auto result = run_theorem_suite(cfg);
    const auto& cst = result.stats.at(Method::cst);
    CHECK(cst.trials == 30);
    CHECK(cst.successes == 30);
    CHECK(cst.success_rate == 1.0);
    CHECK(cst.ci_high == doctest::Approx(1.0));
    CHECK(cst.ci_low < 1.0);
    const auto& st = result.stats.at(Method::st);
    CHECK(st.ci_low <= st.success_rate);
    CHECK(st.ci_high >= st.success_rate);
    CHECK(result.summary()["methods"].contains("CST"));
}

}
