#include "cst/hardcase.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "cst/numerics.hpp"

namespace cst {

namespace {

const double kPhiScale = std::pow(2.0, 1.0 / 6.0);
const double kThetaScale = std::pow(2.0, -1.0 / 3.0);
const double kFeatureScale = std::pow(2.0, 1.0 / 3.0);

constexpr std::uint64_t kSourceEvalStream = 1;
constexpr std::uint64_t kTargetStream = 2;
constexpr std::uint64_t kTargetEvalStream = 3;
constexpr std::uint64_t kSelfTrainStream = 4;
constexpr std::uint64_t kVerifyStream = 9;
/// Scores closer than this count as tied; ties go to the smallest l.
constexpr double kTieTolerance = 1e-12;

/// One point of the law of (x₁, x₂) with the copied coordinates resolved.
struct Atom {
    std::vector<double> x;
    double y;
    double mass;
};

/// Exact law over x₁, x₂ ∈ {−1, 0, +1}. Copies carry a + sign: every enumerated
/// solution reads coordinates only through their squares.
std::vector<Atom> enumerate_law(Domain domain, std::size_t d) {
    const double tail = domain == Domain::source ? kHardCaseSourceTail : kHardCaseTargetTail;
    const double values[3] = {-1.0, 0.0, 1.0};
    const double masses[3] = {tail, 1.0 - 2.0 * tail, tail};
    std::vector<Atom> atoms;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            std::vector<double> x(d, 0.0);
            x[0] = values[i];
            x[1] = values[j];
            const double copied = domain == Domain::source ? x[1] : x[0];
            for (std::size_t k = 2; k < d; ++k) x[k] = copied;
            atoms.push_back({std::move(x), values[i] * values[i] - values[j] * values[j],
                             masses[i] * masses[j]});
        }
    }
    return atoms;
}

std::size_t dimension(const HardCaseSolution& sol) { return sol.phi.rows(); }

double feature_dot(std::span<const double> theta, std::span<const double> h) {
    double s = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) s += theta[i] * h[i];
    return s;
}

std::size_t pattern_index(std::span<const double> h) {
    const double half = 0.5 * kFeatureScale;
    return (h[0] > half ? 2u : 0u) + (h[1] > half ? 1u : 0u);
}

double error_on(const QuadraticNet& net, const Matrix& x, std::span<const double> y) {
    const auto pred = quad_round(quad_forward(net, x));
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < y.size(); ++i) wrong += pred[i] != y[i] ? 1 : 0;
    return y.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(y.size());
}

void require_nonempty(const std::vector<HardCaseSolution>& solutions) {
    if (solutions.empty()) throw std::invalid_argument("hard case: no candidate solutions");
}

TrialOutcome finish(Method method, const HardCaseSolution& sol, const Dataset& eval_target) {
    TrialOutcome out;
    out.method = method;
    out.selected_l = sol.l;
    out.err_q = empirical_error(sol, eval_target);
    out.err_q_analytic = population_error(sol);
    return out;
}

}  // namespace

HardCaseSolution make_solution(std::size_t d, std::size_t l) {
    if (l < 2 || l > d) throw std::invalid_argument(fmt::format("l = {} outside [2, {}]", l, d));
    HardCaseSolution sol;
    sol.l = l;
    sol.phi = Matrix(d, 2);
    sol.phi(0, 0) = kPhiScale;
    sol.phi(l - 1, 1) = kPhiScale;
    sol.theta = {kThetaScale, -kThetaScale};
    sol.norm_sq = sol.phi.frobenius_norm_sq();
    for (double t : sol.theta) sol.norm_sq += t * t;
    return sol;
}

std::vector<HardCaseSolution> enumerate_solutions(std::size_t d, std::uint64_t verify_seed) {
    if (d < 3) throw std::invalid_argument("enumerate_solutions needs d >= 3");
    RngStream rng(verify_seed, kVerifyStream);
    const Dataset check = sample_hardcase(Domain::source, d, 1000, rng);
    const auto y = hardcase_values(check);
    std::vector<HardCaseSolution> out;
    for (std::size_t l = 2; l <= d; ++l) {
        auto sol = make_solution(d, l);
        const auto f = quad_forward(sol.net(), check.features);
        for (std::size_t i = 0; i < f.size(); ++i) {
            if (std::abs(f[i] - y[i]) >= 1e-9) {
                throw NumericalError(fmt::format("solution l = {} misfits source row {}", l, i));
            }
        }
        out.push_back(std::move(sol));
    }
    return out;
}

FeatureLaw source_feature_law() {
    const double p = 2.0 * kHardCaseSourceTail;  // P(x² = 1)
    FeatureLaw law;
    for (std::size_t k = 0; k < 4; ++k) {
        const double a = (k & 2u) ? 1.0 : 0.0;
        const double b = (k & 1u) ? 1.0 : 0.0;
        law.patterns[k] = {kFeatureScale * a, kFeatureScale * b};
        law.masses[k] = (a > 0 ? p : 1.0 - p) * (b > 0 ? p : 1.0 - p);
    }
    return law;
}

std::array<double, 4> feature_pattern_histogram(const HardCaseSolution& sol, const Matrix& x) {
    if (x.rows() == 0) throw std::invalid_argument("feature histogram of an empty sample");
    std::array<double, 4> hist{};
    const Matrix h = quad_features(sol.phi, x);
    for (std::size_t r = 0; r < h.rows(); ++r) hist[pattern_index(h.row(r))] += 1.0;
    for (double& v : hist) v /= static_cast<double>(h.rows());
    return hist;
}

std::string to_string(Method m) {
    switch (m) {
        case Method::fa: return "FA";
        case Method::st: return "ST";
        case Method::cst: return "CST";
    }
    return "unknown";
}

double empirical_error(const HardCaseSolution& sol, const Dataset& data) {
    return error_on(sol.net(), data.features, hardcase_values(data));
}

double population_error(const HardCaseSolution& sol) {
    const auto net = sol.net();
    double err = 0.0;
    for (const auto& atom : enumerate_law(Domain::target, dimension(sol))) {
        const Matrix x(1, atom.x.size(), atom.x);
        if (quad_round(quad_forward(net, x)[0]) != atom.y) err += atom.mass;
    }
    return err;
}

std::vector<double> fit_target_head(const HardCaseSolution& sol, const Dataset& target) {
    if (target.size() == 0) throw std::invalid_argument("fit_target_head: empty target sample");
    const auto pseudo = quad_round(quad_forward(sol.net(), target.features));
    const Matrix h = quad_features(sol.phi, target.features);
    const Matrix theta = matmul(pseudo_inverse(h), Matrix::column(pseudo));
    return {theta.data().begin(), theta.data().end()};
}

double cycle_loss(const HardCaseSolution& sol, std::span<const double> theta_t,
                  const Dataset& source_eval) {
    if (source_eval.size() == 0) throw std::invalid_argument("cycle_loss: empty source sample");
    const Matrix h = quad_features(sol.phi, source_eval.features);
    const auto y = hardcase_values(source_eval);
    double total = 0.0;
    for (std::size_t r = 0; r < h.rows(); ++r) {
        const double e = feature_dot(theta_t, h.row(r)) - y[r];
        total += e * e;
    }
    return total / static_cast<double>(h.rows());
}

double population_cycle_loss(const HardCaseSolution& sol, std::span<const double> theta_t) {
    double total = 0.0;
    for (const auto& atom : enumerate_law(Domain::source, dimension(sol))) {
        const Matrix h = quad_features(sol.phi, Matrix(1, atom.x.size(), atom.x));
        const double e = feature_dot(theta_t, h.row(0)) - atom.y;
        total += atom.mass * e * e;
    }
    return total;
}

double fa_tv_score(const HardCaseSolution& sol, const Dataset& target) {
    const auto law = source_feature_law();
    const auto hist = feature_pattern_histogram(sol, target.features);
    double tv = 0.0;
    for (std::size_t k = 0; k < 4; ++k) tv += std::abs(law.masses[k] - hist[k]);
    return 0.5 * tv;
}

TrialOutcome fa_select(const std::vector<HardCaseSolution>& solutions, const Dataset& target,
                       const Dataset& eval_target) {
    require_nonempty(solutions);
    std::vector<double> scores;
    std::size_t best = 0;
    for (std::size_t i = 0; i < solutions.size(); ++i) {
        scores.push_back(fa_tv_score(solutions[i], target));
        if (scores[i] < scores[best] - kTieTolerance) best = i;
    }
    auto out = finish(Method::fa, solutions[best], eval_target);
    out.tv_scores = std::move(scores);
    return out;
}

TrialOutcome st_select(const std::vector<HardCaseSolution>& solutions, RngStream& rng,
                       const Dataset& eval_target) {
    require_nonempty(solutions);
    const auto pick = static_cast<std::size_t>(rng.uniform_index(solutions.size()));
    return finish(Method::st, solutions[pick], eval_target);
}

TrialOutcome cst_select(const std::vector<HardCaseSolution>& solutions, const Dataset& target,
                        const Dataset& source_eval, const Dataset& eval_target) {
    require_nonempty(solutions);
    std::vector<double> losses;
    std::size_t best = 0;
    for (std::size_t i = 0; i < solutions.size(); ++i) {
        const auto theta_t = fit_target_head(solutions[i], target);
        losses.push_back(cycle_loss(solutions[i], theta_t, source_eval));
        if (losses[i] < losses[best] - kTieTolerance) best = i;
    }
    auto out = finish(Method::cst, solutions[best], eval_target);
    out.cycle_loss = losses[best];
    out.cycle_losses = std::move(losses);
    return out;
}

// --- Monte-Carlo suite --------------------------------------------------------

void SuiteConfig::validate() const {
    if (d < 3) throw std::invalid_argument("hard-case suite needs d >= 3");
    if (n_t < 1) throw std::invalid_argument("hard-case suite needs n_t >= 1");
    if (trials < 1) throw std::invalid_argument("hard-case suite needs trials >= 1");
    if (source_eval_rows < 1 || target_eval_rows < 1) {
        throw std::invalid_argument("hard-case suite needs non-empty evaluation samples");
    }
    if (parallel < 1) throw std::invalid_argument("parallel must be at least 1");
}

namespace {

std::array<TrialOutcome, 3> run_trial(const SuiteConfig& cfg,
                                      const std::vector<HardCaseSolution>& solutions,
                                      std::uint64_t seed) {
    RngStream target_rng(seed, kTargetStream);
    RngStream source_rng(seed, kSourceEvalStream);
    RngStream eval_rng(seed, kTargetEvalStream);
    RngStream st_rng(seed, kSelfTrainStream);
    const Dataset target = sample_hardcase(Domain::target, cfg.d, cfg.n_t, target_rng);
    const Dataset source_eval = sample_hardcase(Domain::source, cfg.d, cfg.source_eval_rows, source_rng);
    const Dataset eval_target = sample_hardcase(Domain::target, cfg.d, cfg.target_eval_rows, eval_rng);

    auto cst = cst_select(solutions, target, source_eval, eval_target);
    auto fa = fa_select(solutions, target, eval_target);
    auto st = st_select(solutions, st_rng, eval_target);
    // Baselines report the empirical cycle loss of whatever they picked.
    fa.cycle_loss = cst.cycle_losses[fa.selected_l - 2];
    st.cycle_loss = cst.cycle_losses[st.selected_l - 2];
    return {std::move(fa), std::move(st), std::move(cst)};
}

MethodStats summarize(const std::vector<const TrialOutcome*>& outcomes) {
    MethodStats s;
    s.trials = outcomes.size();
    double err = 0.0;
    for (const auto* o : outcomes) {
        s.successes += o->err_q_analytic == 0.0 ? 1 : 0;
        err += o->err_q_analytic;
        ++s.selected_counts[o->selected_l];
    }
    const double n = static_cast<double>(s.trials);
    const double p = static_cast<double>(s.successes) / n;
    s.success_rate = p;
    s.std_error = std::sqrt(p * (1.0 - p) / n);
    s.mean_err_q = err / n;
    constexpr double z = 1.959963984540054;
    const double denom = 1.0 + z * z / n;
    const double centre = (p + z * z / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
    s.ci_low = std::max(0.0, centre - half);
    s.ci_high = std::min(1.0, centre + half);
    return s;
}

}  // namespace

SuiteResult run_theorem_suite(const SuiteConfig& config) {
    config.validate();
    const auto solutions = enumerate_solutions(config.d, config.seed);
    std::vector<std::array<TrialOutcome, 3>> per_trial(config.trials);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < config.trials; i = next++) {
            try {
                per_trial[i] = run_trial(config, solutions, config.seed + i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = config.trials;
            }
        }
    };
    {
        const std::size_t workers = std::min(config.parallel, config.trials);
        std::vector<std::jthread> pool;
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
        worker();
    }
    if (failure) std::rethrow_exception(failure);

    SuiteResult result;
    result.config = config;
    std::map<Method, std::vector<const TrialOutcome*>> by_method;
    for (std::size_t i = 0; i < config.trials; ++i) {
        for (auto& outcome : per_trial[i]) {
            result.rows.push_back({config.seed + i, std::move(outcome)});
        }
    }
    for (const auto& row : result.rows) by_method[row.outcome.method].push_back(&row.outcome);
    for (const auto& [method, outcomes] : by_method) result.stats[method] = summarize(outcomes);
    return result;
}

void SuiteResult::write_csv(std::ostream& out) const {
    out << "seed,method,d,n_t,selected_l,err_q,cycle_loss\n";
    for (const auto& row : rows) {
        const auto& o = row.outcome;
        out << fmt::format("{},{},{},{},{},{:.17g},{:.17g}\n", row.seed, to_string(o.method),
                           config.d, config.n_t, o.selected_l, o.err_q_analytic, o.cycle_loss);
    }
}

nlohmann::json SuiteResult::summary() const {
    nlohmann::json j;
    j["config"] = {{"d", config.d},
                   {"n_t", config.n_t},
                   {"trials", config.trials},
                   {"seed", config.seed},
                   {"source_eval_rows", config.source_eval_rows},
                   {"target_eval_rows", config.target_eval_rows}};
    for (const auto& [method, s] : stats) {
        nlohmann::json counts = nlohmann::json::object();
        for (const auto& [l, c] : s.selected_counts) counts[std::to_string(l)] = c;
        j["methods"][to_string(method)] = {{"trials", s.trials},
                                           {"successes", s.successes},
                                           {"success_rate", s.success_rate},
                                           {"failure_rate", 1.0 - s.success_rate},
                                           {"std_error", s.std_error},
                                           {"ci95_low", s.ci_low},
                                           {"ci95_high", s.ci_high},
                                           {"mean_err_q", s.mean_err_q},
                                           {"selected_l", counts}};
    }
    return j;
}

}  // namespace cst
