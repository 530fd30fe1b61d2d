#include "cst/tsallis.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "cst/numerics.hpp"

namespace cst {

namespace {

constexpr double kProbFloor = 1e-300;

void require_simplex(std::span<const double> y) {
    if (y.empty()) throw std::invalid_argument("tsallis: empty distribution");
    double total = 0.0;
    for (double v : y) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument("tsallis: entries must be finite and non-negative");
        }
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-8) {
        throw std::invalid_argument(fmt::format("tsallis: distribution sums to {}", total));
    }
}

void require_alpha(double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw std::invalid_argument("tsallis: alpha must be positive");
    }
}

}  // namespace

std::vector<double> default_alpha_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(1.0 + 0.1 * i);
    return grid;
}

void TsallisConfig::validate() const {
    if (!(alpha > 0.0 && alpha <= 2.0)) throw std::invalid_argument("alpha must lie in (0, 2]");
    if (!(weight >= 0.0)) throw std::invalid_argument("Tsallis weight must be non-negative");
    if (grid.empty()) throw std::invalid_argument("alpha grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < 1.0 || grid[i] > 2.0) throw std::invalid_argument("alpha grid must lie in [1, 2]");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw std::invalid_argument("alpha grid must ascend");
    }
}

double tsallis_entropy(std::span<const double> y, double alpha) {
    require_simplex(y);
    require_alpha(alpha);
    double s = 0.0;
    if (alpha == 1.0) {
        for (double v : y) {
            if (v > 0.0) s -= v * std::log(v);
        }
        return s;
    }
    // With Σy = 1, 1 − Σ y^α = −Σ y (y^{α−1} − 1); expm1 keeps α near 1 accurate.
    const double a1 = alpha - 1.0;
    for (double v : y) {
        if (v > 0.0) s -= v * std::expm1(a1 * std::log(v));
    }
    return std::max(0.0, s / a1);
}

std::vector<double> tsallis_grad(std::span<const double> y, double alpha) {
    require_simplex(y);
    require_alpha(alpha);
    std::vector<double> g(y.size());
    if (alpha == 1.0) {
        for (std::size_t i = 0; i < y.size(); ++i) g[i] = -(1.0 + std::log(std::max(y[i], kProbFloor)));
        return g;
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        g[i] = -alpha * std::pow(y[i], alpha - 1.0) / (alpha - 1.0);
    }
    return g;
}

LossAndGrad tsallis_batch_loss(const Matrix& probs, const TsallisConfig& cfg) {
    if (probs.rows() == 0) throw std::invalid_argument("tsallis_batch_loss: empty batch");
    const double scale = cfg.weight / static_cast<double>(probs.rows());
    LossAndGrad out{0.0, Matrix(probs.rows(), probs.cols())};
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        out.value += scale * tsallis_entropy(probs.row(r), cfg.alpha);
        const auto g = tsallis_grad(probs.row(r), cfg.alpha);
        auto dst = out.grad.row(r);
        for (std::size_t c = 0; c < g.size(); ++c) dst[c] = scale * g[c];
    }
    return out;
}

LossAndGrad tsallis_logit_loss(const Matrix& logits, const TsallisConfig& cfg) {
    const Matrix probs = softmax_rows(logits);
    auto loss = tsallis_batch_loss(probs, cfg);
    loss.grad = softmax_backward(probs, loss.grad);
    return loss;
}

namespace {

bool finite(const LinearHead& h) { return h.weight.all_finite() && h.bias.all_finite(); }

}  // namespace

AlphaSelection select_alpha(const MlpModel& model, const Dataset& source, const Dataset& target,
                            const TsallisConfig& cfg, const InnerBudget& budget) {
    cfg.validate();
    auto leading = [&](const Dataset& d) {
        std::vector<std::size_t> rows(std::min(d.size(), std::max<std::size_t>(budget.max_rows, 1)));
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        return d.subset(rows);
    };
    const Dataset src = leading(source);
    const Matrix hs = extract(model, src.features).features();
    const Matrix ht = extract(model, leading(target).features).features();
    const auto& ys = src.label_values();
    const LinearHead init = model.head("source");

    AlphaSelection out;
    out.grid = cfg.grid;
    out.scores.assign(cfg.grid.size(), std::numeric_limits<double>::quiet_NaN());

    for (std::size_t a = 0; a < cfg.grid.size(); ++a) {
        TsallisConfig trial = cfg;
        trial.alpha = cfg.grid[a];
        LinearHead head = init;
        bool diverged = false;
        for (std::size_t step = 0; step < budget.steps && !diverged; ++step) {
            const auto ce = cross_entropy(head_logits(head, hs), ys);
            const auto ts = tsallis_logit_loss(head_logits(head, ht), trial);
            if (!std::isfinite(ce.value) || !std::isfinite(ts.value)) {
                diverged = true;
                break;
            }
            auto grad = head_backward(head, hs, ce.grad).grad;
            axpy(1.0, head_backward(head, ht, ts.grad).grad, grad);
            axpy(-budget.learning_rate, grad, head);
            diverged = !finite(head);
        }
        if (diverged) {
            out.warnings.push_back(fmt::format("alpha {:.2f}: trial source head diverged", trial.alpha));
            continue;
        }
        const Matrix target_logits = head_logits(head, ht);
        std::vector<int> pseudo(target_logits.rows());
        for (std::size_t r = 0; r < pseudo.size(); ++r) {
            pseudo[r] = static_cast<int>(argmax(target_logits.row(r)));
        }
        try {
            const LinearHead target_head =
                fit_ridge_head(ht, pseudo, model.num_classes(), budget.ridge_lambda);
            const double score = cross_entropy(head_logits(target_head, hs), ys).value;
            if (std::isfinite(score)) {
                out.scores[a] = score;
            } else {
                out.warnings.push_back(fmt::format("alpha {:.2f}: non-finite score", trial.alpha));
            }
        } catch (const NumericalError& e) {
            out.warnings.push_back(fmt::format("alpha {:.2f}: {}", trial.alpha, e.what()));
        }
    }

    std::size_t best = cfg.grid.size();
    for (std::size_t a = 0; a < cfg.grid.size(); ++a) {
        if (std::isnan(out.scores[a])) continue;
        if (best == cfg.grid.size()) {
            best = a;
            continue;
        }
        const double tol = 1e-12 * std::max(1.0, std::abs(out.scores[best]));
        // Grid ascends, so <= hands near-ties to the larger alpha.
        if (out.scores[a] <= out.scores[best] + tol) best = a;
    }
    if (best == cfg.grid.size()) throw SelectionError("select_alpha: every grid point was skipped");
    out.alpha = cfg.grid[best];
    return out;
}

}  // namespace cst
