#include "cst/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "cst/numerics.hpp"

namespace cst {

namespace {

void require_normalized(std::span<const double> c, const char* what) {
    double total = 0.0;
    for (double v : c) {
        if (!(v >= 0.0)) throw std::invalid_argument(fmt::format("{}: negative mass", what));
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-8) {
        throw std::invalid_argument(fmt::format("{}: masses sum to {}", what, total));
    }
}

}  // namespace

double tv_distance(std::span<const double> c, std::span<const double> c2) {
    if (c.size() != c2.size()) {
        throw std::invalid_argument(fmt::format("tv_distance: lengths {} and {}", c.size(), c2.size()));
    }
    require_normalized(c, "tv_distance");
    require_normalized(c2, "tv_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) acc += std::abs(c[i] - c2[i]);
    return std::min(1.0, 0.5 * acc);
}

std::vector<double> label_histogram(std::span<const int> labels, std::size_t num_classes) {
    if (labels.empty()) throw std::invalid_argument("label_histogram: no labels");
    std::vector<double> hist(num_classes, 0.0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw std::out_of_range("label_histogram: label out of range");
        }
        hist[static_cast<std::size_t>(y)] += 1.0;
    }
    for (double& h : hist) h /= static_cast<double>(labels.size());
    return hist;
}

ErrorBound error_lower_bound_check(const Matrix& joint) {
    if (joint.rows() != joint.cols() || joint.rows() == 0) {
        throw std::invalid_argument("error_lower_bound_check: joint must be square and nonempty");
    }
    require_normalized(joint.data(), "error_lower_bound_check");
    const std::size_t k = joint.rows();
    std::vector<double> truth(k, 0.0);
    std::vector<double> predicted(k, 0.0);
    double trace = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        trace += joint(i, i);
        for (std::size_t j = 0; j < k; ++j) {
            truth[i] += joint(i, j);
            predicted[j] += joint(i, j);
        }
    }
    ErrorBound out;
    out.error_rate = std::max(0.0, 1.0 - trace);
    out.d_tv = tv_distance(truth, predicted);
    out.holds = out.error_rate >= out.d_tv - 1e-12;
    return out;
}

RocCurve roc_curve(std::span<const double> scores, const std::vector<bool>& correct) {
    if (scores.size() != correct.size()) throw std::invalid_argument("roc_curve: size mismatch");
    const auto positives = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
    const std::size_t negatives = correct.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw std::invalid_argument("roc_curve: need both correct and incorrect samples");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0});
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        // Every sample sharing this score enters at the same threshold.
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (correct[order[i]] ? tp : fp) += 1;
            ++i;
        }
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                                static_cast<double>(tp) / static_cast<double>(positives)});
    }
    // The -inf sentinel selects everything; it coincides with the last distinct score.
    if (curve.points.back().fpr != 1.0 || curve.points.back().tpr != 1.0) {
        curve.points.push_back({1.0, 1.0});
    }
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto& a = curve.points[i - 1];
        const auto& b = curve.points[i];
        curve.auc += 0.5 * (b.fpr - a.fpr) * (a.tpr + b.tpr);
    }
    return curve;
}

std::vector<double> margin_scores(const Matrix& probs) {
    if (probs.cols() < 2) throw std::invalid_argument("margin_scores: need K >= 2");
    std::vector<double> out;
    out.reserve(probs.rows());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        double first = -INFINITY;
        double second = -INFINITY;
        for (double v : probs.row(r)) {
            if (v > first) {
                second = first;
                first = v;
            } else if (v > second) {
                second = v;
            }
        }
        out.push_back(first - second);
    }
    return out;
}

std::vector<double> confidence_scores(const Matrix& probs) {
    std::vector<double> out;
    out.reserve(probs.rows());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto row = probs.row(r);
        out.push_back(*std::max_element(row.begin(), row.end()));
    }
    return out;
}

std::vector<double> negative_entropy_scores(const Matrix& probs) {
    std::vector<double> out;
    out.reserve(probs.rows());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        double h = 0.0;
        for (double p : probs.row(r)) {
            if (p > 0.0) h -= p * std::log(p);
        }
        out.push_back(-h);
    }
    return out;
}

double ramp_loss(double x, double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("ramp_loss: gamma must be positive");
    if (x <= 0.0) return 1.0;
    if (x <= gamma) return 1.0 - x / gamma;
    return 0.0;
}

double margin_loss(std::span<const double> v, std::size_t y, double gamma) {
    if (y >= v.size() || v.size() < 2) throw std::out_of_range("margin_loss: bad class index");
    double rival = -INFINITY;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i != y) rival = std::max(rival, v[i]);
    }
    return ramp_loss(v[y] - rival, gamma);
}

double cst_margin_objective(const Matrix& ft_source, std::span<const int> source_labels,
                            const Matrix& ft_target, std::span<const int> fs_target_labels,
                            double gamma, double tau) {
    if (ft_source.rows() != source_labels.size() || ft_target.rows() != fs_target_labels.size()) {
        throw std::invalid_argument("cst_margin_objective: label count mismatch");
    }
    if (ft_source.rows() == 0 || ft_target.rows() == 0) {
        throw std::invalid_argument("cst_margin_objective: empty input");
    }
    if (!(tau > 0.0)) throw std::invalid_argument("cst_margin_objective: tau must be positive");
    double cycle = 0.0;
    for (std::size_t r = 0; r < ft_source.rows(); ++r) {
        cycle += margin_loss(ft_source.row(r), static_cast<std::size_t>(source_labels[r]), gamma);
    }
    cycle /= static_cast<double>(ft_source.rows());
    double target = 0.0;
    for (std::size_t r = 0; r < ft_target.rows(); ++r) {
        target += margin_loss(ft_target.row(r), static_cast<std::size_t>(fs_target_labels[r]), gamma);
    }
    target /= static_cast<double>(ft_target.rows());
    const auto ms = margin_scores(ft_source);
    const auto mt = margin_scores(ft_target);
    const double mean_margin = (std::accumulate(ms.begin(), ms.end(), 0.0) / double(ms.size()) +
                                std::accumulate(mt.begin(), mt.end(), 0.0) / double(mt.size())) /
                               2.0;
    return cycle + target + (1.0 - mean_margin) / tau;
}

std::vector<double> unit_histogram(std::span<const double> values, std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("unit_histogram: need at least one bin");
    std::vector<double> hist(bins, 0.0);
    if (values.empty()) return hist;
    for (double v : values) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        auto b = static_cast<std::size_t>(clamped * static_cast<double>(bins));
        hist[std::min(b, bins - 1)] += 1.0;
    }
    for (double& h : hist) h /= static_cast<double>(values.size());
    return hist;
}

RobustnessEstimate empirical_robustness(const ProbabilityFn& model, const Matrix& x, double xi,
                                        std::size_t probes, RngStream& rng) {
    if (!(xi > 0.0)) throw std::invalid_argument("empirical_robustness: radius must be positive");
    if (probes == 0) throw std::invalid_argument("empirical_robustness: need at least one probe");
    RobustnessEstimate out;
    out.flipped.assign(x.rows(), false);
    if (x.rows() == 0) return out;

    const Matrix base = model(x);
    const std::size_t d = x.cols();
    Matrix perturbed(x.rows() * probes, d);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t p = 0; p < probes; ++p) {
            auto dst = perturbed.row(r * probes + p);
            double norm = 0.0;
            for (double& v : dst) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            const double radius = xi * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
            const auto src = x.row(r);
            for (std::size_t j = 0; j < d; ++j) {
                dst[j] = src[j] + (norm > 0.0 ? radius * dst[j] / norm : 0.0);
            }
        }
    }
    const Matrix probe_probs = model(perturbed);
    std::size_t count = 0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto label = argmax(base.row(r));
        for (std::size_t p = 0; p < probes; ++p) {
            if (argmax(probe_probs.row(r * probes + p)) != label) {
                out.flipped[r] = true;
                break;
            }
        }
        count += out.flipped[r] ? 1 : 0;
    }
    out.estimate = static_cast<double>(count) / static_cast<double>(x.rows());
    return out;
}

double linear_softmax_lipschitz(const Matrix& weight) {
    double widest = 0.0;
    for (std::size_t i = 0; i < weight.cols(); ++i) {
        for (std::size_t j = i + 1; j < weight.cols(); ++j) {
            double sq = 0.0;
            for (std::size_t r = 0; r < weight.rows(); ++r) {
                const double diff = weight(r, i) - weight(r, j);
                sq += diff * diff;
            }
            widest = std::max(widest, std::sqrt(sq));
        }
    }
    // ‖∇p_i‖ ≤ p_i Σ_j p_j ‖w_i − w_j‖ ≤ p_i (1 − p_i) max‖w_i − w_j‖ ≤ max‖w_i − w_j‖ / 4.
    return widest / 4.0;
}

nlohmann::json DiagnosticsReport::to_json() const {
    nlohmann::json j;
    j["histogram_pseudo"] = histogram_pseudo;
    j["histogram_truth"] = histogram_truth;
    j["d_tv"] = d_tv;
    j["error_rate"] = error_rate;
    for (const auto& [name, curve] : roc) j["auc"][name] = curve.auc;
    j["margin_histogram"] = margin_histogram;
    j["robustness"] = robustness;
    j["robustness_radius"] = robustness_radius;
    return j;
}

void DiagnosticsReport::write_roc_csv(std::ostream& out) const {
    out << "criterion,fpr,tpr\n";
    for (const auto& [name, curve] : roc) {
        for (const auto& p : curve.points) out << fmt::format("{},{:.12g},{:.12g}\n", name, p.fpr, p.tpr);
    }
}

void DiagnosticsReport::write_margin_csv(std::ostream& out) const {
    out << "bin_lo,bin_hi,fraction\n";
    const double width = 1.0 / static_cast<double>(margin_histogram.size());
    for (std::size_t b = 0; b < margin_histogram.size(); ++b) {
        out << fmt::format("{:.6g},{:.6g},{:.12g}\n", width * double(b), width * double(b + 1),
                           margin_histogram[b]);
    }
}

DiagnosticsReport diagnose(const ProbabilityFn& model, const Dataset& data,
                           const DiagnoseOptions& options, RngStream& rng) {
    data.validate();
    const auto& truth = data.label_values();
    const Matrix probs = model(data.features);
    std::vector<int> pseudo(probs.rows());
    std::vector<bool> correct(probs.rows());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        pseudo[r] = static_cast<int>(argmax(probs.row(r)));
        correct[r] = pseudo[r] == truth[r];
    }

    DiagnosticsReport report;
    report.histogram_pseudo = label_histogram(pseudo, data.num_classes);
    report.histogram_truth = label_histogram(truth, data.num_classes);
    report.d_tv = tv_distance(report.histogram_pseudo, report.histogram_truth);
    report.error_rate = static_cast<double>(std::count(correct.begin(), correct.end(), false)) /
                        static_cast<double>(correct.size());
    const bool mixed = report.error_rate > 0.0 && report.error_rate < 1.0;
    if (mixed) {
        report.roc["confidence"] = roc_curve(confidence_scores(probs), correct);
        report.roc["entropy"] = roc_curve(negative_entropy_scores(probs), correct);
    }
    report.margin_histogram = unit_histogram(margin_scores(probs), options.margin_bins);
    report.robustness_radius = options.robustness_radius;
    report.robustness = empirical_robustness(model, data.features, options.robustness_radius,
                                             options.robustness_probes, rng)
                            .estimate;
    return report;
}

}  // namespace cst
