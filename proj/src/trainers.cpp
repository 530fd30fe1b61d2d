#include "cst/trainers.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "cst/diagnostics.hpp"
#include "cst/losses.hpp"
#include "cst/numerics.hpp"

namespace cst {

std::string to_string(SelectionRule r) {
    switch (r) {
        case SelectionRule::none: return "none";
        case SelectionRule::confidence: return "confidence";
        case SelectionRule::entropy: return "entropy";
    }
    return "unknown";
}

SelectionRule parse_selection_rule(const std::string& name) {
    if (name == "none") return SelectionRule::none;
    if (name == "confidence") return SelectionRule::confidence;
    if (name == "entropy") return SelectionRule::entropy;
    throw std::invalid_argument("unknown selection rule: " + name);
}

void TrainConfig::validate() const {
    if (iters_per_epoch == 0) throw std::invalid_argument("iters_per_epoch must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
        throw std::invalid_argument("lr_decay_factor must lie in (0, 1]");
    }
    if (!(ridge_lambda >= 0.0)) throw std::invalid_argument("ridge_lambda must be non-negative");
    if (selection != SelectionRule::none && !(selection_threshold >= 0.0 && selection_threshold <= 1.0)) {
        throw std::invalid_argument("selection_threshold must lie in [0, 1]");
    }
    if (!(target_weight >= 0.0)) throw std::invalid_argument("target_weight must be non-negative");
    tsallis.validate();
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
    const std::size_t period =
        lr_decay_period > 0 ? lr_decay_period : std::max<std::size_t>(1, (2 * epochs + 2) / 3);
    return learning_rate * std::pow(lr_decay_factor, static_cast<double>(epoch / period));
}

void TrainReport::write_csv(std::ostream& out) const {
    out << "epoch,source_loss,cycle_loss,tsallis_loss,target_acc,pl_tv,alpha\n";
    for (const auto& r : epochs) {
        out << fmt::format("{},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g}\n", r.epoch,
                           r.source_loss, r.cycle_loss, r.tsallis_loss, r.target_acc, r.pl_tv,
                           r.alpha);
    }
}

nlohmann::json TrainReport::summary() const {
    nlohmann::json j;
    j["method"] = method;
    j["epochs"] = epochs.size();
    if (!epochs.empty()) {
        const auto& first = epochs.front();
        const auto& last = epochs.back();
        auto record = [](const EpochRecord& r) {
            return nlohmann::json{{"epoch", r.epoch},           {"source_loss", r.source_loss},
                                  {"cycle_loss", r.cycle_loss}, {"tsallis_loss", r.tsallis_loss},
                                  {"target_acc", r.target_acc}, {"pl_tv", r.pl_tv},
                                  {"alpha", r.alpha},           {"learning_rate", r.learning_rate}};
        };
        j["first"] = record(first);
        j["final"] = record(last);
    }
    return j;
}

// --- forward / reverse ---------------------------------------------------------------

std::size_t PseudoLabels::selected_count() const {
    return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true));
}

PseudoLabels forward_step(const MlpModel& model, const Matrix& target_x, SelectionRule rule,
                          double threshold) {
    const Prediction pred = mlp_forward(model, "source", target_x);
    PseudoLabels out;
    out.labels = pred.labels;
    out.selected.assign(pred.labels.size(), true);
    if (rule == SelectionRule::none) return out;
    const auto k = static_cast<double>(model.num_classes());
    for (std::size_t r = 0; r < pred.probabilities.rows(); ++r) {
        const auto p = pred.probabilities.row(r);
        if (rule == SelectionRule::confidence) {
            out.selected[r] = *std::max_element(p.begin(), p.end()) >= threshold;
        } else {
            double h = 0.0;
            for (double v : p) {
                if (v > 0.0) h -= v * std::log(v);
            }
            out.selected[r] = h / std::log(k) <= threshold;
        }
    }
    return out;
}

ClosedFormHead ClosedFormHead::fit(const Matrix& features, std::span<const int> labels,
                                   std::size_t num_classes, double lambda) {
    if (features.rows() == 0) throw ShapeError("reverse step needs at least one pseudo-labeled row");
    if (!(lambda >= 0.0)) throw std::invalid_argument("ridge lambda must be non-negative");
    ClosedFormHead out;
    out.design_ = features.with_constant_column(1.0);
    out.targets_ = one_hot(labels, num_classes);
    out.min_norm_ = lambda == 0.0;
    if (out.min_norm_) {
        out.inverse_ = pseudo_inverse(out.design_);
        out.theta_ = matmul(out.inverse_, out.targets_);
    } else {
        Matrix normal = matmul_tn(out.design_, out.design_);
        for (std::size_t i = 0; i < normal.rows(); ++i) normal(i, i) += lambda;
        out.inverse_ = spd_inverse(normal);
        out.theta_ = matmul(out.inverse_, matmul_tn(out.design_, out.targets_));
    }
    const std::size_t m = features.cols();
    out.head_.weight = Matrix(m, num_classes);
    out.head_.bias = Matrix(1, num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t r = 0; r < m; ++r) out.head_.weight(r, c) = out.theta_(r, c);
        out.head_.bias(0, c) = out.theta_(m, c);
    }
    return out;
}

Matrix ClosedFormHead::pullback(const LinearHead& d_head) const {
    const std::size_t m = head_.weight.rows();
    const std::size_t k = head_.weight.cols();
    Matrix g(m + 1, k);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t r = 0; r < m; ++r) g(r, c) = d_head.weight(r, c);
        g(m, c) = d_head.bias(0, c);
    }
    const Matrix& a = design_;
    const Matrix residual = targets_ - matmul(a, theta_);
    Matrix d_design;
    if (!min_norm_) {
        // θ = M⁻¹AᵀY, M = AᵀA + λI:  ∂L/∂A = (Y − Aθ)Bᵀ − A B θᵀ with B = M⁻¹G.
        const Matrix b = matmul(inverse_, g);
        d_design = matmul_nt(residual, b) - matmul(a, matmul_nt(b, theta_));
    } else {
        // θ = A⁺Y with the constant-rank derivative of the pseudo-inverse P = A⁺:
        // ∂L/∂A = −Pᵀ G θᵀ + (Y − Aθ) Gᵀ P Pᵀ + Pᵀ θ Gᵀ (I − P A).
        const Matrix& p = inverse_;
        const Matrix pt = p.transpose();
        const Matrix ppt = matmul_nt(p, p);
        Matrix proj = Matrix::identity(a.cols()) - matmul(p, a);
        d_design = matmul(pt, matmul_nt(g, theta_)) * -1.0;
        d_design += matmul(matmul_nt(residual, g), ppt);
        d_design += matmul(matmul(pt, matmul_nt(theta_, g)), proj);
    }
    return d_design.drop_trailing_columns(1);
}

ClosedFormHead reverse_step(const MlpModel& model, const Matrix& target_x, const PseudoLabels& pseudo,
                            double lambda) {
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (std::size_t i = 0; i < pseudo.labels.size(); ++i) {
        if (pseudo.selected[i]) {
            rows.push_back(i);
            labels.push_back(pseudo.labels[i]);
        }
    }
    const Matrix h = extract(model, target_x.select_rows(rows)).features();
    return ClosedFormHead::fit(h, labels, model.num_classes(), lambda);
}

// --- outer step ----------------------------------------------------------------

CstGradients cst_gradients(const MlpModel& model, const Matrix& source_x,
                           std::span<const int> source_y, const Matrix& target_x,
                           const PseudoLabels& pseudo, const TsallisConfig& tsallis,
                           double ridge_lambda) {
    if (pseudo.labels.size() != target_x.rows() || pseudo.selected.size() != target_x.rows()) {
        throw ShapeError("pseudo-labels do not match the target batch");
    }
    const LinearHead& source_head = model.head("source");
    CstGradients out;

    const auto cache_s = extract(model, source_x);
    const Matrix& hs = cache_s.features();
    const auto ce = cross_entropy(head_logits(source_head, hs), source_y);
    auto hb_source = head_backward(source_head, hs, ce.grad);
    out.source_loss = ce.value;

    const auto cache_t = extract(model, target_x);
    const Matrix& ht = cache_t.features();
    const auto ts = tsallis_logit_loss(head_logits(source_head, ht), tsallis);
    auto hb_tsallis = head_backward(source_head, ht, ts.grad);
    out.tsallis_loss = ts.value;

    out.d_source_head = std::move(hb_source.grad);
    axpy(1.0, hb_tsallis.grad, out.d_source_head);

    Matrix d_hs = std::move(hb_source.d_features);
    Matrix d_ht = std::move(hb_tsallis.d_features);

    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (std::size_t i = 0; i < pseudo.labels.size(); ++i) {
        if (pseudo.selected[i]) {
            rows.push_back(i);
            labels.push_back(pseudo.labels[i]);
        }
    }
    if (!rows.empty()) {
        const auto closed = ClosedFormHead::fit(ht.select_rows(rows), labels, model.num_classes(),
                                                ridge_lambda);
        const auto cycle = cross_entropy(head_logits(closed.head(), hs), source_y);
        const auto hb_cycle = head_backward(closed.head(), hs, cycle.grad);
        out.cycle_loss = cycle.value;
        out.has_cycle = true;
        d_hs += hb_cycle.d_features;
        const Matrix d_selected = closed.pullback(hb_cycle.grad);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto dst = d_ht.row(rows[i]);
            const auto src = d_selected.row(i);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
    }

    out.d_extractor = extractor_backward(model, cache_s, d_hs);
    axpy(1.0, extractor_backward(model, cache_t, d_ht), out.d_extractor);
    return out;
}

double cst_objective(const MlpModel& model, const Matrix& source_x, std::span<const int> source_y,
                     const Matrix& target_x, const PseudoLabels& pseudo,
                     const TsallisConfig& tsallis, double ridge_lambda) {
    return cst_gradients(model, source_x, source_y, target_x, pseudo, tsallis, ridge_lambda).total();
}

CstGradients cst_outer_update(MlpModel& model, const Matrix& source_x,
                              std::span<const int> source_y, const Matrix& target_x,
                              const PseudoLabels& pseudo, const TsallisConfig& tsallis,
                              double ridge_lambda, double learning_rate) {
    auto grads = cst_gradients(model, source_x, source_y, target_x, pseudo, tsallis, ridge_lambda);
    if (!std::isfinite(grads.total())) {
        throw TrainingDiverged(fmt::format("CST step produced a non-finite loss (source {}, cycle {}, "
                                           "tsallis {})",
                                           grads.source_loss, grads.cycle_loss, grads.tsallis_loss));
    }
    axpy(-learning_rate, grads.d_extractor, model.layers());
    axpy(-learning_rate, grads.d_source_head, model.head("source"));
    bool finite = model.head("source").weight.all_finite() && model.head("source").bias.all_finite();
    for (const auto& layer : model.layers()) finite = finite && layer.weight.all_finite() && layer.bias.all_finite();
    if (!finite) {
        throw TrainingDiverged("CST step produced non-finite parameters");
    }
    return grads;
}

EpochRecord evaluate_epoch(const MlpModel& model, const Dataset& source, const Dataset* target,
                           const TsallisConfig& tsallis, double ridge_lambda) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    EpochRecord rec;
    rec.alpha = tsallis.alpha;
    const LinearHead& head = model.head("source");
    const Matrix hs = extract(model, source.features).features();
    rec.source_loss = cross_entropy(head_logits(head, hs), source.label_values()).value;
    rec.cycle_loss = rec.tsallis_loss = rec.target_acc = rec.pl_tv = nan;
    if (target == nullptr) return rec;

    const Matrix ht = extract(model, target->features).features();
    const Prediction pred = predict_from_logits(head_logits(head, ht));
    rec.tsallis_loss = tsallis_batch_loss(pred.probabilities, tsallis).value;
    const auto closed = ClosedFormHead::fit(ht, pred.labels, model.num_classes(), ridge_lambda);
    rec.cycle_loss = cross_entropy(head_logits(closed.head(), hs), source.label_values()).value;
    if (target->has_labels()) {
        const auto& truth = target->label_values();
        std::size_t hits = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) hits += pred.labels[i] == truth[i] ? 1 : 0;
        rec.target_acc = static_cast<double>(hits) / static_cast<double>(truth.size());
        rec.pl_tv = tv_distance(label_histogram(pred.labels, model.num_classes()),
                                label_histogram(truth, model.num_classes()));
    }
    return rec;
}

// --- trainers --------------------------------------------------------------------

namespace {

/// Walks a reshuffled permutation of [0, n); wraps with a fresh shuffle.
class BatchSampler {
public:
    BatchSampler(std::size_t n, RngStream rng) : rng_(std::move(rng)), order_(n) {
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        rng_.shuffle(order_);
    }

    std::vector<std::size_t> next(std::size_t batch) {
        batch = std::min(batch, order_.size());
        std::vector<std::size_t> out;
        out.reserve(batch);
        while (out.size() < batch) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    RngStream rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

constexpr std::uint64_t kSourceStream = 101;
constexpr std::uint64_t kTargetStream = 102;

std::vector<int> gather(const std::vector<int>& values, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(values[i]);
    return out;
}

void require_finite(const EpochRecord& rec, const std::string& method) {
    if (!std::isfinite(rec.source_loss)) {
        throw TrainingDiverged(fmt::format("{}: non-finite source loss at epoch {}", method, rec.epoch));
    }
}

struct SupervisedGrad {
    double loss = 0.0;
    std::vector<DenseLayer> d_extractor;
    LinearHead d_head;
};

SupervisedGrad supervised_grad(const MlpModel& model, const Matrix& x, std::span<const int> y,
                               const std::vector<bool>& mask, double weight) {
    const LinearHead& head = model.head("source");
    const auto cache = extract(model, x);
    auto ce = cross_entropy(head_logits(head, cache.features()), y, mask);
    ce.grad *= weight;
    auto hb = head_backward(head, cache.features(), ce.grad);
    return {weight * ce.value, extractor_backward(model, cache, hb.d_features), std::move(hb.grad)};
}

TrainReport train_supervised(MlpModel& model, const Dataset& source, const Dataset* target,
                             const TrainConfig& cfg, bool self_train) {
    cfg.validate();
    source.validate();
    if (target) target->validate();
    TrainReport report;
    report.method = self_train ? "standard_st" : "source_only";

    BatchSampler src(source.size(), RngStream(cfg.seed, kSourceStream));
    BatchSampler tgt(target ? target->size() : 1, RngStream(cfg.seed, kTargetStream));
    const auto& ys = source.label_values();
    const bool use_target = self_train && cfg.target_weight > 0.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate_at(epoch);
        // Teacher refresh: pseudo-labels come from the model as it enters the epoch.
        PseudoLabels teacher;
        if (use_target) {
            teacher = forward_step(model, target->features, cfg.selection, cfg.selection_threshold);
        }
        for (std::size_t it = 0; it < cfg.iters_per_epoch; ++it) {
            const auto idx_s = src.next(cfg.batch_size);
            const auto batch_y = gather(ys, idx_s);
            auto step = supervised_grad(model, source.features.select_rows(idx_s), batch_y,
                                        std::vector<bool>(idx_s.size(), true), 1.0);
            if (use_target) {
                const auto idx_t = tgt.next(cfg.batch_size);
                std::vector<bool> mask;
                mask.reserve(idx_t.size());
                for (auto i : idx_t) mask.push_back(teacher.selected[i]);
                const auto t = supervised_grad(model, target->features.select_rows(idx_t),
                                               gather(teacher.labels, idx_t), mask, cfg.target_weight);
                step.loss += t.loss;
                axpy(1.0, t.d_extractor, step.d_extractor);
                axpy(1.0, t.d_head, step.d_head);
            }
            if (!std::isfinite(step.loss)) {
                throw TrainingDiverged(fmt::format("{}: non-finite loss at epoch {} iteration {}",
                                                   report.method, epoch, it));
            }
            axpy(-lr, step.d_extractor, model.layers());
            axpy(-lr, step.d_head, model.head("source"));
        }
        EpochRecord rec = evaluate_epoch(model, source, target, cfg.tsallis, cfg.ridge_lambda);
        rec.epoch = epoch;
        rec.learning_rate = lr;
        require_finite(rec, report.method);
        report.epochs.push_back(rec);
    }
    return report;
}

}  // namespace

TrainReport train_cst(MlpModel& model, const Dataset& source, const Dataset& target,
                      const TrainConfig& cfg) {
    cfg.validate();
    source.validate();
    target.validate();
    TrainReport report;
    report.method = "cst";

    BatchSampler src(source.size(), RngStream(cfg.seed, kSourceStream));
    BatchSampler tgt(target.size(), RngStream(cfg.seed, kTargetStream));
    const auto& ys = source.label_values();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate_at(epoch);
        TsallisConfig tsallis = cfg.tsallis;
        if (cfg.select_alpha) {
            tsallis.alpha = select_alpha(model, source, target, cfg.tsallis, cfg.alpha_budget).alpha;
        }
        for (std::size_t it = 0; it < cfg.iters_per_epoch; ++it) {
            const auto idx_s = src.next(cfg.batch_size);
            const auto idx_t = tgt.next(cfg.batch_size);
            const Matrix xs = source.features.select_rows(idx_s);
            const Matrix xt = target.features.select_rows(idx_t);
            const auto pseudo = forward_step(model, xt, cfg.selection, cfg.selection_threshold);
            cst_outer_update(model, xs, gather(ys, idx_s), xt, pseudo, tsallis, cfg.ridge_lambda, lr);
        }
        EpochRecord rec = evaluate_epoch(model, source, &target, tsallis, cfg.ridge_lambda);
        rec.epoch = epoch;
        rec.learning_rate = lr;
        require_finite(rec, report.method);
        report.epochs.push_back(rec);
    }
    return report;
}

TrainReport train_standard_st(MlpModel& model, const Dataset& source, const Dataset& target,
                              const TrainConfig& cfg) {
    return train_supervised(model, source, &target, cfg, true);
}

TrainReport train_source_only(MlpModel& model, const Dataset& source, const TrainConfig& cfg) {
    return train_supervised(model, source, nullptr, cfg, false);
}

TrainReport train_source_only(MlpModel& model, const Dataset& source, const Dataset& eval_target,
                              const TrainConfig& cfg) {
    return train_supervised(model, source, &eval_target, cfg, false);
}

}  // namespace cst
