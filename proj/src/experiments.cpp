#include "cst/experiments.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include <fmt/format.h>

#include "cst/losses.hpp"
#include "cst/numerics.hpp"
#include "cst/tsallis.hpp"

namespace cst {

namespace {

constexpr std::uint64_t kModelInitStream = 201;
constexpr std::uint64_t kRobustnessStream = 301;
constexpr std::uint64_t kGradcheckStream = 401;

MlpModel fresh_model(const ShiftParams& data, const std::vector<std::size_t>& hidden,
                     std::size_t feature_dim, std::uint64_t seed) {
    MlpShape shape;
    shape.input_dim = data.dim;
    shape.hidden = hidden;
    shape.feature_dim = feature_dim;
    shape.num_classes = data.num_classes;
    RngStream rng(seed, kModelInitStream);
    return MlpModel::create(shape, rng);
}

double accuracy(const MlpModel& model, const Dataset& data) {
    const auto pred = mlp_forward(model, "source", data.features);
    const auto& truth = data.label_values();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += pred.labels[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

void validate_shape(const std::vector<std::size_t>& hidden, std::size_t feature_dim) {
    if (feature_dim == 0) throw std::invalid_argument("feature_dim must be positive");
    for (auto h : hidden) {
        if (h == 0) throw std::invalid_argument("hidden widths must be positive");
    }
}

}  // namespace

// --- toy domain adaptation --------------------------------------------------------

void ToyDaConfig::validate() const {
    make_shift_spec(data).validate();
    validate_shape(hidden, feature_dim);
    train.validate();
}

double ToyDaResult::final_accuracy(const std::string& method) const {
    const auto it = reports.find(method);
    if (it == reports.end()) throw std::out_of_range("no report for method " + method);
    return it->second.epochs.empty() ? warm_target_acc : it->second.epochs.back().target_acc;
}

nlohmann::json ToyDaResult::comparison() const {
    nlohmann::json j;
    j["warm_target_acc"] = warm_target_acc;
    for (const auto& [method, report] : reports) j["methods"][method] = report.summary();
    j["cst_minus_source_only"] = final_accuracy("cst") - final_accuracy("source_only");
    j["cst_minus_standard_st"] = final_accuracy("cst") - final_accuracy("standard_st");
    return j;
}

ToyDaConfig default_toy_da_config() {
    ToyDaConfig cfg;
    cfg.data.kind = ShiftKind::covariate_shift;
    cfg.data.rotation = 0.2;
    cfg.data.translation = 2.0;
    cfg.train.learning_rate = 0.05;
    return cfg;
}

ToyDaResult run_toy_da(const ToyDaConfig& config) {
    config.validate();
    const auto pair = generate_shifted_pair(make_shift_spec(config.data));
    MlpModel warm = fresh_model(config.data, config.hidden, config.feature_dim, config.train.seed);
    if (config.warmup_epochs > 0) {
        TrainConfig warmup = config.train;
        warmup.epochs = config.warmup_epochs;
        warmup.lr_decay_factor = 1.0;
        train_source_only(warm, pair.labeled, warmup);
    }

    ToyDaResult result;
    result.warm_target_acc = accuracy(warm, pair.unlabeled);
    {
        MlpModel model = warm;
        result.reports["cst"] = train_cst(model, pair.labeled, pair.unlabeled, config.train);
    }
    {
        MlpModel model = warm;
        result.reports["standard_st"] = train_standard_st(model, pair.labeled, pair.unlabeled, config.train);
    }
    {
        MlpModel model = warm;
        result.reports["source_only"] = train_source_only(model, pair.labeled, pair.unlabeled, config.train);
    }
    return result;
}

// --- pseudo-label diagnostics -------------------------------------------------------

void DiagnoseConfig::validate() const {
    make_shift_spec(data).validate();
    validate_shape(hidden, feature_dim);
    train.validate();
    if (!(options.robustness_radius > 0.0)) throw std::invalid_argument("robustness radius must be positive");
    if (options.robustness_probes < 1) throw std::invalid_argument("robustness probes must be >= 1");
    if (options.margin_bins < 1) throw std::invalid_argument("margin bins must be >= 1");
}

double DiagnosePair::auc_gap(const std::string& criterion) const {
    const auto a = iid.roc.find(criterion);
    const auto b = shift.roc.find(criterion);
    if (a == iid.roc.end() || b == shift.roc.end()) return std::nan("");
    return a->second.auc - b->second.auc;
}

double DiagnosePair::tv_gap() const { return shift.d_tv - iid.d_tv; }

nlohmann::json DiagnosePair::to_json() const {
    return {{"iid", iid.to_json()},
            {"covariate-shift", shift.to_json()},
            {"auc_gap_confidence", auc_gap("confidence")},
            {"auc_gap_entropy", auc_gap("entropy")},
            {"tv_gap", tv_gap()}};
}

DiagnoseConfig default_diagnose_config() {
    DiagnoseConfig cfg;
    cfg.data.rotation = 0.2;
    cfg.data.translation = 2.0;
    cfg.train.learning_rate = 0.05;
    return cfg;
}

DiagnosePair run_diagnose_pair(const DiagnoseConfig& config) {
    config.validate();
    auto run = [&](ShiftKind kind) {
        ShiftParams params = config.data;
        params.kind = kind;
        const auto pair = generate_shifted_pair(make_shift_spec(params));
        MlpModel model = fresh_model(params, config.hidden, config.feature_dim, config.train.seed);
        train_source_only(model, pair.labeled, config.train);
        const ProbabilityFn probs = [&model](const Matrix& x) {
            return mlp_forward(model, "source", x).probabilities;
        };
        RngStream rng(config.train.seed, kRobustnessStream);
        return diagnose(probs, pair.unlabeled, config.options, rng);
    };
    return {run(ShiftKind::iid), run(ShiftKind::covariate_shift)};
}

// --- gradient checks --------------------------------------------------------------

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, RngStream& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

std::vector<int> random_labels(std::size_t n, std::size_t k, RngStream& rng) {
    std::vector<int> out(n);
    for (auto& y : out) y = static_cast<int>(rng.uniform_index(k));
    return out;
}

/// Small instance shared by every check.
struct Instance {
    MlpModel model;
    Matrix source_x;
    std::vector<int> source_y;
    Matrix target_x;
    PseudoLabels pseudo;
};

Instance make_instance(std::uint64_t seed) {
    RngStream rng(seed, kGradcheckStream);
    MlpShape shape;
    shape.input_dim = 3;
    shape.hidden = {5};
    shape.feature_dim = 4;
    shape.num_classes = 3;
    Instance inst;
    inst.model = MlpModel::create(shape, rng);
    inst.source_x = random_matrix(6, shape.input_dim, rng);
    inst.source_y = random_labels(6, shape.num_classes, rng);
    inst.target_x = random_matrix(8, shape.input_dim, rng);
    inst.pseudo = forward_step(inst.model, inst.target_x);
    return inst;
}

class Suite {
public:
    explicit Suite(const GradcheckConfig& cfg) : cfg_(cfg) {}

    void check(std::string name, const Matrix& params, const Matrix& analytic, const ScalarLoss& loss) {
        out_.push_back({std::move(name), params.size(), gradcheck(loss, params, analytic, cfg_.step,
                                                                  cfg_.tolerance)});
    }

    std::vector<GradientCheck> take() { return std::move(out_); }

private:
    GradcheckConfig cfg_;
    std::vector<GradientCheck> out_;
};

void check_cst(Suite& suite, const std::string& prefix, const Instance& inst, double lambda,
               const TsallisConfig& tsallis, bool inject_bug) {
    const auto grads = cst_gradients(inst.model, inst.source_x, inst.source_y, inst.target_x,
                                     inst.pseudo, tsallis, lambda);
    Matrix d_extractor = flatten(grads.d_extractor);
    if (inject_bug) d_extractor.data()[0] += 1e-2 * std::max(1.0, std::abs(d_extractor.data()[0]));
    suite.check(prefix + ".extractor", flatten(inst.model.layers()), d_extractor, [&](const Matrix& p) {
        MlpModel m = inst.model;
        unflatten(p, m.layers());
        return cst_objective(m, inst.source_x, inst.source_y, inst.target_x, inst.pseudo, tsallis, lambda);
    });
    suite.check(prefix + ".source_head", flatten(inst.model.head("source")), flatten(grads.d_source_head),
                [&](const Matrix& p) {
                    MlpModel m = inst.model;
                    unflatten(p, m.head("source"));
                    return cst_objective(m, inst.source_x, inst.source_y, inst.target_x, inst.pseudo,
                                         tsallis, lambda);
                });
}

void check_pullback(Suite& suite, const std::string& name, const Matrix& target_h,
                    const Matrix& source_h, const std::vector<int>& source_y,
                    const std::vector<int>& pseudo, std::size_t k, double lambda) {
    auto loss_of = [&](const Matrix& h) {
        const auto closed = ClosedFormHead::fit(h, pseudo, k, lambda);
        return cross_entropy(head_logits(closed.head(), source_h), source_y).value;
    };
    const auto closed = ClosedFormHead::fit(target_h, pseudo, k, lambda);
    const auto ce = cross_entropy(head_logits(closed.head(), source_h), source_y);
    const auto hb = head_backward(closed.head(), source_h, ce.grad);
    suite.check(name, target_h, closed.pullback(hb.grad), loss_of);
}

}  // namespace

std::vector<GradientCheck> run_gradcheck_suite(const GradcheckConfig& config) {
    Suite suite(config);
    Instance inst = make_instance(config.seed);
    const std::size_t k = inst.model.num_classes();
    const LinearHead& head = inst.model.head("source");
    RngStream rng(config.seed, kGradcheckStream + 1);

    // Losses w.r.t. logits.
    const Matrix logits = random_matrix(5, k, rng, 2.0);
    const auto labels = random_labels(5, k, rng);
    suite.check("cross_entropy.logits", logits, cross_entropy(logits, labels).grad,
                [&](const Matrix& z) { return cross_entropy(z, labels).value; });
    const std::vector<bool> mask = {true, false, true, true, false};
    suite.check("cross_entropy_masked.logits", logits, cross_entropy(logits, labels, mask).grad,
                [&](const Matrix& z) { return cross_entropy(z, labels, mask).value; });
    for (double alpha : {1.0, 1.5, 2.0}) {
        TsallisConfig ts;
        ts.alpha = alpha;
        suite.check(fmt::format("tsallis.logits.alpha={:.1f}", alpha), logits,
                    tsallis_logit_loss(logits, ts).grad,
                    [&](const Matrix& z) { return tsallis_logit_loss(z, ts).value; });
    }

    // Model backward.
    const auto source_logits = head_logits(head, extract(inst.model, inst.source_x).features());
    const auto upstream = cross_entropy(source_logits, inst.source_y).grad;
    const auto g = backward(inst.model, "source", inst.source_x, upstream);
    auto model_loss = [&](const MlpModel& m) {
        return cross_entropy(head_logits(m.head("source"), extract(m, inst.source_x).features()),
                             inst.source_y)
            .value;
    };
    suite.check("model.head", flatten(head), flatten(g.head), [&](const Matrix& p) {
        MlpModel m = inst.model;
        unflatten(p, m.head("source"));
        return model_loss(m);
    });
    suite.check("model.extractor", flatten(inst.model.layers()), flatten(g.extractor), [&](const Matrix& p) {
        MlpModel m = inst.model;
        unflatten(p, m.layers());
        return model_loss(m);
    });

    // Closed-form target head, differentiated through its features.
    const Matrix hs = extract(inst.model, inst.source_x).features();
    const Matrix ht = extract(inst.model, inst.target_x).features();
    check_pullback(suite, "closed_form.features.ridge", ht, hs, inst.source_y, inst.pseudo.labels, k, 1e-2);
    check_pullback(suite, "closed_form.features.min_norm", ht, hs, inst.source_y, inst.pseudo.labels, k, 0.0);
    const std::vector<std::size_t> few = {0, 1, 2};
    const std::vector<int> few_labels(inst.pseudo.labels.begin(), inst.pseudo.labels.begin() + 3);
    check_pullback(suite, "closed_form.features.min_norm_wide", ht.select_rows(few), hs, inst.source_y,
                   few_labels, k, 0.0);

    // Full outer objective with frozen pseudo-labels.
    TsallisConfig ts;
    ts.alpha = 1.5;
    check_cst(suite, "cst.ridge", inst, 1e-2, ts, config.inject_bug);
    check_cst(suite, "cst.min_norm", inst, 0.0, ts, false);
    Instance partial = inst;
    for (std::size_t i = 0; i < partial.pseudo.selected.size(); i += 2) partial.pseudo.selected[i] = false;
    check_cst(suite, "cst.partial_selection", partial, 1e-2, ts, false);

    return suite.take();
}

}  // namespace cst
