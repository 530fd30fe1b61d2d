#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "cst/losses.hpp"
#include "cst/numerics.hpp"
#include "cst/trainers.hpp"
#include "oracles.hpp"

using namespace cst;

namespace {

MlpModel small_model(std::uint64_t seed, std::size_t input = 2, std::size_t k = 3) {
    RngStream rng(seed, 0);
    MlpShape shape;
    shape.input_dim = input;
    shape.hidden = {6};
    shape.feature_dim = 4;
    shape.num_classes = k;
    return MlpModel::create(shape, rng);
}

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

ShiftedPair toy_pair(ShiftKind kind, std::uint64_t seed, std::size_t per_class = 40) {
    ShiftParams p;
    p.kind = kind;
    p.per_class_labeled = per_class;
    p.per_class_unlabeled = per_class;
    p.seed = seed;
    return generate_shifted_pair(make_shift_spec(p));
}

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.iters_per_epoch = 4;
    cfg.batch_size = 16;
    cfg.select_alpha = false;
    cfg.tsallis.alpha = 1.5;
    cfg.seed = 5;
    return cfg;
}

/// Mean squared error of [H, 1]θ against one-hot targets.
double head_mse(const Matrix& h, const Matrix& y, const Matrix& theta) {
    const Matrix r = matmul(h.with_constant_column(1.0), theta) - y;
    return r.frobenius_norm_sq() / static_cast<double>(h.rows());
}

}  // namespace

TEST_SUITE("trainers") {

TEST_CASE("forward step takes the argmax and applies the selection mask") {
    DenseLayer identity{Matrix::identity(3), Matrix(1, 3)};
    MlpModel model({identity}, 3);
    model.set_head("source", {Matrix::identity(3) * 10.0, Matrix(1, 3)});
    // tanh features keep the order of the raw inputs.
    const Matrix x{{0.3, 0.1, 0.0}, {0.0, 0.0, 0.2}, {0.05, 0.04, 0.0}};
    const auto plain = forward_step(model, x);
    CHECK(plain.labels == std::vector<int>{0, 2, 0});
    CHECK(plain.selected_count() == 3);

    const auto conf = forward_step(model, x, SelectionRule::confidence, 0.9);
    const auto probs = mlp_forward(model, "source", x).probabilities;
    for (std::size_t r = 0; r < 3; ++r) {
        double top = 0.0;
        for (double p : probs.row(r)) top = std::max(top, p);
        CHECK(conf.selected[r] == (top >= 0.9));
    }
    CHECK_FALSE(conf.selected[2]);

    const auto ent = forward_step(model, x, SelectionRule::entropy, 0.5);
    CHECK_FALSE(ent.selected[2]);
    CHECK(parse_selection_rule(to_string(SelectionRule::entropy)) == SelectionRule::entropy);
    CHECK_THROWS_AS(parse_selection_rule("vote"), std::invalid_argument);
}

TEST_CASE("closed-form head on identity features recovers the identity") {
    const auto fit = ClosedFormHead::fit(Matrix::identity(3), std::vector<int>{0, 1, 2}, 3, 0.0);
    // With a bias column the min-norm solution splits mass between weights and bias,
    // but the fitted values still reproduce the one-hot targets exactly.
    const Matrix fitted = matmul(Matrix::identity(3).with_constant_column(1.0), fit.theta());
    CHECK(max_abs_diff(fitted, Matrix::identity(3)) < 1e-12);
}

TEST_CASE("duplicated rows give the same head as the deduplicated system") {
    RngStream rng(1, 0);
    const Matrix h = random_matrix(3, 5, rng);
    const std::vector<int> y = {0, 1, 1};
    Matrix dup(6, 5);
    std::vector<int> y_dup;
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t c = 0; c < 5; ++c) dup(r, c) = h(r % 3, c);
        y_dup.push_back(y[r % 3]);
    }
    const auto a = ClosedFormHead::fit(h, y, 2, 0.0);
    const auto b = ClosedFormHead::fit(dup, y_dup, 2, 0.0);
    CHECK(max_abs_diff(a.theta(), b.theta()) < 1e-10);
    // Pseudo-inverse oracle: θ = A⁺Y.
    const Matrix expected = matmul(pseudo_inverse(h.with_constant_column(1.0)), one_hot(y, 2));
    CHECK(max_abs_diff(a.theta(), expected) < 1e-10);
}

TEST_CASE("closed-form head is optimal against random heads of equal norm") {
    RngStream rng(2, 0);
    for (double lambda : {0.0, 1e-4}) {
        const Matrix h = random_matrix(20, 4, rng);
        std::vector<int> y(20);
        for (int& v : y) v = static_cast<int>(rng.uniform_index(3));
        const auto fit = ClosedFormHead::fit(h, y, 3, lambda);
        const Matrix targets = one_hot(y, 3);
        const double best = head_mse(h, targets, fit.theta());
        const double norm = std::sqrt(fit.theta().frobenius_norm_sq());
        for (int trial = 0; trial < 100; ++trial) {
            Matrix other = random_matrix(5, 3, rng);
            other *= norm / std::sqrt(other.frobenius_norm_sq());
            CHECK(best <= head_mse(h, targets, other) + 1e-12);
        }
    }
}

TEST_CASE("reverse step fits only the selected rows") {
    MlpModel model = small_model(3);
    RngStream rng(3, 1);
    const Matrix x = random_matrix(10, 2, rng);
    PseudoLabels pseudo = forward_step(model, x);
    pseudo.selected.assign(10, false);
    for (std::size_t r : {1u, 4u, 5u, 8u}) pseudo.selected[r] = true;
    const auto head = reverse_step(model, x, pseudo, 1e-4);
    const std::vector<std::size_t> rows = {1, 4, 5, 8};
    std::vector<int> labels;
    for (std::size_t r : rows) labels.push_back(pseudo.labels[r]);
    const auto direct = ClosedFormHead::fit(extract(model, x.select_rows(rows)).features(), labels, 3, 1e-4);
    CHECK(max_abs_diff(head.theta(), direct.theta()) < 1e-12);
}

TEST_CASE("outer gradient matches finite differences with pseudo-labels frozen") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        MlpModel model = small_model(10 + seed);
        RngStream rng(seed, 2);
        const Matrix xs = random_matrix(6, 2, rng), xt = random_matrix(8, 2, rng);
        const std::vector<int> ys = {0, 1, 2, 0, 1, 2};
        const auto pseudo = forward_step(model, xt);
        TsallisConfig ts;
        ts.alpha = 1.4;
        const auto g = cst_gradients(model, xs, ys, xt, pseudo, ts, 1e-3);
        CHECK(g.has_cycle);
        CHECK(g.total() == doctest::Approx(cst_objective(model, xs, ys, xt, pseudo, ts, 1e-3)));

        // The extractor gradient includes the cycle term; the source head's does not.
        const auto ext = gradcheck(
            [&](const Matrix& p) {
                MlpModel m = model;
                unflatten(p, m.layers());
                return cst_objective(m, xs, ys, xt, pseudo, ts, 1e-3);
            },
            flatten(model.layers()), flatten(g.d_extractor), 1e-5, 1e-4);
        CHECK(ext.passed);
        const auto head = gradcheck(
            [&](const Matrix& p) {
                MlpModel m = model;
                unflatten(p, m.head("source"));
                const auto r = cst_gradients(m, xs, ys, xt, pseudo, ts, 1e-3);
                return r.source_loss + r.tsallis_loss;
            },
            flatten(model.head("source")), flatten(g.d_source_head), 1e-5, 1e-4);
        CHECK(head.passed);
    }
}

TEST_CASE("flipping a pseudo-label leaves the source-head gradient untouched") {
    MlpModel model = small_model(20);
    RngStream rng(20, 1);
    const Matrix xs = random_matrix(6, 2, rng), xt = random_matrix(8, 2, rng);
    const std::vector<int> ys = {0, 1, 2, 0, 1, 2};
    TsallisConfig ts;
    auto pseudo = forward_step(model, xt);
    const auto before = cst_gradients(model, xs, ys, xt, pseudo, ts, 1e-3);
    pseudo.labels[0] = (pseudo.labels[0] + 1) % 3;
    const auto after = cst_gradients(model, xs, ys, xt, pseudo, ts, 1e-3);
    // The labels enter only through the cycle term, which never reaches θs.
    CHECK(flatten(before.d_source_head) == flatten(after.d_source_head));
    CHECK(before.source_loss == after.source_loss);
    CHECK(before.tsallis_loss == after.tsallis_loss);
    CHECK(before.cycle_loss != after.cycle_loss);
}

TEST_CASE("small enough steps never increase the objective") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        MlpModel model = small_model(30 + seed);
        RngStream rng(seed, 3);
        const Matrix xs = random_matrix(6, 2, rng), xt = random_matrix(8, 2, rng);
        const std::vector<int> ys = {0, 1, 2, 2, 1, 0};
        const auto pseudo = forward_step(model, xt);
        TsallisConfig ts;
        ts.alpha = 1.2;
        const double start = cst_objective(model, xs, ys, xt, pseudo, ts, 1e-3);
        bool descended = false;
        for (double lr = 1.0; lr > 1e-8 && !descended; lr *= 0.5) {
            MlpModel m = model;
            cst_outer_update(m, xs, ys, xt, pseudo, ts, 1e-3, lr);
            descended = cst_objective(m, xs, ys, xt, pseudo, ts, 1e-3) <= start;
        }
        CHECK(descended);
    }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    MlpModel model = small_model(40);
    const MlpModel copy = model;
    RngStream rng(40, 1);
    const Matrix xs = random_matrix(6, 2, rng), xt = random_matrix(8, 2, rng);
    const std::vector<int> ys = {0, 1, 2, 0, 1, 2};
    cst_outer_update(model, xs, ys, xt, forward_step(model, xt), TsallisConfig{}, 1e-3, 0.0);
    CHECK(flatten(model.layers()) == flatten(copy.layers()));
    CHECK(flatten(model.head("source")) == flatten(copy.head("source")));
}

TEST_CASE("learning rate schedule follows the configured decay") {
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.learning_rate = 0.1;
    cfg.lr_decay_factor = 0.1;
    for (std::size_t e = 0; e < 20; ++e) CHECK(cfg.learning_rate_at(e) == doctest::Approx(0.1));
    for (std::size_t e = 20; e < 30; ++e) CHECK(cfg.learning_rate_at(e) == doctest::Approx(0.01));
    cfg.lr_decay_period = 4;
    cfg.lr_decay_factor = 0.5;
    CHECK(cfg.learning_rate_at(3) == doctest::Approx(0.1));
    CHECK(cfg.learning_rate_at(4) == doctest::Approx(0.05));
    CHECK(cfg.learning_rate_at(9) == doctest::Approx(0.025));

    auto pair = toy_pair(ShiftKind::iid, 1, 10);
    MlpModel model = small_model(41);
    TrainConfig run = quick_config();
    run.epochs = 6;
    run.lr_decay_period = 2;
    run.lr_decay_factor = 0.5;
    const auto report = train_source_only(model, pair.labeled, run);
    REQUIRE(report.epochs.size() == 6);
    for (const auto& rec : report.epochs) CHECK(rec.learning_rate == run.learning_rate_at(rec.epoch));
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.ridge_lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.selection = SelectionRule::confidence;
    cfg.selection_threshold = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("zero epochs leave the model unchanged") {
    auto pair = toy_pair(ShiftKind::covariate_shift, 2, 10);
    MlpModel model = small_model(42);
    const MlpModel copy = model;
    TrainConfig cfg = quick_config();
    cfg.epochs = 0;
    CHECK(train_cst(model, pair.labeled, pair.unlabeled, cfg).epochs.empty());
    CHECK(train_standard_st(model, pair.labeled, pair.unlabeled, cfg).epochs.empty());
    CHECK(train_source_only(model, pair.labeled, cfg).epochs.empty());
    CHECK(flatten(model.layers()) == flatten(copy.layers()));
}

TEST_CASE("self-training with zero target weight follows the source-only trajectory") {
    auto pair = toy_pair(ShiftKind::covariate_shift, 3, 20);
    TrainConfig cfg = quick_config();
    cfg.target_weight = 0.0;
    MlpModel a = small_model(43), b = small_model(43);
    train_standard_st(a, pair.labeled, pair.unlabeled, cfg);
    train_source_only(b, pair.labeled, pair.unlabeled, cfg);
    CHECK(flatten(a.layers()) == flatten(b.layers()));
    CHECK(flatten(a.head("source")) == flatten(b.head("source")));
}

TEST_CASE("training runs are deterministic and report finite records") {
    auto pair = toy_pair(ShiftKind::covariate_shift, 4, 20);
    TrainConfig cfg = quick_config();
    cfg.select_alpha = true;
    cfg.alpha_budget.steps = 5;
    MlpModel a = small_model(44), b = small_model(44);
    const auto ra = train_cst(a, pair.labeled, pair.unlabeled, cfg);
    const auto rb = train_cst(b, pair.labeled, pair.unlabeled, cfg);
    std::ostringstream ca, cb;
    ra.write_csv(ca);
    rb.write_csv(cb);
    CHECK(ca.str() == cb.str());
    CHECK(ca.str().rfind("epoch,source_loss,cycle_loss,tsallis_loss,target_acc,pl_tv,alpha\n", 0) == 0);
    REQUIRE(ra.epochs.size() == cfg.epochs);
    for (const auto& rec : ra.epochs) {
        CHECK(std::isfinite(rec.source_loss));
        CHECK(std::isfinite(rec.cycle_loss));
        CHECK(std::isfinite(rec.pl_tv));
        CHECK((rec.alpha >= 1.0 && rec.alpha <= 2.0));
        CHECK((rec.target_acc >= 0.0 && rec.target_acc <= 1.0));
    }
    CHECK(ra.summary()["method"] == "cst");
}

TEST_CASE("separable source is fit perfectly by source-only training") {
    ShiftParams p;
    p.num_classes = 2;
    p.spread = 0.05;
    p.per_class_labeled = 30;
    p.seed = 6;
    const auto pair = generate_shifted_pair(make_shift_spec(p));
    MlpModel model = small_model(45, 2, 2);
    TrainConfig cfg = quick_config();
    cfg.epochs = 20;
    cfg.iters_per_epoch = 10;
    cfg.learning_rate = 0.5;
    train_source_only(model, pair.labeled, cfg);
    const auto labels = mlp_forward(model, "source", pair.labeled.features).labels;
    CHECK(labels == pair.labeled.label_values());
}

TEST_CASE("divergence surfaces as TrainingDiverged") {
    MlpModel model = small_model(46);
    RngStream rng(46, 1);
    const Matrix xs = random_matrix(6, 2, rng), xt = random_matrix(8, 2, rng);
    const std::vector<int> ys = {0, 1, 2, 0, 1, 2};
    CHECK_THROWS_AS(cst_outer_update(model, xs, ys, xt, forward_step(model, xt), TsallisConfig{}, 1e-3,
                                     std::numeric_limits<double>::infinity()),
                    TrainingDiverged);
}

}
