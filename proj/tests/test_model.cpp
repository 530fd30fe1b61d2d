#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cst/losses.hpp"
#include "cst/model.hpp"
#include "cst/numerics.hpp"

using namespace cst;

namespace {

MlpModel small_model(std::uint64_t seed, std::size_t k = 3) {
    RngStream rng(seed, 0);
    MlpShape shape;
    shape.input_dim = 3;
    shape.hidden = {5};
    shape.feature_dim = 4;
    shape.num_classes = k;
    return MlpModel::create(shape, rng);
}

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("quadratic net reproduces y = x1^2 - x2^2 on the canonical solution") {
    const double c = std::pow(2.0, 1.0 / 6.0);
    const double t = std::pow(2.0, -1.0 / 3.0);
    QuadraticNet net{Matrix{{c, 0}, {0, c}, {0, 0}}, {t, -t}};
    const auto out = quad_forward(net, Matrix{{1, 0, 0}, {0, 1, 0}, {1, 1, 1}, {0, 0, 1}});
    CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(std::abs(out[2]) < 1e-15);
    CHECK(out[3] == 0.0);
}

TEST_CASE("quadratic net trivial cases") {
    RngStream rng(1, 0);
    QuadraticNet zero_head{random_matrix(4, 3, rng), {0, 0, 0}};
    for (double v : quad_forward(zero_head, random_matrix(5, 4, rng))) CHECK(v == 0.0);
    QuadraticNet net{random_matrix(4, 3, rng), {0.3, -1.0, 2.0}};
    CHECK(quad_forward(net, Matrix(1, 4))[0] == 0.0);
    CHECK_THROWS_AS(quad_forward(net, Matrix(1, 5)), ShapeError);
}

TEST_CASE("quadratic net is invariant to sign flips of phi columns") {
    RngStream rng(2, 0);
    for (int trial = 0; trial < 20; ++trial) {
        QuadraticNet net{random_matrix(5, 3, rng), {rng.normal(), rng.normal(), rng.normal()}};
        const Matrix x = random_matrix(7, 5, rng);
        const auto before = quad_forward(net, x);
        const auto col = static_cast<std::size_t>(rng.uniform_index(3));
        for (std::size_t r = 0; r < 5; ++r) net.phi(r, col) = -net.phi(r, col);
        CHECK(quad_forward(net, x) == before);
    }
}

TEST_CASE("quad_round maps to the nearest of -1, 0, 1 with ties toward 0") {
    CHECK(quad_round(0.9) == 1.0);
    CHECK(quad_round(-0.4) == 0.0);
    CHECK(quad_round(0.5) == 0.0);
    CHECK(quad_round(-0.5) == 0.0);
    CHECK(quad_round(-0.51) == -1.0);
    CHECK(quad_round(7.0) == 1.0);
}

TEST_CASE("zero weights give uniform probabilities") {
    MlpModel model = small_model(3);
    for (auto& layer : model.layers()) layer.weight *= 0.0;
    model.head("source").weight *= 0.0;
    model.head("source").bias *= 0.0;
    const auto pred = mlp_forward(model, "source", Matrix{{1, 2, 3}, {-1, 0, 4}});
    for (std::size_t r = 0; r < 2; ++r) {
        for (double p : pred.probabilities.row(r)) CHECK(p == doctest::Approx(1.0 / 3.0));
    }
    CHECK_THROWS_AS(mlp_forward(model, "target", Matrix(1, 3)), UnknownHead);
}

TEST_CASE("two-sample forward pass matches hand arithmetic") {
    // One tanh layer 2 -> 2, head 2 -> 2.
    DenseLayer layer{Matrix{{1, 0}, {0, 2}}, Matrix{{0, -1}}};
    MlpModel model({layer}, 2);
    model.set_head("source", {Matrix{{1, -1}, {0, 1}}, Matrix{{0.5, 0}}});
    const auto pred = mlp_forward(model, "source", Matrix{{1, 1}, {0, 0.5}});
    const double a = std::tanh(1.0), b = std::tanh(1.0);   // row 0: tanh(1), tanh(2 - 1)
    const double c = std::tanh(0.0), d = std::tanh(0.0);   // row 1: tanh(0), tanh(1 - 1)
    CHECK(pred.logits(0, 0) == doctest::Approx(a + 0.5));
    CHECK(pred.logits(0, 1) == doctest::Approx(-a + b));
    CHECK(pred.logits(1, 0) == doctest::Approx(c + 0.5));
    CHECK(pred.logits(1, 1) == doctest::Approx(-c + d));
    CHECK(pred.labels == std::vector<int>{0, 0});
}

TEST_CASE("backward of summed logits gives feature column sums") {
    MlpModel model = small_model(4);
    const Matrix x{{0.1, 0.2, 0.3}, {-1, 0.5, 2}, {0, 0, 1}};
    const Matrix upstream(3, 3, 1.0);
    const auto g = backward(model, "source", x, upstream);
    const Matrix h = extract(model, x).features();
    for (std::size_t i = 0; i < h.cols(); ++i) {
        double col = 0.0;
        for (std::size_t r = 0; r < h.rows(); ++r) col += h(r, i);
        for (std::size_t k = 0; k < 3; ++k) CHECK(g.head.weight(i, k) == doctest::Approx(col));
    }
    for (std::size_t k = 0; k < 3; ++k) CHECK(g.head.bias(0, k) == doctest::Approx(3.0));

    const auto zero = backward(model, "source", x, Matrix(3, 3));
    CHECK(flatten(zero.head).frobenius_norm_sq() == 0.0);
    CHECK(flatten(zero.extractor).frobenius_norm_sq() == 0.0);
}

TEST_CASE("model gradients agree with finite differences on 20 random instances") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        MlpModel model = small_model(100 + seed);
        RngStream rng(seed, 7);
        const Matrix x = random_matrix(4, 3, rng);
        const std::vector<int> y = {0, 2, 1, 2};
        auto loss_of = [&](const MlpModel& m) {
            return cross_entropy(mlp_forward(m, "source", x).logits, y).value;
        };
        const auto upstream = cross_entropy(mlp_forward(model, "source", x).logits, y).grad;
        const auto g = backward(model, "source", x, upstream);
        const auto head_report = gradcheck(
            [&](const Matrix& p) {
                MlpModel m = model;
                unflatten(p, m.head("source"));
                return loss_of(m);
            },
            flatten(model.head("source")), flatten(g.head), 1e-5, 1e-4);
        const auto ext_report = gradcheck(
            [&](const Matrix& p) {
                MlpModel m = model;
                unflatten(p, m.layers());
                return loss_of(m);
            },
            flatten(model.layers()), flatten(g.extractor), 1e-5, 1e-4);
        CHECK(head_report.passed);
        CHECK(ext_report.passed);
    }
}

TEST_CASE("permuting head columns permutes hard labels") {
    MlpModel model = small_model(5);
    RngStream rng(5, 1);
    const Matrix x = random_matrix(30, 3, rng);
    const auto before = mlp_forward(model, "source", x).labels;
    const std::vector<std::size_t> perm = {2, 0, 1};  // new column j holds old column perm[j]
    LinearHead& head = model.head("source");
    const LinearHead old = head;
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t r = 0; r < head.weight.rows(); ++r) head.weight(r, j) = old.weight(r, perm[j]);
        head.bias(0, j) = old.bias(0, perm[j]);
    }
    const auto after = mlp_forward(model, "source", x).labels;
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(perm[static_cast<std::size_t>(after[i])] == static_cast<std::size_t>(before[i]));
}

TEST_CASE("heads are shape-checked and snapshots round-trip") {
    MlpModel model = small_model(6);
    CHECK_THROWS_AS(model.set_head("target", {Matrix(3, 3), Matrix(1, 3)}), ShapeError);
    RngStream rng(6, 1);
    model.set_head("target", MlpModel::random_head(4, 3, rng));
    std::stringstream ss;
    save_model(ss, model);
    const MlpModel copy = load_model(ss);
    CHECK(flatten(copy.layers()) == flatten(model.layers()));
    CHECK(flatten(copy.head("target")) == flatten(model.head("target")));
    CHECK(copy.num_classes() == 3);
}

TEST_CASE("flatten and unflatten are inverse") {
    MlpModel model = small_model(7);
    const Matrix flat = flatten(model.layers());
    CHECK(flat.rows() == parameter_count(model.layers()));
    auto layers = zeros_like(model.layers());
    unflatten(flat, layers);
    CHECK(flatten(layers) == flat);
    CHECK_THROWS_AS(unflatten(Matrix(flat.rows() + 1, 1), layers), ShapeError);
}

}
