#include "cst/losses.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cst/numerics.hpp"

namespace cst {

LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels) {
    return cross_entropy(logits, labels, std::vector<bool>(labels.size(), true));
}

LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels,
                          const std::vector<bool>& mask) {
    if (labels.size() != logits.rows() || mask.size() != logits.rows()) {
        throw ShapeError(fmt::format("cross_entropy: {} labels for logits {}", labels.size(),
                                     shape_string(logits)));
    }
    LossAndGrad out{0.0, Matrix(logits.rows(), logits.cols())};
    std::size_t used = 0;
    for (bool m : mask) used += m ? 1 : 0;
    if (used == 0) return out;
    const double inv = 1.0 / static_cast<double>(used);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        if (!mask[r]) continue;
        const auto row = logits.row(r);
        const auto y = static_cast<std::size_t>(labels[r]);
        if (y >= row.size()) throw std::out_of_range("cross_entropy: label out of range");
        const auto p = softmax(row);
        // log p_y computed from the shifted logits keeps the value finite.
        double top = row[0];
        for (double v : row) top = std::max(top, v);
        double lse = 0.0;
        for (double v : row) lse += std::exp(v - top);
        out.value += (std::log(lse) + top - row[y]) * inv;
        auto g = out.grad.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) g[c] = (p[c] - (c == y ? 1.0 : 0.0)) * inv;
    }
    return out;
}

Matrix one_hot(std::span<const int> labels, std::size_t num_classes) {
    Matrix out(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw std::out_of_range("one_hot: label out of range");
        }
        out(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return out;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
    if (probs.rows() != d_probs.rows() || probs.cols() != d_probs.cols()) {
        throw ShapeError("softmax_backward: shape mismatch");
    }
    Matrix out(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto p = probs.row(r);
        const auto g = d_probs.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
        auto o = out.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) o[c] = p[c] * (g[c] - dot);
    }
    return out;
}

LinearHead fit_ridge_head(const Matrix& features, std::span<const int> labels,
                          std::size_t num_classes, double lambda) {
    const Matrix theta =
        ridge_solve(features.with_constant_column(1.0), one_hot(labels, num_classes), lambda);
    LinearHead head;
    head.weight = Matrix(features.cols(), num_classes);
    head.bias = Matrix(1, num_classes);
    for (std::size_t r = 0; r < features.cols(); ++r) {
        for (std::size_t c = 0; c < num_classes; ++c) head.weight(r, c) = theta(r, c);
    }
    for (std::size_t c = 0; c < num_classes; ++c) head.bias(0, c) = theta(features.cols(), c);
    return head;
}

}  // namespace cst
