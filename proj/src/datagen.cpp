#include "cst/datagen.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <fmt/format.h>

namespace cst {

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

const std::vector<int>& Dataset::label_values() const {
    if (!labels) throw std::logic_error("dataset has no labels");
    return *labels;
}

void Dataset::validate() const {
    if (features.rows() == 0) throw std::invalid_argument("dataset must have at least one row");
    if (num_classes == 0) throw std::invalid_argument("dataset must declare its class count");
    if (labels) {
        if (labels->size() != features.rows()) {
            throw std::invalid_argument(fmt::format("{} labels for {} rows", labels->size(),
                                                    features.rows()));
        }
        for (int y : *labels) {
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
                throw std::invalid_argument(fmt::format("label {} outside [0, {})", y, num_classes));
            }
        }
    }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.features = features.select_rows(rows);
    out.domain = domain;
    out.num_classes = num_classes;
    if (labels) {
        std::vector<int> picked;
        picked.reserve(rows.size());
        for (auto r : rows) picked.push_back((*labels)[r]);
        out.labels = std::move(picked);
    }
    return out;
}

std::vector<double> Dataset::class_histogram() const {
    std::vector<double> hist(num_classes, 0.0);
    for (int y : label_values()) hist[static_cast<std::size_t>(y)] += 1.0;
    for (double& h : hist) h /= static_cast<double>(size());
    return hist;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
    for (std::size_t j = 0; j < data.dim(); ++j) out << 'x' << j << ',';
    out << "y,domain\n";
    const std::string domain = to_string(data.domain);
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.features.row(i)) out << fmt::format("{:.17g},", v);
        if (data.labels) out << (*data.labels)[i];
        out << ',' << domain << '\n';
    }
}

// --- hard case -------------------------------------------------------------

void HardCaseSpec::validate() const {
    if (d < 3) throw std::invalid_argument("hard case needs d >= 3");
    if (n_t < 1) throw std::invalid_argument("hard case needs n_t >= 1");
}

namespace {

double draw_coordinate(RngStream& rng, double tail) {
    const double u = rng.uniform();
    if (u < tail) return -1.0;
    if (u < 2.0 * tail) return 1.0;
    return 0.0;
}

}  // namespace

Dataset sample_hardcase(Domain domain, std::size_t d, std::size_t n, RngStream& rng) {
    if (d < 2) throw std::invalid_argument("hard case needs d >= 2");
    const double tail = domain == Domain::source ? kHardCaseSourceTail : kHardCaseTargetTail;
    Dataset out;
    out.features = Matrix(n, d);
    out.domain = domain;
    out.num_classes = 3;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = out.features.row(i);
        row[0] = draw_coordinate(rng, tail);
        row[1] = draw_coordinate(rng, tail);
        const double copied = domain == Domain::source ? row[1] : row[0];
        for (std::size_t j = 2; j < d; ++j) row[j] = rng.sign() * copied;
        labels[i] = hardcase_class(row[0] * row[0] - row[1] * row[1]);
    }
    out.labels = std::move(labels);
    return out;
}

Dataset sample_hardcase_source(const HardCaseSpec& spec) {
    spec.validate();
    RngStream rng(spec.seed, 1);
    return sample_hardcase(Domain::source, spec.d, spec.n_s, rng);
}

Dataset sample_hardcase_target(const HardCaseSpec& spec) {
    spec.validate();
    RngStream rng(spec.seed, 2);
    return sample_hardcase(Domain::target, spec.d, spec.n_t, rng);
}

std::vector<double> hardcase_values(const Dataset& data) {
    std::vector<double> out;
    out.reserve(data.size());
    for (int c : data.label_values()) out.push_back(hardcase_value(c));
    return out;
}

// --- Gaussian clusters -----------------------------------------------------

std::string to_string(ShiftKind k) {
    switch (k) {
        case ShiftKind::iid: return "iid";
        case ShiftKind::covariate_shift: return "covariate-shift";
        case ShiftKind::label_shift: return "label-shift";
    }
    return "unknown";
}

ShiftKind parse_shift_kind(const std::string& name) {
    if (name == "iid") return ShiftKind::iid;
    if (name == "covariate-shift") return ShiftKind::covariate_shift;
    if (name == "label-shift") return ShiftKind::label_shift;
    throw std::invalid_argument("unknown shift kind: " + name);
}

void ShiftSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("shift spec needs at least two classes");
    if (dim < 1) throw std::invalid_argument("shift spec needs dim >= 1");
    for (int split = 0; split < 2; ++split) {
        if (means[split].size() != num_classes || covariances[split].size() != num_classes ||
            counts[split].size() != num_classes) {
            throw std::invalid_argument("shift spec needs one mean, covariance and count per class");
        }
        for (std::size_t k = 0; k < num_classes; ++k) {
            if (means[split][k].size() != dim) throw std::invalid_argument("mean has wrong dimension");
            const Matrix& cov = covariances[split][k];
            if (cov.rows() != dim || cov.cols() != dim) {
                throw std::invalid_argument("covariance has wrong shape");
            }
            if (counts[split][k] == 0) throw std::invalid_argument("class counts must be positive");
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
                c(cov.data().data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
            if (!c.isApprox(c.transpose())) throw std::invalid_argument("covariance is not symmetric");
            Eigen::LLT<Eigen::MatrixXd> llt(c);
            if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() <= 1e-12) {
                throw std::invalid_argument(
                    fmt::format("covariance of class {} is not positive definite", k));
            }
        }
    }
}

namespace {

Matrix cluster_covariance(std::size_t dim, double angle, double spread, double elongation) {
    Matrix cov = Matrix::identity(dim) * (spread * spread);
    if (dim >= 2) {
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double radial = spread * spread;
        const double tangential = radial * elongation * elongation;
        cov(0, 0) = c * c * radial + s * s * tangential;
        cov(1, 1) = s * s * radial + c * c * tangential;
        cov(0, 1) = cov(1, 0) = c * s * (radial - tangential);
    }
    return cov;
}

}  // namespace

ShiftSpec make_shift_spec(const ShiftParams& p) {
    if (p.num_classes < 2) throw std::invalid_argument("need at least two classes");
    if (p.dim < 2) throw std::invalid_argument("cluster layout needs dim >= 2");
    ShiftSpec spec;
    spec.kind = p.kind;
    spec.num_classes = p.num_classes;
    spec.dim = p.dim;
    spec.seed = p.seed;
    for (std::size_t k = 0; k < p.num_classes; ++k) {
        const double base = 2.0 * std::numbers::pi * static_cast<double>(k) /
                            static_cast<double>(p.num_classes);
        for (int split = 0; split < 2; ++split) {
            const bool shifted = split == 1 && p.kind == ShiftKind::covariate_shift;
            const double angle = base + (shifted ? p.rotation : 0.0);
            std::vector<double> mean(p.dim, 0.0);
            mean[0] = p.radius * std::cos(angle) + (shifted ? p.translation : 0.0);
            mean[1] = p.radius * std::sin(angle);
            spec.means[split].push_back(std::move(mean));
            spec.covariances[split].push_back(
                cluster_covariance(p.dim, angle, p.spread, p.elongation));
        }
        std::size_t labeled = p.per_class_labeled;
        if (p.kind == ShiftKind::label_shift) {
            labeled = static_cast<std::size_t>(std::llround(
                p.label_head * static_cast<double>(p.per_class_labeled) *
                std::pow(p.label_ratio, static_cast<double>(k))));
        }
        spec.counts[0].push_back(labeled);
        spec.counts[1].push_back(p.per_class_unlabeled);
    }
    spec.validate();
    return spec;
}

namespace {

Dataset sample_clusters(const ShiftSpec& spec, int split, RngStream& rng) {
    std::size_t total = 0;
    for (auto c : spec.counts[split]) total += c;
    Dataset out;
    out.features = Matrix(total, spec.dim);
    out.num_classes = spec.num_classes;
    out.domain = split == 0 ? Domain::source : Domain::target;
    std::vector<int> labels;
    labels.reserve(total);

    std::size_t row = 0;
    std::vector<double> z(spec.dim);
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        const Matrix& cov = spec.covariances[split][k];
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> c(
            cov.data().data(), static_cast<Eigen::Index>(spec.dim),
            static_cast<Eigen::Index>(spec.dim));
        const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(c).matrixL();
        for (std::size_t n = 0; n < spec.counts[split][k]; ++n, ++row) {
            for (double& v : z) v = rng.normal();
            auto out_row = out.features.row(row);
            for (std::size_t i = 0; i < spec.dim; ++i) {
                double v = spec.means[split][k][i];
                for (std::size_t j = 0; j <= i; ++j) v += chol(static_cast<Eigen::Index>(i),
                                                               static_cast<Eigen::Index>(j)) * z[j];
                out_row[i] = v;
            }
            labels.push_back(static_cast<int>(k));
        }
    }
    out.labels = std::move(labels);

    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    rng.shuffle(order);
    return out.subset(order);
}

}  // namespace

ShiftedPair generate_shifted_pair(const ShiftSpec& spec) {
    spec.validate();
    RngStream labeled_rng(spec.seed, 11);
    RngStream unlabeled_rng(spec.seed, 12);
    return {sample_clusters(spec, 0, labeled_rng), sample_clusters(spec, 1, unlabeled_rng)};
}

}  // namespace cst
