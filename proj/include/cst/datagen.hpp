#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cst/matrix.hpp"
#include "cst/rng.hpp"

namespace cst {

enum class Domain { source, target };

std::string to_string(Domain d);

/// Feature rows with optional class ids in [0, num_classes).
struct Dataset {
    Matrix features;
    std::optional<std::vector<int>> labels;
    Domain domain = Domain::source;
    std::size_t num_classes = 0;

    std::size_t size() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
    bool has_labels() const { return labels.has_value(); }
    const std::vector<int>& label_values() const;

    /// Throws std::invalid_argument when the invariants do not hold.
    void validate() const;
    Dataset subset(const std::vector<std::size_t>& rows) const;
    /// Empirical class proportions; requires labels.
    std::vector<double> class_histogram() const;
};

/// Writes `x0..x{d-1},y,domain` with a header row; y is blank when unlabeled.
void write_dataset_csv(std::ostream& out, const Dataset& data);

// ---------------------------------------------------------------------------
// Quadratic-network hard case.
//
// x1, x2 are drawn i.i.d. from {-1: a, +1: a, 0: 1-2a} with a = 0.05 on the
// source and 0.25 on the target. Remaining coordinates copy x2 (source) or
// x1 (target) up to an independent random sign. y = x1^2 - x2^2 in both.
// Labels are stored as class ids y + 1, so {-1, 0, +1} -> {0, 1, 2}.
// ---------------------------------------------------------------------------

struct HardCaseSpec {
    std::size_t d = 10;
    std::size_t n_s = 10000;
    std::size_t n_t = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr double kHardCaseSourceTail = 0.05;
inline constexpr double kHardCaseTargetTail = 0.25;

Dataset sample_hardcase_source(const HardCaseSpec& spec);
Dataset sample_hardcase_target(const HardCaseSpec& spec);
Dataset sample_hardcase(Domain domain, std::size_t d, std::size_t n, RngStream& rng);

/// Real-valued target y for class id c.
inline double hardcase_value(int class_id) { return static_cast<double>(class_id - 1); }
inline int hardcase_class(double value) { return static_cast<int>(value) + 1; }
std::vector<double> hardcase_values(const Dataset& data);

// ---------------------------------------------------------------------------
// Gaussian-cluster shift generator.
// ---------------------------------------------------------------------------

enum class ShiftKind { iid, covariate_shift, label_shift };

std::string to_string(ShiftKind k);
ShiftKind parse_shift_kind(const std::string& name);

struct ShiftSpec {
    ShiftKind kind = ShiftKind::iid;
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    /// Per-class means/covariances; index 0 is the labeled split, 1 the unlabeled split.
    std::vector<std::vector<double>> means[2];
    std::vector<Matrix> covariances[2];
    std::vector<std::size_t> counts[2];
    std::uint64_t seed = 0;

    void validate() const;
};

/// Knobs for building a ShiftSpec from a handful of scalars.
struct ShiftParams {
    ShiftKind kind = ShiftKind::iid;
    std::size_t num_classes = 3;
    std::size_t dim = 2;
    double radius = 3.0;          ///< Class means sit on a circle of this radius.
    double spread = 1.0;          ///< Std. deviation along the radial axis.
    double elongation = 1.0;      ///< Tangential std. deviation multiplier.
    double rotation = 0.6;        ///< Covariate shift: rotation of the unlabeled clusters (rad).
    double translation = 0.0;     ///< Covariate shift: offset of the unlabeled clusters along x0.
    double label_ratio = 0.8;     ///< Label shift: geometric decay of labeled counts.
    double label_head = 1.8;      ///< Label shift: first-class count as a multiple of per_class.
    std::size_t per_class_labeled = 200;
    std::size_t per_class_unlabeled = 200;
    std::uint64_t seed = 0;
};

ShiftSpec make_shift_spec(const ShiftParams& params);

struct ShiftedPair {
    Dataset labeled;
    Dataset unlabeled;
};

/// Labeled split is tagged source, unlabeled split target; both keep their
/// true labels (trainers only read target labels for reporting).
ShiftedPair generate_shifted_pair(const ShiftSpec& spec);

}  // namespace cst
