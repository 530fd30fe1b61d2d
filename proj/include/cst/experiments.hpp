#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cst/datagen.hpp"
#include "cst/diagnostics.hpp"
#include "cst/model.hpp"
#include "cst/numerics.hpp"
#include "cst/trainers.hpp"

namespace cst {

/// Three-way comparison on one shifted pair: CST, standard self-training and source-only.
struct ToyDaConfig {
    ShiftParams data;
    std::vector<std::size_t> hidden = {32};
    std::size_t feature_dim = 16;
    /// Source-only epochs shared by every method before the comparison starts.
    std::size_t warmup_epochs = 10;
    TrainConfig train;

    void validate() const;
};

struct ToyDaResult {
    std::map<std::string, TrainReport> reports;  ///< keyed "cst", "standard_st", "source_only"
    /// Target accuracy of the shared warm-started model before any method runs.
    double warm_target_acc = 0.0;

    double final_accuracy(const std::string& method) const;
    nlohmann::json comparison() const;
};

/// Seeded covariate-shift setup used by `cstlab toy-da` when no flags are given.
ToyDaConfig default_toy_da_config();

ToyDaResult run_toy_da(const ToyDaConfig& config);

/// Source-only model on an iid pair and on a covariate-shift pair with the same seed.
struct DiagnoseConfig {
    ShiftParams data;  ///< `kind` is overridden per run
    std::vector<std::size_t> hidden = {32};
    std::size_t feature_dim = 16;
    TrainConfig train;
    DiagnoseOptions options;

    void validate() const;
};

struct DiagnosePair {
    DiagnosticsReport iid;
    DiagnosticsReport shift;

    double auc_gap(const std::string& criterion = "confidence") const;  ///< auc(iid) − auc(shift)
    double tv_gap() const;                                               ///< d_TV(shift) − d_TV(iid)
    nlohmann::json to_json() const;
};

/// Seeded setup used by `cstlab diagnose` when no flags are given.
DiagnoseConfig default_diagnose_config();

DiagnosePair run_diagnose_pair(const DiagnoseConfig& config);

/// One analytic gradient compared against central differences.
struct GradientCheck {
    std::string name;
    std::size_t parameters = 0;
    GradcheckReport report;
};

struct GradcheckConfig {
    std::uint64_t seed = 0;
    /// Shifts one analytic entry of the outer extractor gradient; the suite must then fail.
    bool inject_bug = false;
    double step = 1e-5;
    double tolerance = 1e-4;
};

/// Every hand-written gradient of the library, on one small random instance.
std::vector<GradientCheck> run_gradcheck_suite(const GradcheckConfig& config);

}  // namespace cst
