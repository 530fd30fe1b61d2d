#include "cst/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <type_traits>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "cst/experiments.hpp"
#include "cst/hardcase.hpp"

namespace cst {

namespace {

namespace fs = std::filesystem;

std::string default_output_dir() {
    const char* env = std::getenv(kOutputDirEnv);
    return env != nullptr && *env != '\0' ? env : "cstlab_out";
}

template <class T>
std::string echo(const T& v) {
    if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
        return fmt::format("{}", fmt::join(v, ","));
    } else {
        return fmt::format("{}", v);
    }
}

/// CLI11 app that remembers every bound variable so the resolved values can be written back.
class Command {
public:
    Command(std::string name, std::string description) : app_(std::move(description), std::move(name)) {
        app_.set_config("--config", "", "flat key=value file; command-line flags take precedence");
        app_.allow_config_extras(false);
        app_.option_defaults()->always_capture_default();
    }

    template <class T>
    CLI::Option* add(const std::string& key, T& value, const std::string& help) {
        resolved_.emplace_back(key, [&value] { return echo(value); });
        return app_.add_option("--" + key, value, help);
    }

    CLI::Option* flag(const std::string& key, bool& value, const std::string& help) {
        resolved_.emplace_back(key, [&value] { return echo(value); });
        return app_.add_flag("--" + key, value, help);
    }

    /// Returns an exit code when parsing ends the run (help or usage error).
    std::optional<int> parse(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        try {
            app_.parse(reversed);
        } catch (const CLI::CallForHelp&) {
            out << app_.help();
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            err << app_.get_name() << ": " << e.what() << "\n";
            return kExitUsage;
        }
        return std::nullopt;
    }

    void write_resolved(const fs::path& dir) const {
        std::ofstream file(dir / "resolved_config.ini", std::ios::binary);
        file << "# " << app_.get_name() << "\n";
        for (const auto& [key, value] : resolved_) file << key << "=" << value() << "\n";
    }

private:
    CLI::App app_;
    std::vector<std::pair<std::string, std::function<std::string()>>> resolved_;
};

fs::path prepare_output(const std::string& dir) {
    fs::path path(dir);
    fs::create_directories(path);
    return path;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + path.string());
    return file;
}

void write_json(const fs::path& path, const nlohmann::json& j) { open_output(path) << j.dump(2) << "\n"; }

struct Check {
    std::string name;
    bool passed;
    std::string detail;
};

int report_checks(const std::vector<Check>& checks, std::ostream& out, nlohmann::json& summary) {
    bool ok = true;
    for (const auto& c : checks) {
        out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
        summary["checks"][c.name] = {{"passed", c.passed}, {"detail", c.detail}};
        ok = ok && c.passed;
    }
    return ok ? kExitOk : kExitAssertion;
}

/// Runs `body`, mapping argument errors to the usage exit code and other failures to 1.
int guarded(const std::string& name, std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const std::invalid_argument& e) {
        err << name << ": invalid configuration: " << e.what() << "\n";
        return kExitUsage;
    } catch (const TrainingDiverged& e) {
        err << name << ": training diverged: " << e.what() << "\n";
        return kExitAssertion;
    } catch (const std::exception& e) {
        err << name << ": " << e.what() << "\n";
        return kExitAssertion;
    }
}

void add_data_options(Command& cmd, ShiftParams& data, std::string& shift) {
    cmd.add("shift", shift, "iid | covariate-shift | label-shift");
    cmd.add("classes", data.num_classes, "number of classes");
    cmd.add("dim", data.dim, "input dimension");
    cmd.add("radius", data.radius, "radius of the circle carrying the class means");
    cmd.add("spread", data.spread, "radial standard deviation");
    cmd.add("elongation", data.elongation, "tangential standard deviation multiplier");
    cmd.add("rotation", data.rotation, "covariate shift: rotation of the unlabeled clusters (rad)");
    cmd.add("translation", data.translation, "covariate shift: offset of the unlabeled clusters");
    cmd.add("label-ratio", data.label_ratio, "label shift: geometric decay of labeled counts");
    cmd.add("label-head", data.label_head, "label shift: first-class count multiplier");
    cmd.add("per-class-labeled", data.per_class_labeled, "labeled rows per class");
    cmd.add("per-class-unlabeled", data.per_class_unlabeled, "unlabeled rows per class");
}

void add_model_options(Command& cmd, std::vector<std::size_t>& hidden, std::size_t& feature_dim) {
    cmd.add("hidden", hidden, "hidden layer widths, comma separated")->delimiter(',');
    cmd.add("feature-dim", feature_dim, "width of the shared feature layer");
}

void add_train_options(Command& cmd, TrainConfig& train) {
    cmd.add("epochs", train.epochs, "training epochs");
    cmd.add("iters", train.iters_per_epoch, "minibatch steps per epoch");
    cmd.add("batch", train.batch_size, "minibatch size");
    cmd.add("lr", train.learning_rate, "initial learning rate");
    cmd.add("lr-decay", train.lr_decay_factor, "learning-rate decay factor");
    cmd.add("lr-period", train.lr_decay_period, "epochs between decays (0: two thirds of the run)");
}

// --- hardcase ---------------------------------------------------------------------

int hardcase_body(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    SuiteConfig cfg;
    cfg.seed = 7;
    bool check = true;
    std::string out_dir = default_output_dir();
    Command cmd("hardcase", "Monte-Carlo selection suite on the quadratic hard case");
    cmd.add("d", cfg.d, "input dimension (>= 3)");
    cmd.add("nt", cfg.n_t, "target sample size per trial");
    cmd.add("trials", cfg.trials, "number of seeded trials");
    cmd.add("seed", cfg.seed, "base seed; trial i uses seed + i");
    cmd.add("source-eval", cfg.source_eval_rows, "source rows for the empirical cycle loss");
    cmd.add("target-eval", cfg.target_eval_rows, "fresh target rows for the empirical error");
    cmd.add("parallel", cfg.parallel, "worker threads");
    cmd.add("check", check, "assert the selection rates");
    cmd.add("out", out_dir, fmt::format("output directory (default ${})", kOutputDirEnv));
    if (auto code = cmd.parse(args, out, err)) return *code;
    cfg.validate();

    const auto dir = prepare_output(out_dir);
    cmd.write_resolved(dir);
    const auto result = run_theorem_suite(cfg);
    {
        auto csv = open_output(dir / "hardcase_trials.csv");
        result.write_csv(csv);
    }
    auto summary = result.summary();

    std::vector<Check> checks;
    if (check) {
        const auto& cst = result.stats.at(Method::cst);
        const double miss_bound = 4.0 * std::pow(0.75, static_cast<double>(cfg.n_t));
        if (miss_bound * static_cast<double>(cfg.trials) < 1e-3) {
            checks.push_back({"cst_recovers_target", cst.successes == cst.trials,
                              fmt::format("success rate {}", cst.success_rate)});
        }
        const auto& st = result.stats.at(Method::st);
        const double expected = 1.0 - 1.0 / static_cast<double>(cfg.d - 1);
        const double sigma = std::sqrt(expected * (1.0 - expected) / static_cast<double>(st.trials));
        const double failure = 1.0 - st.success_rate;
        checks.push_back({"st_failure_rate", std::abs(failure - expected) <= 3.0 * sigma,
                          fmt::format("failure {:.4f} vs {:.4f} +- {:.4f}", failure, expected, 3.0 * sigma)});
        bool spurious_ok = true;
        for (const auto& row : result.rows) {
            const auto& o = row.outcome;
            if (o.method == Method::fa && o.selected_l >= 3 && o.err_q_analytic != 0.5) spurious_ok = false;
        }
        checks.push_back({"fa_spurious_error", spurious_ok, "every spurious FA pick has error 0.5"});
    }
    const int code = report_checks(checks, out, summary);
    write_json(dir / "summary.json", summary);
    for (const auto& [method, s] : result.stats) {
        out << fmt::format("{:>3}: success {:.4f} [{:.4f}, {:.4f}]\n", to_string(method), s.success_rate,
                           s.ci_low, s.ci_high);
    }
    return code;
}

// --- toy-da ---------------------------------------------------------------------

int toy_da_body(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    ToyDaConfig cfg = default_toy_da_config();
    std::string shift = to_string(cfg.data.kind);
    std::string selection = to_string(cfg.train.selection);
    bool check = true;
    double min_gain = 0.0;
    double iid_band = 0.02;
    std::string out_dir = default_output_dir();

    Command cmd("toy-da", "CST vs standard self-training vs source-only on a shifted pair");
    add_data_options(cmd, cfg.data, shift);
    add_model_options(cmd, cfg.hidden, cfg.feature_dim);
    cmd.add("warmup-epochs", cfg.warmup_epochs, "shared source-only epochs before the comparison");
    add_train_options(cmd, cfg.train);
    cmd.add("ridge-lambda", cfg.train.ridge_lambda, "ridge penalty of the closed-form target head");
    cmd.add("alpha", cfg.train.tsallis.alpha, "entropic index when --select-alpha is false");
    cmd.add("select-alpha", cfg.train.select_alpha, "pick the entropic index every epoch");
    cmd.add("tsallis-weight", cfg.train.tsallis.weight, "weight of the Tsallis term");
    cmd.add("alpha-steps", cfg.train.alpha_budget.steps, "inner steps per alpha trial");
    cmd.add("alpha-lr", cfg.train.alpha_budget.learning_rate, "inner learning rate per alpha trial");
    cmd.add("alpha-rows", cfg.train.alpha_budget.max_rows, "rows per domain in alpha trials");
    cmd.add("selection", selection, "pseudo-label selection: none | confidence | entropy");
    cmd.add("threshold", cfg.train.selection_threshold, "selection threshold");
    cmd.add("st-weight", cfg.train.target_weight, "standard self-training pseudo-label weight");
    cmd.add("seed", cfg.train.seed, "seed for data, initialization and batching");
    cmd.add("check", check, "assert the accuracy ordering");
    cmd.add("min-gain", min_gain, "shifted data: required CST minus source-only accuracy");
    cmd.add("iid-band", iid_band, "iid data: allowed accuracy spread between methods");
    cmd.add("out", out_dir, fmt::format("output directory (default ${})", kOutputDirEnv));
    if (auto code = cmd.parse(args, out, err)) return *code;
    cfg.data.kind = parse_shift_kind(shift);
    cfg.data.seed = cfg.train.seed;
    cfg.train.selection = parse_selection_rule(selection);
    cfg.validate();

    const auto dir = prepare_output(out_dir);
    cmd.write_resolved(dir);
    const auto result = run_toy_da(cfg);
    for (const auto& [method, report] : result.reports) {
        auto csv = open_output(dir / fmt::format("train_report_{}.csv", method));
        report.write_csv(csv);
    }
    auto comparison = result.comparison();

    std::vector<Check> checks;
    if (check) {
        const double cst = result.final_accuracy("cst");
        const double so = result.final_accuracy("source_only");
        const double st = result.final_accuracy("standard_st");
        if (cfg.data.kind == ShiftKind::iid) {
            const double spread = std::max({cst, so, st}) - std::min({cst, so, st});
            checks.push_back({"iid_methods_agree", spread <= iid_band,
                              fmt::format("accuracy spread {:.4f}", spread)});
        } else {
            checks.push_back({"cst_beats_source_only", cst >= so + min_gain,
                              fmt::format("cst {:.4f} vs source-only {:.4f}", cst, so)});
        }
    }
    const int code = report_checks(checks, out, comparison);
    write_json(dir / "comparison.json", comparison);
    for (const auto& [method, report] : result.reports) {
        out << fmt::format("{:>12}: final target accuracy {:.4f}\n", method, result.final_accuracy(method));
    }
    return code;
}

// --- diagnose -------------------------------------------------------------------

int diagnose_body(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    DiagnoseConfig cfg = default_diagnose_config();
    std::string shift = "covariate-shift";
    bool check = true;
    std::string out_dir = default_output_dir();

    Command cmd("diagnose", "Pseudo-label diagnostics of a source-only model, iid vs covariate shift");
    add_data_options(cmd, cfg.data, shift);
    add_model_options(cmd, cfg.hidden, cfg.feature_dim);
    add_train_options(cmd, cfg.train);
    cmd.add("radius-xi", cfg.options.robustness_radius, "robustness neighbourhood radius");
    cmd.add("probes", cfg.options.robustness_probes, "perturbations per point");
    cmd.add("bins", cfg.options.margin_bins, "margin histogram bins");
    cmd.add("seed", cfg.train.seed, "seed for data, initialization and batching");
    cmd.add("check", check, "assert that covariate shift degrades AUC and d_TV");
    cmd.add("out", out_dir, fmt::format("output directory (default ${})", kOutputDirEnv));
    if (auto code = cmd.parse(args, out, err)) return *code;
    if (parse_shift_kind(shift) != ShiftKind::covariate_shift) {
        throw std::invalid_argument("diagnose always pairs iid with covariate-shift");
    }
    cfg.data.seed = cfg.train.seed;
    cfg.validate();

    const auto dir = prepare_output(out_dir);
    cmd.write_resolved(dir);
    const auto pair = run_diagnose_pair(cfg);
    for (const auto& [tag, report] : {std::pair{"iid", &pair.iid}, std::pair{"covariate-shift", &pair.shift}}) {
        auto roc = open_output(dir / fmt::format("roc_{}.csv", tag));
        report->write_roc_csv(roc);
        auto margin = open_output(dir / fmt::format("margin_{}.csv", tag));
        report->write_margin_csv(margin);
    }
    auto summary = pair.to_json();
    std::vector<Check> checks;
    if (check) {
        const double auc_gap = pair.auc_gap();
        checks.push_back({"auc_drops_under_shift", auc_gap > 0.0, fmt::format("auc gap {:.6f}", auc_gap)});
        checks.push_back({"tv_grows_under_shift", pair.tv_gap() > 0.0,
                          fmt::format("d_TV gap {:.6f}", pair.tv_gap())});
    }
    const int code = report_checks(checks, out, summary);
    write_json(dir / "diagnostics.json", summary);
    return code;
}

// --- gradcheck ------------------------------------------------------------------

int gradcheck_body(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    GradcheckConfig cfg;
    std::string out_dir = default_output_dir();
    Command cmd("gradcheck", "Finite-difference check of every analytic gradient");
    cmd.add("seed", cfg.seed, "instance seed");
    cmd.add("step", cfg.step, "central-difference step");
    cmd.add("tol", cfg.tolerance, "relative error tolerance");
    cmd.flag("inject-bug", cfg.inject_bug, "perturb one analytic gradient (negative control)");
    cmd.add("out", out_dir, fmt::format("output directory (default ${})", kOutputDirEnv));
    if (auto code = cmd.parse(args, out, err)) return *code;
    if (!(cfg.step > 0.0) || !(cfg.tolerance > 0.0)) throw std::invalid_argument("step and tol must be positive");

    const auto dir = prepare_output(out_dir);
    cmd.write_resolved(dir);
    const auto checks = run_gradcheck_suite(cfg);
    auto csv = open_output(dir / "gradcheck.csv");
    csv << "name,parameters,max_rel_error,worst_index,passed\n";
    bool ok = true;
    for (const auto& c : checks) {
        csv << fmt::format("{},{},{:.6e},{},{}\n", c.name, c.parameters, c.report.max_rel_error,
                           c.report.worst_index, c.report.passed ? 1 : 0);
        out << fmt::format("{} {:<36} rel err {:.3e} ({} parameters)\n", c.report.passed ? "PASS" : "FAIL",
                           c.name, c.report.max_rel_error, c.parameters);
        ok = ok && c.report.passed;
    }
    return ok ? kExitOk : kExitAssertion;
}

}  // namespace

int cmd_hardcase(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    return guarded("hardcase", err, [&] { return hardcase_body(args, out, err); });
}

int cmd_toy_da(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    return guarded("toy-da", err, [&] { return toy_da_body(args, out, err); });
}

int cmd_diagnose(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    return guarded("diagnose", err, [&] { return diagnose_body(args, out, err); });
}

int cmd_gradcheck(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    return guarded("gradcheck", err, [&] { return gradcheck_body(args, out, err); });
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    static const std::map<std::string, int (*)(const std::vector<std::string>&, std::ostream&, std::ostream&)>
        commands = {{"hardcase", cmd_hardcase},
                    {"toy-da", cmd_toy_da},
                    {"diagnose", cmd_diagnose},
                    {"gradcheck", cmd_gradcheck}};
    const std::string usage = "usage: cstlab <hardcase|toy-da|diagnose|gradcheck> [options] (--help per command)\n";
    if (args.empty()) {
        err << usage;
        return kExitUsage;
    }
    if (args[0] == "--help" || args[0] == "-h") {
        out << usage;
        return kExitOk;
    }
    const auto it = commands.find(args[0]);
    if (it == commands.end()) {
        err << "unknown subcommand '" << args[0] << "'\n" << usage;
        return kExitUsage;
    }
    return it->second({args.begin() + 1, args.end()}, out, err);
}

}  // namespace cst
