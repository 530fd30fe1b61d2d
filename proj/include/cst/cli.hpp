#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cst {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAssertion = 1;
inline constexpr int kExitUsage = 2;

/// Default output directory when --out is not given.
inline constexpr const char* kOutputDirEnv = "CST_LAB_OUT";

// Each command takes its arguments without the program or subcommand name,
// writes its files under --out (plus resolved_config.ini), and returns an exit code.

int cmd_hardcase(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_toy_da(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_diagnose(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Dispatches on args[0] (the subcommand).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cst
