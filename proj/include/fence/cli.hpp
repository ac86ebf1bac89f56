#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace fence {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<double> threshold;
};

/// Each command returns a process exit code and reports errors on `err`.
int cmd_simulate(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_fit(const std::filesystem::path& dataset, const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_evaluate(const std::filesystem::path& inclusion, const std::filesystem::path& truth, const CommandOptions& opt,
                 std::ostream& out, std::ostream& err);
int cmd_study(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_diagnose(const std::filesystem::path& fit_dir, const CommandOptions& opt, std::ostream& out,
                 std::ostream& err);

/// Output directory: --out if given, else $FENCE_OUTPUT_ROOT (or the working directory) / `name`.
std::filesystem::path resolve_output_dir(const CommandOptions& opt, const std::string& name);

/// Parses argv and dispatches to a command.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fence
