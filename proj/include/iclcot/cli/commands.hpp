#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclcot/cli/config.hpp"

namespace iclcot::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumericAbort = 3,
  kExitEmptyPrune = 4,
  kExitReportMismatch = 5,
};

struct CommandOptions {
  std::string command;  // train | pipeline | eval | report | text-eval | replay
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = ".";
  bool record = false;
  std::filesystem::path checkpoint;
  std::filesystem::path pipeline_manifest;
  bool autocot = false;
  std::filesystem::path baseline;  // report inputs: metrics.csv files
  std::filesystem::path autocot_csv;
  std::filesystem::path manifest;  // replay input
  std::filesystem::path replay_log;  // text-eval: serve traffic from this log
  bool quiet = false;
};

// Everything a finished command produced.
struct RunOutcome {
  std::string run_id;
  std::filesystem::path dir;
  nlohmann::json manifest;
};

// Runs one command and maps failures onto the exit code contract. Progress
// goes to `out`, diagnostics to `err`.
int run_command(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// Throwing variants used by run_command and the tests.
RunOutcome execute(const CommandOptions& opts, std::ostream& out);
RunOutcome execute_with_config(const std::string& command, const RunConfig& cfg,
                               const CommandOptions& opts, std::ostream& out);

// Re-executes the run described by `manifest_path` in a scratch directory and
// compares every primary artifact byte for byte. Returns the names that differ.
std::vector<std::string> replay(const std::filesystem::path& manifest_path, std::ostream& out);

// 64-bit FNV-1a of a file's bytes as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

// Thrown when an input artifact is missing or no longer matches its digest.
class InputError : public Error {
 public:
  using Error::Error;
};

// `report` found baseline and Auto-CoT CSVs that cannot be paired.
class ReportMismatch : public Error {
 public:
  using Error::Error;
};


std::string version_string();

}  // namespace iclcot::cli
