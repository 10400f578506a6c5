#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclcot/autocot/pipeline.hpp"
#include "iclcot/eval/metrics.hpp"

namespace iclcot {

struct EvalConfig {
  std::vector<std::size_t> context_lengths{1, 4, 8, 15, 24, 33, 40};
  std::size_t repeats = 8;
  std::size_t trials = 32;
  std::uint64_t seed = 0;
  TaskFamily family = TaskFamily::kLinear;
  std::size_t d = 5;
  std::size_t hidden = 100;
  // Absent: baseline ICL. Present: the Auto-CoT path, whose repeat count is
  // the pipeline's own.
  std::optional<PipelineConfig> pipeline;

  void validate(std::size_t k_max) const;
  std::string method() const { return pipeline ? "autocot" : "baseline"; }
  std::size_t effective_repeats() const { return pipeline ? pipeline->repeats : repeats; }
};

void to_json(nlohmann::json& j, const EvalConfig& cfg);
void from_json(const nlohmann::json& j, EvalConfig& cfg);

// 16 hex digits of FNV-1a 64 over the compact, key-sorted JSON dump.
std::string canonical_hash(const nlohmann::json& value);

struct TrialRecord {
  std::string method;
  std::size_t context_len = 0;
  std::size_t trial = 0;
  double pred = 0.0;
  double truth = 0.0;
  double loss = 0.0;
};

struct EvalRow {
  std::string method;
  std::size_t context_len = 0;
  std::size_t trials = 0;
  std::size_t repeats = 0;
  double mse_mean = 0.0;
  double mse_stderr = 0.0;
  std::optional<double> auc;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // sorted by context length
  std::vector<TrialRecord> trials;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string checkpoint_id;
  bool partial = false;
};

// Thrown by run_eval when a trial fails; carries every finished length.
class EvalInterrupted : public Error {
 public:
  EvalInterrupted(EvalReport partial, const std::string& what, std::exception_ptr cause)
      : Error(what), partial_(std::move(partial)), cause_(std::move(cause)) {}
  const EvalReport& partial() const { return partial_; }
  std::exception_ptr cause() const { return cause_; }

 private:
  EvalReport partial_;
  std::exception_ptr cause_;
};

// One paired evaluation trial: the task, query and truth depend only on
// (seed, context length, trial), never on the method.
struct TrialSetup {
  Task task;
  Prompt query;  // no pairs; query_x and query_y_truth set
  Rng method_rng;
};
TrialSetup trial_setup(const EvalConfig& cfg, std::size_t context_len, std::size_t trial);

// Baseline: mean over `repeats` predictions, each on k fresh pairs from the
// task followed by the query.
double baseline_prediction(const QueryPredictor& model, const Task& task,
                           std::span<const double> query_x, std::size_t k, std::size_t repeats,
                           Rng& rng);

// Auto-CoT: pool of K chain-augmented demos from the task, prune, select,
// averaged inference on the query.
double autocot_prediction(const QueryPredictor& model, const Task& task,
                          std::span<const double> query_x, std::size_t k,
                          const PipelineConfig& cfg, Rng& rng, PipelineRecord* record = nullptr);

using ProgressFn = std::function<void(std::size_t context_len, std::size_t trial)>;

EvalReport run_eval(const QueryPredictor& model, const EvalConfig& cfg,
                    const std::string& checkpoint_id = "", const ProgressFn& progress = {});

// ---- files -----------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "method,context_len,trials,repeats,mse_mean,mse_stderr,auc,seed,config_hash";
inline constexpr const char* kTrialsHeader = "method,context_len,trial,pred,truth,loss";

std::string format_number(double v);
std::string metrics_csv(const EvalReport& report);
std::string trials_csv(const EvalReport& report);
std::vector<EvalRow> parse_metrics_csv(const std::string& text);
std::vector<TrialRecord> parse_trials_csv(const std::string& text);

// One polyline per method over (context length, mse_mean).
std::string plot_svg(const std::vector<EvalRow>& rows, const std::string& title = "Normalized MSE");

// ---- comparison -------------------------------------------------------------

struct ComparisonRow {
  std::size_t context_len = 0;
  double baseline_mse = 0.0;
  double autocot_mse = 0.0;
  double delta = 0.0;  // autocot - baseline; negative means Auto-CoT is better
  std::optional<double> baseline_auc;
  std::optional<double> autocot_auc;
  std::size_t pairs = 0;           // paired trials available for the sign test
  std::size_t autocot_wins = 0;
  std::optional<double> sign_p;    // absent without per-trial losses
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
};

// Rows of both sides must cover the same context lengths (ContractError
// otherwise). Per-trial records, when given, are paired on (length, trial).
ComparisonReport compare(const std::vector<EvalRow>& baseline, const std::vector<EvalRow>& autocot,
                         const std::vector<TrialRecord>& baseline_trials = {},
                         const std::vector<TrialRecord>& autocot_trials = {});

std::string comparison_markdown(const ComparisonReport& report);
// Inverse of comparison_markdown for the numeric columns.
ComparisonReport parse_comparison_markdown(const std::string& text);

}  // namespace iclcot
