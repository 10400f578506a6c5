#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclcot/model/transformer.hpp"
#include "iclcot/oracles/oracles.hpp"
#include "iclcot/taskgen/task.hpp"

namespace iclcot {

class PipelineError : public Error {
 public:
  using Error::Error;
};

// Nothing survived pruning. Carries the smallest loss seen so callers can
// pick a workable threshold.
class EmptyPrunedPool : public Error {
 public:
  EmptyPrunedPool(double min_loss, double epsilon);
  double min_loss() const { return min_loss_; }
  double epsilon() const { return epsilon_; }

 private:
  double min_loss_;
  double epsilon_;
};

struct Demonstration {
  Prompt prompt;
  std::vector<ChainTrace> chains;  // one per pair, or empty
  std::size_t source_task = 0;     // index into DemoPool::tasks
};

struct DemoPool {
  std::vector<Demonstration> demos;
  std::vector<Task> tasks;
  std::size_t generator_failures = 0;

  std::size_t size() const { return demos.size(); }
  const Task& task_of(std::size_t i) const { return tasks.at(demos.at(i).source_task); }
};

// Prune threshold in normalized-loss units; kMedian resolves to the median
// of the observed pool losses at prune time.
struct Threshold {
  enum class Mode { kFixed, kMedian };
  Mode mode = Mode::kMedian;
  double value = 0.0;

  static Threshold fixed(double v) { return {Mode::kFixed, v}; }
  static Threshold median() { return {Mode::kMedian, 0.0}; }
  double resolve(std::span<const double> losses) const;
};

struct PipelineConfig {
  std::size_t pool_size = 32;  // K
  Threshold epsilon = Threshold::median();
  std::size_t batch = 8;       // B
  std::size_t epochs = 50;     // N
  std::size_t repeats = 64;
  double policy_lr = 0.1;
  bool use_chains = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const Threshold& t);
void from_json(const nlohmann::json& j, Threshold& t);
void to_json(nlohmann::json& j, const PipelineConfig& cfg);
void from_json(const nlohmann::json& j, PipelineConfig& cfg);

// ---- chain generation ------------------------------------------------------

// Produces one chain per pair of a prompt, or nothing on failure.
class ChainGenerator {
 public:
  virtual ~ChainGenerator() = default;
  virtual std::optional<std::vector<ChainTrace>> generate(const Task& task, const Prompt& prompt) = 0;
};

// Exact forward traces of the task network.
class OracleChainGenerator : public ChainGenerator {
 public:
  std::optional<std::vector<ChainTrace>> generate(const Task& task, const Prompt& prompt) override;
};

// K demonstrations, each on its own freshly sampled task. Failed generations
// are resampled; more failures than successes aborts with PipelineError.
DemoPool augment(TaskFamily family, std::size_t pool_size, std::size_t k, std::size_t d,
                 std::size_t hidden, ChainGenerator& generator, Rng& rng);

// K demonstrations drawn from one given task (fresh x's per demonstration).
DemoPool augment_from_task(const Task& task, std::size_t pool_size, std::size_t k,
                           ChainGenerator& generator, Rng& rng);

// ---- prediction -------------------------------------------------------------

struct QueryRequest {
  const Prompt* prompt = nullptr;
  std::span<const ChainTrace> chains;
};

// Anything that maps a prompt (optionally chain-augmented) to a prediction at
// its query position.
class QueryPredictor {
 public:
  virtual ~QueryPredictor() = default;
  virtual std::vector<double> predict_queries(std::span<const QueryRequest> requests) const = 0;
  double predict_query(const Prompt& prompt, std::span<const ChainTrace> chains = {}) const;
};

class TransformerPredictor : public QueryPredictor {
 public:
  explicit TransformerPredictor(const Transformer<float>& model) : model_(model) {}
  std::vector<double> predict_queries(std::span<const QueryRequest> requests) const override;

 private:
  const Transformer<float>& model_;
};

// Returns the stored ground truth of every query: a perfect model.
class TruthPredictor : public QueryPredictor {
 public:
  std::vector<double> predict_queries(std::span<const QueryRequest> requests) const override;
};

// (prediction - truth)^2 / d
double autocot_query_loss(double prediction, double truth, std::size_t d);
double autocot_query_loss(const QueryPredictor& model, const Prompt& prompt,
                          std::span<const ChainTrace> chains, const Task& task);

// ---- prune -----------------------------------------------------------------

// Query loss of every demonstration (with its chains when use_chains).
std::vector<double> pool_query_losses(const DemoPool& pool, const QueryPredictor& model,
                                      bool use_chains);

struct PruneResult {
  std::vector<std::size_t> retained;  // indices into the original pool, ascending
  double epsilon = 0.0;               // resolved threshold
};

// Keeps every demo with loss <= epsilon, order preserved.
PruneResult prune(std::span<const double> losses, const Threshold& epsilon);
DemoPool subset(const DemoPool& pool, std::span<const std::size_t> indices);

// ---- select ----------------------------------------------------------------

struct SelectionPolicy {
  std::vector<double> logits;
  std::size_t steps = 0;

  explicit SelectionPolicy(std::size_t n = 0) : logits(n, 0.0) {}
  std::vector<double> probabilities() const;
  // Indices of the `count` largest logits (ties to the lower index).
  std::vector<std::size_t> top(std::size_t count) const;
};

// Baseline-subtracted REINFORCE estimate of d E[L] / d logits from a batch of
// sampled pool indices and their losses:
//   1/(B-1) * sum_b (L_b - mean L) * (onehot(i_b) - softmax(logits)).
std::vector<double> policy_gradient(std::span<const double> losses,
                                    std::span<const std::size_t> indices,
                                    std::span<const double> logits);

// Losses of one draw of each listed pool member; must be deterministic given rng.
using SampleLoss =
    std::function<std::vector<double>(std::span<const std::size_t> indices, Rng& rng)>;

struct SelectTrace {
  std::vector<std::vector<double>> logits_per_epoch;
  std::vector<double> mean_loss_per_epoch;
};

// N epochs of: sample B indices ~ softmax(logits), score them, step the
// logits by -lr * policy_gradient.
SelectionPolicy select_train(SelectionPolicy policy, const SampleLoss& sample_loss,
                             const PipelineConfig& cfg, Rng& rng, SelectTrace* trace = nullptr);

// The numeric loss plug-in: the demo's pairs (and chains) as context for a
// fresh query from the demo's own task.
SampleLoss fresh_query_loss(const DemoPool& pool, const QueryPredictor& model, bool use_chains);

// ---- inference -----------------------------------------------------------------

// Mean over `repeats` predictions. Each repeat draws one selected
// demonstration with probability proportional to `weights` and uses its
// pairs (and chains) as the context for `query_x`. `query_truth` is only
// attached to the prompts for predictors that read it (TruthPredictor).
double inference(const QueryPredictor& model, std::span<const Demonstration> selected,
                 std::span<const double> weights, std::span<const double> query_x,
                 std::size_t repeats, bool use_chains, Rng& rng,
                 std::optional<double> query_truth = std::nullopt);

// ---- full pipeline -------------------------------------------------------------

struct PipelineRecord {
  std::vector<double> pool_losses;
  double epsilon = 0.0;
  std::vector<std::size_t> retained;
  SelectTrace select;
  std::vector<double> final_logits;
  std::vector<std::size_t> selected;  // indices into the original pool
};

void to_json(nlohmann::json& j, const PipelineRecord& rec);

struct PipelineOutcome {
  DemoPool pool;
  PipelineRecord record;
  std::vector<Demonstration> selected;
  std::vector<double> selected_weights;  // softmax of the final logits over the selection
};

// Prune + select on an augmented pool. Policy draws come from `policy_rng`.
PipelineOutcome run_pipeline(DemoPool pool, const QueryPredictor& model,
                             const PipelineConfig& cfg, Rng& policy_rng);

}  // namespace iclcot
