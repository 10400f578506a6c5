#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclcot/model/transformer.hpp"
#include "iclcot/taskgen/task.hpp"

namespace iclcot {

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  std::size_t k_max = 10;
  std::uint64_t seed = 0;
  TaskFamily family = TaskFamily::kLinear;
  std::size_t hidden = 100;
  // Probability that a batch carries oracle reasoning-chain tokens.
  double chain_fraction = 0.0;
  std::size_t log_every = 10;
  // Draw one task up front and reuse it for every prompt (memorization runs).
  bool fixed_task = false;
  // Dimension curriculum: when start_dim > 0, tasks use only the first
  // min(d, start_dim + (step-1)/dim_every) input coordinates and the rest of x
  // is zero. Off (0) trains on the full d from the first step.
  std::size_t curriculum_start_dim = 0;
  std::size_t curriculum_dim_every = 1000;
  // Linear learning-rate ramp over the first warmup_steps (0: none).
  std::size_t warmup_steps = 0;
  // Global gradient-norm cap before the Adam update (0: none).
  double grad_clip = 0.0;

  double learning_rate_at(std::size_t step) const;
  // Active input dimension at a 1-based step.
  std::size_t active_dim(std::size_t step, std::size_t d) const;
  void validate(const ModelConfig& model) const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// Mean training loss over the steps since the previous point.
struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  Transformer<float> model;
  std::vector<LossPoint> curve;
};

// Chain-step count per pair for a family (every oracle trace has two steps).
std::size_t chain_steps_per_pair(TaskFamily family);

// A stacked batch of prompts of one length, ready for Transformer::forward.
template <typename T>
struct TrainingBatch {
  Matrix<T> tokens;
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::size_t> rows;  // stacked row of every supervised x token
  Matrix<T> targets;              // (rows.size() x 1)
};

template <typename T>
TrainingBatch<T> make_batch(std::span<const Prompt> prompts, std::span<const Task> tasks,
                            bool with_chains, std::size_t max_tokens);

// The training objective: squared error averaged over every prefix position
// of every prompt in the batch.
template <typename T>
typename Tape<T>::Var prefix_loss(const Transformer<T>& model, Tape<T>& tape,
                                  const TrainingBatch<T>& batch);

// `steps` Adam updates; each step draws k ~ U{1..k_max} and `batch_size`
// fresh tasks and prompts from Stream::kTrain. Throws NumericAbort on a
// non-finite loss.
TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const std::function<void(const LossPoint&)>& on_log = {});

}  // namespace iclcot
