#include "iclcot/model/train.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "iclcot/numerics/adam.hpp"

namespace iclcot {

std::size_t chain_steps_per_pair(TaskFamily) { return 2; }

std::size_t TrainConfig::active_dim(std::size_t step, std::size_t d) const {
  if (curriculum_start_dim == 0) return d;
  const std::size_t grown = curriculum_start_dim + (step == 0 ? 0 : (step - 1) / curriculum_dim_every);
  return std::min(d, grown);
}

double TrainConfig::learning_rate_at(std::size_t step) const {
  if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
  return learning_rate * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (steps == 0 || batch_size == 0 || k_max == 0 || log_every == 0 || hidden == 0) {
    throw ContractError("train config: steps, batch_size, k_max, log_every and hidden must be positive");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ContractError("train config: learning_rate must be positive");
  }
  if (chain_fraction < 0.0 || chain_fraction > 1.0) {
    throw ContractError("train config: chain_fraction must lie in [0, 1]");
  }
  if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip)) {
    throw ContractError("train config: grad_clip must be a non-negative number");
  }
  if (curriculum_start_dim > 0 && curriculum_dim_every == 0) {
    throw ContractError("train config: curriculum_dim_every must be positive");
  }
  if (curriculum_start_dim > 0 && fixed_task) {
    throw ContractError("train config: the dimension curriculum needs fresh tasks");
  }
  std::size_t needed = 2 * k_max + 1;
  if (chain_fraction > 0.0) needed += chain_steps_per_pair(family) * k_max;
  if (needed > model.max_tokens) {
    throw ContractError("train config: k_max " + std::to_string(k_max) + " needs " +
                        std::to_string(needed) + " tokens but model.max_tokens is " +
                        std::to_string(model.max_tokens));
  }
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = {{"steps", cfg.steps},
       {"batch_size", cfg.batch_size},
       {"learning_rate", cfg.learning_rate},
       {"k_max", cfg.k_max},
       {"seed", cfg.seed},
       {"family", std::string(to_string(cfg.family))},
       {"hidden", cfg.hidden},
       {"chain_fraction", cfg.chain_fraction},
       {"log_every", cfg.log_every},
       {"fixed_task", cfg.fixed_task},
       {"curriculum_start_dim", cfg.curriculum_start_dim},
       {"curriculum_dim_every", cfg.curriculum_dim_every},
       {"warmup_steps", cfg.warmup_steps},
       {"grad_clip", cfg.grad_clip}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  cfg.steps = j.at("steps").get<std::size_t>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.k_max = j.at("k_max").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.family = parse_task_family(j.at("family").get<std::string>());
  cfg.hidden = j.at("hidden").get<std::size_t>();
  cfg.chain_fraction = j.at("chain_fraction").get<double>();
  cfg.log_every = j.at("log_every").get<std::size_t>();
  cfg.fixed_task = j.at("fixed_task").get<bool>();
  cfg.curriculum_start_dim = j.value("curriculum_start_dim", std::size_t{0});
  cfg.curriculum_dim_every = j.value("curriculum_dim_every", std::size_t{1000});
  cfg.warmup_steps = j.value("warmup_steps", std::size_t{0});
  cfg.grad_clip = j.value("grad_clip", 0.0);
}

template <typename T>
TrainingBatch<T> make_batch(std::span<const Prompt> prompts, std::span<const Task> tasks,
                            bool with_chains, std::size_t max_tokens) {
  if (prompts.empty()) throw ContractError("make_batch: empty batch");
  if (with_chains && tasks.size() != prompts.size()) {
    throw ContractError("make_batch: chains need the generating task of every prompt");
  }
  TrainingBatch<T> out;
  out.batch = prompts.size();
  std::vector<TokenSequence> seqs;
  std::vector<double> targets;
  seqs.reserve(prompts.size());
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    std::vector<ChainTrace> chains;
    if (with_chains) {
      const std::size_t active = task_dim(tasks[b]);
      for (const auto& pair : prompts[b].pairs) {
        chains.push_back(chain_trace(tasks[b], std::span<const double>(pair.x).first(active)));
      }
    }
    seqs.push_back(embed_prompt(prompts[b], chains, max_tokens));
    if (seqs.back().length() != seqs.front().length()) {
      throw ContractError("make_batch: prompts must share one token length");
    }
  }
  out.seq = seqs.front().length();
  const std::size_t width = seqs.front().tokens.cols();
  out.tokens = Matrix<T>(out.batch * out.seq, width);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto& src = seqs[b].tokens;
    for (std::size_t i = 0; i < src.size(); ++i) {
      out.tokens[b * out.seq * width + i] = static_cast<T>(src[i]);
    }
    const auto ys = x_targets(prompts[b]);
    for (std::size_t i = 0; i < ys.size(); ++i) {
      out.rows.push_back(b * out.seq + seqs[b].x_positions[i]);
      targets.push_back(ys[i]);
    }
  }
  out.targets = Matrix<T>(targets.size(), 1);
  for (std::size_t i = 0; i < targets.size(); ++i) out.targets[i] = static_cast<T>(targets[i]);
  return out;
}

template <typename T>
typename Tape<T>::Var prefix_loss(const Transformer<T>& model, Tape<T>& tape,
                                  const TrainingBatch<T>& batch) {
  const auto readout = model.forward(tape, batch.tokens, batch.batch, batch.seq);
  const auto preds = tape.gather_rows(readout, batch.rows);
  return tape.mse(preds, batch.targets);
}

TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const std::function<void(const LossPoint&)>& on_log) {
  model_cfg.validate();
  cfg.validate(model_cfg);
  Rng init_rng(cfg.seed, Stream::kInit);
  Rng rng(cfg.seed, Stream::kTrain);
  TrainResult result{Transformer<float>(model_cfg, init_rng), {}};
  auto& model = result.model;
  AdamState state = AdamState::zeros_like(model.parameters());

  std::optional<Task> fixed;
  if (cfg.fixed_task) fixed = sample_task(cfg.family, model_cfg.input_dim, cfg.hidden, rng);

  double window_sum = 0.0;
  std::size_t window_n = 0;
  std::vector<Prompt> prompts(cfg.batch_size);
  std::vector<Task> tasks(cfg.batch_size);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const std::size_t k = 1 + rng.uniform_index(cfg.k_max);
    const bool with_chains = cfg.chain_fraction > 0.0 && rng.uniform() < cfg.chain_fraction;
    const std::size_t dim = cfg.active_dim(step, model_cfg.input_dim);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      tasks[b] = fixed ? *fixed : sample_task(cfg.family, dim, cfg.hidden, rng);
      prompts[b] = sample_prompt(tasks[b], k, rng);
      if (dim < model_cfg.input_dim) pad_inputs(prompts[b], model_cfg.input_dim);
    }
    const auto batch = make_batch<float>(prompts, tasks, with_chains, model_cfg.max_tokens);
    Tape<float> tape;
    const auto loss = prefix_loss(model, tape, batch);
    const double loss_value = static_cast<double>(tape.value(loss)[0]);
    if (!std::isfinite(loss_value)) {
      std::ostringstream msg;
      msg << "non-finite training loss at step " << step << " (lr " << cfg.learning_rate << ")";
      throw NumericAbort(step, cfg.learning_rate, msg.str());
    }
    auto grads = tape.backward(loss);
    if (cfg.grad_clip > 0.0) {
      double norm2 = 0.0;
      for (const auto& [id, g] : grads) {
        for (float v : g.data()) norm2 += static_cast<double>(v) * v;
      }
      const double norm = std::sqrt(norm2);
      if (norm > cfg.grad_clip) {
        const float scale = static_cast<float>(cfg.grad_clip / norm);
        for (auto& [id, g] : grads) {
          for (float& v : g.data()) v *= scale;
        }
      }
    }
    adam_step(model.parameters(), grads, state, cfg.learning_rate_at(step));
    window_sum += loss_value;
    ++window_n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      LossPoint point{step, window_sum / static_cast<double>(window_n)};
      window_sum = 0.0;
      window_n = 0;
      result.curve.push_back(point);
      if (on_log) on_log(point);
    }
  }
  if (!model.all_finite()) {
    throw NumericAbort(cfg.steps, cfg.learning_rate, "non-finite weights after training");
  }
  return result;
}

template TrainingBatch<float> make_batch<float>(std::span<const Prompt>, std::span<const Task>,
                                                bool, std::size_t);
template TrainingBatch<double> make_batch<double>(std::span<const Prompt>, std::span<const Task>,
                                                  bool, std::size_t);
template Tape<float>::Var prefix_loss<float>(const Transformer<float>&, Tape<float>&,
                                             const TrainingBatch<float>&);
template Tape<double>::Var prefix_loss<double>(const Transformer<double>&, Tape<double>&,
                                               const TrainingBatch<double>&);

}  // namespace iclcot
