#include "iclcot/autocot/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace iclcot {

namespace {

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  // Rounding left a sliver above the last cumulative sum.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

Prompt with_query(const Prompt& context, std::span<const double> query_x,
                  std::optional<double> truth) {
  Prompt p;
  p.pairs = context.pairs;
  p.query_x.assign(query_x.begin(), query_x.end());
  p.query_y_truth = truth;
  return p;
}

}  // namespace

EmptyPrunedPool::EmptyPrunedPool(double min_loss, double epsilon)
    : Error("pruning with epsilon " + format_double(epsilon) +
            " retained no demonstrations (smallest pool loss " + format_double(min_loss) + ")"),
      min_loss_(min_loss),
      epsilon_(epsilon) {}

double Threshold::resolve(std::span<const double> losses) const {
  if (mode == Mode::kFixed) return value;
  if (losses.empty()) throw ContractError("median threshold of an empty pool");
  std::vector<double> sorted(losses.begin(), losses.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  return n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

void PipelineConfig::validate() const {
  if (pool_size == 0) throw ContractError("pipeline config: K must be >= 1");
  if (batch < 2) throw ContractError("pipeline config: B must be >= 2");
  if (repeats == 0) throw ContractError("pipeline config: repeats must be >= 1");
  if (epsilon.mode == Threshold::Mode::kFixed && !(epsilon.value > 0.0)) {
    throw ContractError("pipeline config: epsilon must be > 0");
  }
  if (!(policy_lr > 0.0) || !std::isfinite(policy_lr)) {
    throw ContractError("pipeline config: policy_lr must be positive");
  }
}

void to_json(nlohmann::json& j, const Threshold& t) {
  if (t.mode == Threshold::Mode::kMedian) {
    j = "median";
  } else if (std::isinf(t.value)) {
    j = "inf";
  } else {
    j = t.value;
  }
}

void from_json(const nlohmann::json& j, Threshold& t) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "median") {
      t = Threshold::median();
    } else if (s == "inf") {
      t = Threshold::fixed(std::numeric_limits<double>::infinity());
    } else {
      throw ContractError("epsilon must be a number, \"median\" or \"inf\", got \"" + s + "\"");
    }
    return;
  }
  t = Threshold::fixed(j.get<double>());
}

void to_json(nlohmann::json& j, const PipelineConfig& cfg) {
  j = {{"K", cfg.pool_size},  {"epsilon", cfg.epsilon},     {"B", cfg.batch},
       {"N", cfg.epochs},     {"repeats", cfg.repeats},     {"policy_lr", cfg.policy_lr},
       {"use_chains", cfg.use_chains}};
}

void from_json(const nlohmann::json& j, PipelineConfig& cfg) {
  cfg.pool_size = j.at("K").get<std::size_t>();
  cfg.epsilon = j.at("epsilon").get<Threshold>();
  cfg.batch = j.at("B").get<std::size_t>();
  cfg.epochs = j.at("N").get<std::size_t>();
  cfg.repeats = j.at("repeats").get<std::size_t>();
  cfg.policy_lr = j.at("policy_lr").get<double>();
  cfg.use_chains = j.at("use_chains").get<bool>();
}

std::optional<std::vector<ChainTrace>> OracleChainGenerator::generate(const Task& task,
                                                                      const Prompt& prompt) {
  std::vector<ChainTrace> out;
  out.reserve(prompt.k());
  for (const auto& pair : prompt.pairs) out.push_back(chain_trace(task, pair.x));
  return out;
}

namespace {

template <typename TaskSource>
DemoPool build_pool(std::size_t pool_size, std::size_t k, ChainGenerator& generator, Rng& rng,
                    TaskSource&& next_task) {
  if (pool_size == 0) throw ContractError("augment: pool size must be >= 1");
  DemoPool pool;
  while (pool.demos.size() < pool_size) {
    Task task = next_task(rng);
    Prompt prompt = sample_prompt(task, k, rng);
    auto chains = generator.generate(task, prompt);
    if (!chains || chains->size() != prompt.k()) {
      if (++pool.generator_failures > pool_size) {
        throw PipelineError("augment: chain generator failed on more than half of " +
                            std::to_string(pool.generator_failures + pool.demos.size()) +
                            " attempts");
      }
      continue;
    }
    for (std::size_t j = 0; j < prompt.k(); ++j) {
      if ((*chains)[j].final != prompt.pairs[j].y) {
        throw PipelineError("augment: chain final disagrees with the pair label");
      }
    }
    Demonstration demo;
    demo.prompt = std::move(prompt);
    demo.chains = std::move(*chains);
    demo.source_task = pool.tasks.size();
    pool.tasks.push_back(std::move(task));
    pool.demos.push_back(std::move(demo));
  }
  return pool;
}

}  // namespace

DemoPool augment(TaskFamily family, std::size_t pool_size, std::size_t k, std::size_t d,
                 std::size_t hidden, ChainGenerator& generator, Rng& rng) {
  return build_pool(pool_size, k, generator, rng,
                    [&](Rng& r) { return sample_task(family, d, hidden, r); });
}

DemoPool augment_from_task(const Task& task, std::size_t pool_size, std::size_t k,
                           ChainGenerator& generator, Rng& rng) {
  DemoPool pool = build_pool(pool_size, k, generator, rng, [&](Rng&) { return task; });
  // Every demo shares one task; keep a single copy.
  pool.tasks.resize(1);
  for (auto& demo : pool.demos) demo.source_task = 0;
  return pool;
}

double QueryPredictor::predict_query(const Prompt& prompt, std::span<const ChainTrace> chains) const {
  const QueryRequest req{&prompt, chains};
  return predict_queries(std::span<const QueryRequest>(&req, 1)).front();
}

std::vector<double> TransformerPredictor::predict_queries(
    std::span<const QueryRequest> requests) const {
  std::vector<TokenSequence> seqs;
  seqs.reserve(requests.size());
  for (const auto& r : requests) {
    seqs.push_back(embed_prompt(*r.prompt, r.chains, model_.config().max_tokens));
  }
  const auto preds = model_.predict_batch(seqs);
  std::vector<double> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(p.back());
  return out;
}

std::vector<double> TruthPredictor::predict_queries(std::span<const QueryRequest> requests) const {
  std::vector<double> out;
  out.reserve(requests.size());
  for (const auto& r : requests) {
    if (!r.prompt->query_y_truth) throw ContractError("truth predictor: prompt has no stored truth");
    out.push_back(*r.prompt->query_y_truth);
  }
  return out;
}

double autocot_query_loss(double prediction, double truth, std::size_t d) {
  if (d == 0) throw ContractError("query loss: d must be >= 1");
  const double e = prediction - truth;
  return e * e / static_cast<double>(d);
}

double autocot_query_loss(const QueryPredictor& model, const Prompt& prompt,
                          std::span<const ChainTrace> chains, const Task& task) {
  if (prompt.dim() != task_dim(task)) {
    throw ShapeError("query loss: prompt dimension " + std::to_string(prompt.dim()) +
                     " vs task dimension " + std::to_string(task_dim(task)));
  }
  return autocot_query_loss(model.predict_query(prompt, chains), task_eval(task, prompt.query_x),
                            prompt.dim());
}

std::vector<double> pool_query_losses(const DemoPool& pool, const QueryPredictor& model,
                                      bool use_chains) {
  std::vector<QueryRequest> requests;
  requests.reserve(pool.size());
  for (const auto& demo : pool.demos) {
    requests.push_back({&demo.prompt, use_chains ? std::span<const ChainTrace>(demo.chains)
                                                 : std::span<const ChainTrace>()});
  }
  const auto preds = model.predict_queries(requests);
  std::vector<double> losses(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& demo = pool.demos[i];
    const double truth = task_eval(pool.task_of(i), demo.prompt.query_x);
    losses[i] = autocot_query_loss(preds[i], truth, demo.prompt.dim());
  }
  return losses;
}

PruneResult prune(std::span<const double> losses, const Threshold& epsilon) {
  if (losses.empty()) throw ContractError("prune: empty pool");
  PruneResult out;
  out.epsilon = epsilon.resolve(losses);
  if (!(out.epsilon > 0.0)) {
    // A median of all-zero losses is legitimately zero; keep the <= semantics.
    if (epsilon.mode == Threshold::Mode::kFixed) throw ContractError("prune: epsilon must be > 0");
  }
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (losses[i] <= out.epsilon) out.retained.push_back(i);
  }
  if (out.retained.empty()) {
    throw EmptyPrunedPool(*std::min_element(losses.begin(), losses.end()), out.epsilon);
  }
  return out;
}

DemoPool subset(const DemoPool& pool, std::span<const std::size_t> indices) {
  DemoPool out;
  out.tasks = pool.tasks;
  for (std::size_t i : indices) out.demos.push_back(pool.demos.at(i));
  return out;
}

std::vector<double> SelectionPolicy::probabilities() const { return softmax(logits); }

std::vector<std::size_t> SelectionPolicy::top(std::size_t count) const {
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  idx.resize(std::min(count, idx.size()));
  return idx;
}

std::vector<double> policy_gradient(std::span<const double> losses,
                                    std::span<const std::size_t> indices,
                                    std::span<const double> logits) {
  const std::size_t batch = losses.size();
  if (batch < 2) throw ContractError("policy_gradient: batch size must be >= 2");
  if (indices.size() != batch) {
    throw ShapeError("policy_gradient: " + std::to_string(batch) + " losses vs " +
                     std::to_string(indices.size()) + " indices");
  }
  for (double l : losses) {
    if (!std::isfinite(l)) throw ContractError("policy_gradient: non-finite loss");
  }
  const auto probs = softmax(logits);
  const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(batch);
  std::vector<double> grad(logits.size(), 0.0);
  double total_adv = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (indices[b] >= logits.size()) throw ContractError("policy_gradient: index out of range");
    const double adv = losses[b] - mean;
    // d log p_i / d z = onehot(i) - p
    grad[indices[b]] += adv;
    total_adv += adv;
  }
  const double inv = 1.0 / static_cast<double>(batch - 1);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = (grad[i] - total_adv * probs[i]) * inv;
  return grad;
}

SelectionPolicy select_train(SelectionPolicy policy, const SampleLoss& sample_loss,
                             const PipelineConfig& cfg, Rng& rng, SelectTrace* trace) {
  if (policy.logits.empty()) throw ContractError("select_train: empty pool");
  std::vector<std::size_t> indices(cfg.batch);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto probs = policy.probabilities();
    for (auto& i : indices) i = sample_index(probs, rng);
    Rng loss_rng = rng.split(epoch);
    const auto losses = sample_loss(indices, loss_rng);
    const auto grad = policy_gradient(losses, indices, policy.logits);
    for (std::size_t i = 0; i < grad.size(); ++i) policy.logits[i] -= cfg.policy_lr * grad[i];
    ++policy.steps;
    if (trace) {
      trace->logits_per_epoch.push_back(policy.logits);
      trace->mean_loss_per_epoch.push_back(std::accumulate(losses.begin(), losses.end(), 0.0) /
                                           static_cast<double>(losses.size()));
    }
  }
  return policy;
}

SampleLoss fresh_query_loss(const DemoPool& pool, const QueryPredictor& model, bool use_chains) {
  return [&pool, &model, use_chains](std::span<const std::size_t> indices, Rng& rng) {
    std::vector<Prompt> prompts;
    std::vector<double> truths;
    prompts.reserve(indices.size());
    for (std::size_t i : indices) {
      const auto& demo = pool.demos.at(i);
      const Task& task = pool.task_of(i);
      std::vector<double> x(demo.prompt.dim());
      for (double& v : x) v = rng.normal();
      truths.push_back(task_eval(task, x));
      prompts.push_back(with_query(demo.prompt, x, truths.back()));
    }
    std::vector<QueryRequest> requests;
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto& demo = pool.demos[indices[b]];
      requests.push_back({&prompts[b], use_chains ? std::span<const ChainTrace>(demo.chains)
                                                  : std::span<const ChainTrace>()});
    }
    const auto preds = model.predict_queries(requests);
    std::vector<double> losses(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
      losses[b] = autocot_query_loss(preds[b], truths[b], prompts[b].dim());
    }
    return losses;
  };
}

double inference(const QueryPredictor& model, std::span<const Demonstration> selected,
                 std::span<const double> weights, std::span<const double> query_x,
                 std::size_t repeats, bool use_chains, Rng& rng,
                 std::optional<double> query_truth) {
  if (selected.empty()) throw ContractError("inference: no selected demonstrations");
  if (weights.size() != selected.size()) {
    throw ShapeError("inference: weights do not match the selection");
  }
  if (repeats == 0) throw ContractError("inference: repeats must be >= 1");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<double> probs(weights.begin(), weights.end());
  for (double& p : probs) p /= total;

  std::vector<Prompt> prompts;
  std::vector<std::size_t> picks;
  prompts.reserve(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::size_t i = selected.size() == 1 ? 0 : sample_index(probs, rng);
    picks.push_back(i);
    prompts.push_back(with_query(selected[i].prompt, query_x, query_truth));
  }
  std::vector<QueryRequest> requests;
  for (std::size_t r = 0; r < repeats; ++r) {
    requests.push_back({&prompts[r], use_chains ? std::span<const ChainTrace>(selected[picks[r]].chains)
                                                : std::span<const ChainTrace>()});
  }
  const auto preds = model.predict_queries(requests);
  return std::accumulate(preds.begin(), preds.end(), 0.0) / static_cast<double>(repeats);
}

void to_json(nlohmann::json& j, const PipelineRecord& rec) {
  j = {{"pool_losses", rec.pool_losses},
       {"epsilon", rec.epsilon},
       {"retained", rec.retained},
       {"policy_logits_per_epoch", rec.select.logits_per_epoch},
       {"policy_mean_loss_per_epoch", rec.select.mean_loss_per_epoch},
       {"final_logits", rec.final_logits},
       {"selected", rec.selected}};
}

PipelineOutcome run_pipeline(DemoPool pool, const QueryPredictor& model,
                             const PipelineConfig& cfg, Rng& policy_rng) {
  cfg.validate();
  PipelineOutcome out;
  out.record.pool_losses = pool_query_losses(pool, model, cfg.use_chains);
  const auto pruned = prune(out.record.pool_losses, cfg.epsilon);
  out.record.epsilon = pruned.epsilon;
  out.record.retained = pruned.retained;

  const DemoPool kept = subset(pool, pruned.retained);
  const SelectionPolicy policy = select_train(SelectionPolicy(kept.size()),
                                              fresh_query_loss(kept, model, cfg.use_chains), cfg,
                                              policy_rng, &out.record.select);
  out.record.final_logits = policy.logits;

  const auto top = policy.top(cfg.batch);
  std::vector<double> top_logits;
  for (std::size_t i : top) {
    out.record.selected.push_back(pruned.retained[i]);
    out.selected.push_back(kept.demos[i]);
    top_logits.push_back(policy.logits[i]);
  }
  out.selected_weights = softmax(top_logits);
  out.pool = std::move(pool);
  return out;
}

}  // namespace iclcot
