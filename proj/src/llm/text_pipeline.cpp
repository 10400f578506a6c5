#include "iclcot/llm/text_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "iclcot/eval/harness.hpp"

namespace iclcot::llm {

DatasetError::DatasetError(std::string source, std::size_t line, const std::string& what)
    : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::vector<TextRecord> parse_text_dataset(const std::string& text, const std::string& source) {
  std::vector<TextRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DatasetError(source, n, "expected context<TAB>target");
    if (line.find('\t', tab + 1) != std::string::npos) {
      throw DatasetError(source, n, "more than one tab");
    }
    TextRecord r{line.substr(0, tab), line.substr(tab + 1), n};
    if (r.context.empty()) throw DatasetError(source, n, "empty context");
    if (r.target.empty()) throw DatasetError(source, n, "empty target");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TextRecord> load_text_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(path.string(), 0, "cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text_dataset(buf.str(), path.string());
}

void TextEvalConfig::validate() const {
  for (std::size_t k : context_lengths) {
    if (k == 0) throw ContractError("text eval: context lengths must be >= 1");
  }
  if (validation == 0) throw ContractError("text eval: validation must be >= 1");
  if (queries == 0) throw ContractError("text eval: queries must be >= 1");
  pipeline.validate();
}

void to_json(nlohmann::json& j, const TextEvalConfig& cfg) {
  j = {{"context_lengths", cfg.context_lengths},
       {"pipeline", cfg.pipeline},
       {"validation", cfg.validation},
       {"queries", cfg.queries},
       {"seed", cfg.seed},
       {"chain_max_tokens", cfg.chain_params.max_tokens},
       {"chain_stop", cfg.chain_params.stop}};
}

void from_json(const nlohmann::json& j, TextEvalConfig& cfg) {
  cfg.context_lengths = j.at("context_lengths").get<std::vector<std::size_t>>();
  cfg.pipeline = j.at("pipeline").get<PipelineConfig>();
  cfg.validation = j.at("validation").get<std::size_t>();
  cfg.queries = j.at("queries").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.chain_params.max_tokens = j.at("chain_max_tokens").get<std::size_t>();
  cfg.chain_params.stop = j.at("chain_stop").get<std::vector<std::string>>();
}

std::string format_demo(const TextRecord& r) { return r.context + " " + r.target + "\n"; }

std::string format_demo_with_chain(const TextRecord& r, const std::string& chain) {
  return r.context + "\nReasoning:" + chain + "\nAnswer: " + r.target + "\n";
}

std::string chain_request(const TextRecord& r) {
  return r.context + " " + r.target + "\nReasoning:";
}

namespace {

double target_nll(const Client& client, const std::string& demos, const TextRecord& query) {
  return client.score_nll(demos + query.context, " " + query.target).nll;
}

// `count` draws from `probs` (index space), without replacement while possible.
std::vector<std::size_t> draw(std::vector<double> probs, std::size_t count, Rng& rng) {
  std::vector<std::size_t> out;
  const std::size_t n = probs.size();
  const bool replace = count > n;
  for (std::size_t c = 0; c < count; ++c) {
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    double u = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (probs[i] <= 0.0) continue;
      if (u < probs[i]) {
        pick = i;
        break;
      }
      u -= probs[i];
    }
    out.push_back(pick);
    if (!replace) probs[pick] = 0.0;
  }
  return out;
}

}  // namespace

TextReport text_pipeline_eval(const Client& client, const std::vector<TextRecord>& records,
                              const TextEvalConfig& cfg) {
  cfg.validate();
  TextReport report;
  if (records.empty()) {
    report.warnings.push_back("dataset is empty; nothing to evaluate");
    return report;
  }
  if (records.size() < 3) {
    report.warnings.push_back("dataset has fewer than 3 records; need a pool, a validation and a query record");
    return report;
  }
  const std::size_t n = records.size();
  const std::size_t pool_size = std::min(cfg.pipeline.pool_size, std::max<std::size_t>(1, (n - 1) / 2));
  const std::size_t val_size = std::min(cfg.validation, n - pool_size - 1);
  if (pool_size < cfg.pipeline.pool_size || val_size < cfg.validation) {
    report.warnings.push_back("dataset of " + std::to_string(n) + " records: pool shrunk to " +
                              std::to_string(pool_size) + ", validation to " + std::to_string(val_size));
  }

  for (std::size_t k : cfg.context_lengths) {
    Rng rng = Rng(cfg.seed, Stream::kText).split(k);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    const std::vector<std::size_t> pool_idx(order.begin(), order.begin() + pool_size);
    const std::vector<std::size_t> val_idx(order.begin() + pool_size, order.begin() + pool_size + val_size);
    std::vector<std::size_t> query_idx(order.begin() + pool_size + val_size, order.end());
    if (query_idx.size() > cfg.queries) query_idx.resize(cfg.queries);

    // Augment.
    std::vector<std::string> demo_text(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) {
      const auto& r = records[pool_idx[i]];
      demo_text[i] = format_demo_with_chain(r, client.complete(chain_request(r), cfg.chain_params));
    }

    // Prune on the mean validation NLL of each demo used as sole context.
    std::vector<double> losses(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) {
      double total = 0.0;
      for (std::size_t v : val_idx) total += target_nll(client, demo_text[i], records[v]);
      losses[i] = total / static_cast<double>(val_idx.size());
    }
    const auto pruned = prune(losses, cfg.pipeline.epsilon);

    // Select: one random validation record per draw.
    const SampleLoss sample_loss = [&](std::span<const std::size_t> indices, Rng& r) {
      std::vector<double> out;
      for (std::size_t i : indices) {
        const auto& q = records[val_idx[r.uniform_index(val_idx.size())]];
        out.push_back(target_nll(client, demo_text[pruned.retained[i]], q));
      }
      return out;
    };
    Rng policy_rng = rng.split(static_cast<std::uint64_t>(Stream::kPolicy));
    const auto policy = select_train(SelectionPolicy(pruned.retained.size()), sample_loss,
                                     cfg.pipeline, policy_rng);
    const auto top = policy.top(cfg.pipeline.batch);
    std::vector<double> top_logits;
    for (std::size_t i : top) top_logits.push_back(policy.logits[i]);
    const auto weights = softmax(top_logits);

    // Inference, paired per query with the baseline.
    Rng infer_rng = rng.split(static_cast<std::uint64_t>(Stream::kInference));
    Rng base_rng = rng.split(static_cast<std::uint64_t>(Stream::kEval));
    const std::vector<double> uniform(pool_size, 1.0);
    double auto_total = 0.0, base_total = 0.0;
    for (std::size_t q : query_idx) {
      double a = 0.0, b = 0.0;
      for (std::size_t rep = 0; rep < cfg.pipeline.repeats; ++rep) {
        std::string ctx;
        for (std::size_t s : draw(weights, k, infer_rng)) ctx += demo_text[pruned.retained[top[s]]];
        a += target_nll(client, ctx, records[q]);
        std::string plain;
        for (std::size_t s : draw(uniform, k, base_rng)) plain += format_demo(records[pool_idx[s]]);
        b += target_nll(client, plain, records[q]);
      }
      auto_total += a / static_cast<double>(cfg.pipeline.repeats);
      base_total += b / static_cast<double>(cfg.pipeline.repeats);
    }
    TextRow row;
    row.context_len = k;
    row.queries = query_idx.size();
    row.retained = pruned.retained.size();
    row.autocot_nll = auto_total / static_cast<double>(query_idx.size());
    row.baseline_nll = base_total / static_cast<double>(query_idx.size());
    report.rows.push_back(row);
  }
  return report;
}

std::string text_report_markdown(const TextReport& report) {
  std::ostringstream out;
  out << "| Context Length | Auto-CoT Loss | Baseline Loss |\n";
  out << "|---|---|---|\n";
  for (const auto& r : report.rows) {
    out << "| " << r.context_len << " | " << format_number(r.autocot_nll) << " | "
        << format_number(r.baseline_nll) << " |\n";
  }
  return out.str();
}

std::string text_report_csv(const TextReport& report) {
  std::ostringstream out;
  out << "context_len,queries,retained,autocot_nll,baseline_nll\n";
  for (const auto& r : report.rows) {
    out << r.context_len << ',' << r.queries << ',' << r.retained << ','
        << format_number(r.autocot_nll) << ',' << format_number(r.baseline_nll) << '\n';
  }
  return out.str();
}

}  // namespace iclcot::llm
