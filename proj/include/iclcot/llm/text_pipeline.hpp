#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclcot/autocot/pipeline.hpp"
#include "iclcot/llm/client.hpp"

namespace iclcot::llm {

struct TextRecord {
  std::string context;
  std::string target;
  std::size_t line = 0;
};

class DatasetError : public Error {
 public:
  DatasetError(std::string source, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// One `context<TAB>target` record per non-blank line, UTF-8.
std::vector<TextRecord> parse_text_dataset(const std::string& text, const std::string& source = "dataset");
std::vector<TextRecord> load_text_dataset(const std::filesystem::path& path);

struct TextEvalConfig {
  std::vector<std::size_t> context_lengths{1, 3, 5};
  PipelineConfig pipeline;        // K, epsilon (NLL nats), B, N, repeats, policy_lr
  std::size_t validation = 4;     // records scoring prune/select losses
  std::size_t queries = 8;        // evaluation queries per length
  std::uint64_t seed = 0;
  CompletionParams chain_params{48, 0.0, {"\n"}};

  void validate() const;
};

void to_json(nlohmann::json& j, const TextEvalConfig& cfg);
void from_json(const nlohmann::json& j, TextEvalConfig& cfg);

struct TextRow {
  std::size_t context_len = 0;
  std::size_t queries = 0;
  std::size_t retained = 0;
  double autocot_nll = 0.0;
  double baseline_nll = 0.0;
};

struct TextReport {
  std::vector<TextRow> rows;
  std::vector<std::string> warnings;
};

// Prompt layouts shared by every stage.
std::string format_demo(const TextRecord& r);
std::string format_demo_with_chain(const TextRecord& r, const std::string& chain);
std::string chain_request(const TextRecord& r);

// The prune-and-select pipeline with the text plug-ins: chains from `complete`, losses are
// NLLs of the target word, selection reuses select_train.
TextReport text_pipeline_eval(const Client& client, const std::vector<TextRecord>& records,
                              const TextEvalConfig& cfg);

// Markdown table in the layout context_len | autocot_nll | baseline_nll.
std::string text_report_markdown(const TextReport& report);
std::string text_report_csv(const TextReport& report);

}  // namespace iclcot::llm
