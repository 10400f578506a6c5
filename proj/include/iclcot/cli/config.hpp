#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclcot/autocot/pipeline.hpp"
#include "iclcot/eval/harness.hpp"
#include "iclcot/llm/client.hpp"
#include "iclcot/llm/mock.hpp"
#include "iclcot/llm/text_pipeline.hpp"
#include "iclcot/model/train.hpp"

namespace iclcot::cli {

// A config problem tied to one dotted field path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct TaskSection {
  TaskFamily family = TaskFamily::kLinear;
  std::size_t d = 5;
  std::size_t hidden = 100;
};

struct PipelineSection {
  PipelineConfig config;
  std::size_t context_len = 8;  // k of each demonstration built by `pipeline`
};

struct EvalSection {
  std::vector<std::size_t> context_lengths{1, 4, 8, 15, 24, 33, 40};
  std::size_t trials = 32;
  std::size_t repeats = 8;
};

struct TextSection {
  std::string dataset;
  llm::TextEvalConfig eval;
};

struct EndpointSection {
  llm::EndpointConfig endpoint;
  bool use_mock = false;
  llm::MockBehavior mock;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<TaskSection> task;
  std::optional<ModelConfig> model;
  std::optional<TrainConfig> train;
  std::optional<PipelineSection> pipeline;
  std::optional<EvalSection> eval;
  std::optional<TextSection> text;
  std::optional<EndpointSection> endpoint;

  // Canonical JSON: every present section with defaults filled in.
  nlohmann::json to_json() const;
  // Throws ConfigError naming the first missing section field.
  void require(std::initializer_list<const char*> sections) const;

  TrainConfig train_config() const;  // train + task + seed merged
  EvalConfig eval_config(bool autocot) const;
};

// TOML text -> JSON tree (non-finite floats become "inf" / "-inf" / "nan").
nlohmann::json toml_to_json(const std::string& text, const std::string& source);

// Field-checked load of a JSON tree in the TOML layout (also accepts the
// canonical JSON stored in manifests).
RunConfig config_from_json(const nlohmann::json& root);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace iclcot::cli
