#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclcot/model/tokens.hpp"
#include "iclcot/numerics/rng.hpp"
#include "iclcot/numerics/tape.hpp"

namespace iclcot {

struct ModelConfig {
  std::size_t n_layers = 3;
  std::size_t n_heads = 2;
  std::size_t embed_dim = 64;
  std::size_t max_tokens = 64;
  std::size_t input_dim = 5;

  std::size_t token_dim() const { return input_dim + 2; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// 12 layers, 8 heads, 256-wide, d = 20, 41 query positions.
ModelConfig reference_model_config();

struct ParamSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

// Every tensor of the model in canonical (checkpoint) order.
std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

// Pre-norm decoder-only transformer with learned absolute positions, GELU
// MLPs of width 4E and a scalar readout at every position.
template <typename T>
class Transformer {
 public:
  using Var = typename Tape<T>::Var;

  // Fan-in uniform weights, N(0, 0.02) positions, unit LayerNorm gains and
  // zero biases. The GPT-2 N(0, 0.02) scheme left the desk model stuck on
  // the mean predictor for linear tasks.
  Transformer(const ModelConfig& cfg, Rng& rng);
  Transformer(const ModelConfig& cfg, std::vector<Matrix<T>> params);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Matrix<T>>& parameters() { return params_; }
  const std::vector<Matrix<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  bool all_finite() const;

  // Forward over `batch` equal-length sequences stacked row-wise in `tokens`
  // ((batch*seq) x (d+2)). Returns the (batch*seq x 1) readout node.
  Var forward(Tape<T>& tape, const Matrix<T>& tokens, std::size_t batch, std::size_t seq) const;

  // Predictions at the x positions of one sequence.
  std::vector<double> predict(const TokenSequence& seq) const;
  // Same for many sequences; equal-length sequences share one forward pass.
  std::vector<std::vector<double>> predict_batch(std::span<const TokenSequence> seqs) const;
  double predict_query(const TokenSequence& seq) const;

  template <typename U>
  Transformer<U> cast() const {
    std::vector<Matrix<U>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.template cast<U>());
    return Transformer<U>(cfg_, std::move(out));
  }

 private:
  ModelConfig cfg_;
  std::vector<Matrix<T>> params_;
};

}  // namespace iclcot
