#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "iclcot/numerics/matrix.hpp"
#include "iclcot/oracles/oracles.hpp"
#include "iclcot/taskgen/task.hpp"

namespace iclcot {

// Value of the type-flag channel (entry d of every token).
enum class TokenKind : int { kX = 0, kY = 1, kChainStep = 2 };

// Raw (d+2)-wide tokens before the model's input projection.
struct TokenSequence {
  Matrix64 tokens;
  // Row index of every x token in order; the last one is the query.
  std::vector<std::size_t> x_positions;

  std::size_t length() const { return tokens.rows(); }
};

// 2k + 1 + (total chain steps).
std::size_t token_count(const Prompt& prompt, std::span<const ChainTrace> chains);

// Lays out [x_1, r_1 steps..., y_1, x_2, ..., x_{k+1}]. `chains` is either
// empty or holds one trace per pair. Payloads wider than d are truncated,
// narrower ones zero-padded.
TokenSequence embed_prompt(const Prompt& prompt, std::span<const ChainTrace> chains,
                           std::size_t max_tokens);

// Supervision for every x position: y_1..y_k then the query truth.
std::vector<double> x_targets(const Prompt& prompt);

}  // namespace iclcot
