#include "iclcot/model/tokens.hpp"

#include <algorithm>

namespace iclcot {

std::size_t token_count(const Prompt& prompt, std::span<const ChainTrace> chains) {
  std::size_t n = 2 * prompt.k() + 1;
  for (const auto& c : chains) n += c.steps.size();
  return n;
}

TokenSequence embed_prompt(const Prompt& prompt, std::span<const ChainTrace> chains,
                           std::size_t max_tokens) {
  const std::size_t d = prompt.dim();
  if (d == 0) throw ShapeError("embed_prompt: prompt has zero-dimensional inputs");
  if (!chains.empty() && chains.size() != prompt.k()) {
    throw ContractError("embed_prompt: " + std::to_string(chains.size()) + " chains for " +
                        std::to_string(prompt.k()) + " pairs");
  }
  const std::size_t n = token_count(prompt, chains);
  if (n > max_tokens) {
    throw CapacityError("prompt needs " + std::to_string(n) + " tokens, model holds " +
                        std::to_string(max_tokens));
  }
  TokenSequence seq;
  seq.tokens = Matrix64(n, d + 2);
  std::size_t row = 0;
  auto put = [&](std::span<const double> payload, TokenKind kind) {
    auto r = seq.tokens.row(row);
    std::copy_n(payload.begin(), std::min(d, payload.size()), r.begin());
    r[d] = static_cast<double>(kind);
    ++row;
  };
  for (std::size_t j = 0; j < prompt.k(); ++j) {
    const auto& pair = prompt.pairs[j];
    if (pair.x.size() != d) throw ShapeError("embed_prompt: inconsistent x dimension");
    seq.x_positions.push_back(row);
    put(pair.x, TokenKind::kX);
    if (!chains.empty()) {
      for (const auto& step : chains[j].steps) put(step.values, TokenKind::kChainStep);
    }
    const double y = pair.y;
    put(std::span<const double>(&y, 1), TokenKind::kY);
  }
  seq.x_positions.push_back(row);
  put(prompt.query_x, TokenKind::kX);
  return seq;
}

std::vector<double> x_targets(const Prompt& prompt) {
  if (!prompt.query_y_truth) throw ContractError("x_targets: prompt has no query truth");
  std::vector<double> out;
  out.reserve(prompt.k() + 1);
  for (const auto& p : prompt.pairs) out.push_back(p.y);
  out.push_back(*prompt.query_y_truth);
  return out;
}

}  // namespace iclcot
