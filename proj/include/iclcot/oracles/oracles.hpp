#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "iclcot/taskgen/task.hpp"

namespace iclcot {

struct ChainStep {
  std::string label;
  std::vector<double> values;

  bool operator==(const ChainStep&) const = default;
};

// Exact intermediate values of a task evaluated at one input. For ReLU-2NN:
// [("layer1", hidden activations), ("layer2", {y})]. For linear:
// [("products", w o x), ("output", {y})]. `final` equals task_eval bit-for-bit.
struct ChainTrace {
  std::vector<ChainStep> steps;
  double final = 0.0;

  bool operator==(const ChainTrace&) const = default;
};

// Minimum-norm least-squares solution through an SVD pseudo-inverse.
std::vector<double> least_squares_fit(std::span<const Pair> pairs);

ChainTrace chain_trace(const Task& task, std::span<const double> x);

// Largest pool expected_policy_gradient_bruteforce will enumerate.
inline constexpr std::size_t kMaxEnumerablePool = 12;

// d/dz E_{i ~ softmax(z)}[loss_i], by summing over every pool member.
std::vector<double> expected_policy_gradient_bruteforce(std::span<const double> losses,
                                                        std::span<const double> logits);

}  // namespace iclcot
