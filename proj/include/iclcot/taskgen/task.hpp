#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclcot/numerics/matrix.hpp"
#include "iclcot/numerics/rng.hpp"

namespace iclcot {

enum class TaskFamily { kLinear, kRelu2NN };

std::string_view to_string(TaskFamily family);
TaskFamily parse_task_family(std::string_view name);

// f(x) = w^T x
struct LinearTask {
  std::vector<double> w;

  std::size_t dim() const { return w.size(); }
};

// f(x) = ReLU(w2 . ReLU(W1 x + b1) + b2), W1 is (hidden x dim).
struct Relu2NNTask {
  Matrix64 w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;

  std::size_t dim() const { return w1.cols(); }
  std::size_t hidden() const { return w1.rows(); }
};

using Task = std::variant<LinearTask, Relu2NNTask>;

std::size_t task_dim(const Task& task);
TaskFamily task_family(const Task& task);

struct Pair {
  std::vector<double> x;
  double y = 0.0;

  bool operator==(const Pair&) const = default;
};

// (x_1, y_1, ..., x_k, y_k, x_query); query_y_truth is filled by the samplers.
struct Prompt {
  std::vector<Pair> pairs;
  std::vector<double> query_x;
  std::optional<double> query_y_truth;

  std::size_t k() const { return pairs.size(); }
  std::size_t dim() const { return query_x.size(); }
  bool operator==(const Prompt&) const = default;
};

LinearTask sample_linear_task(std::size_t d, Rng& rng);
Relu2NNTask sample_relu2nn_task(std::size_t d, std::size_t hidden, Rng& rng);
Task sample_task(TaskFamily family, std::size_t d, std::size_t hidden, Rng& rng);

// Elementwise w_i * x_i; task_eval sums exactly these in index order.
std::vector<double> linear_products(const LinearTask& task, std::span<const double> x);
double sum_in_order(std::span<const double> values);
// ReLU(W1 x + b1) and ReLU(w2 . h + b2), the two halves of task_eval.
std::vector<double> relu2nn_hidden(const Relu2NNTask& task, std::span<const double> x);
double relu2nn_output(const Relu2NNTask& task, std::span<const double> hidden);

double task_eval(const Task& task, std::span<const double> x);

Prompt sample_prompt(const Task& task, std::size_t k, Rng& rng);

// Zero-extends every x (and the query) to `d` coordinates. Targets are
// unchanged, so the prompt stays consistent with the task read as a
// d-dimensional function that ignores the extra inputs.
void pad_inputs(Prompt& prompt, std::size_t d);

// Generator for evaluation-time draws. Lives on Stream::kEval so it never
// overlaps a training, pool or policy stream for the same seed.
Rng eval_rng(std::uint64_t seed, std::uint64_t index);
Task fresh_eval_task(TaskFamily family, std::size_t d, std::size_t hidden, Rng& eval_stream);

void to_json(nlohmann::json& j, const Task& task);
void from_json(const nlohmann::json& j, Task& task);
void to_json(nlohmann::json& j, const Prompt& prompt);
void from_json(const nlohmann::json& j, Prompt& prompt);

}  // namespace iclcot
