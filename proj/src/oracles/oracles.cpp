#include "iclcot/oracles/oracles.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace iclcot {

std::vector<double> least_squares_fit(std::span<const Pair> pairs) {
  if (pairs.empty()) throw ContractError("least_squares_fit: need at least one pair");
  const std::size_t d = pairs.front().x.size();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(d));
  Eigen::VectorXd y(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].x.size() != d) throw ShapeError("least_squares_fit: inconsistent x dimension");
    for (std::size_t c = 0; c < d; ++c) {
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = pairs[i].x[c];
    }
    y(static_cast<Eigen::Index>(i)) = pairs[i].y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd w = svd.solve(y);
  return std::vector<double>(w.data(), w.data() + w.size());
}

ChainTrace chain_trace(const Task& task, std::span<const double> x) {
  ChainTrace trace;
  if (const auto* lin = std::get_if<LinearTask>(&task)) {
    auto products = linear_products(*lin, x);
    trace.final = sum_in_order(products);
    trace.steps.push_back({"products", std::move(products)});
    trace.steps.push_back({"output", {trace.final}});
    return trace;
  }
  const auto& nn = std::get<Relu2NNTask>(task);
  auto hidden = relu2nn_hidden(nn, x);
  trace.final = relu2nn_output(nn, hidden);
  trace.steps.push_back({"layer1", std::move(hidden)});
  trace.steps.push_back({"layer2", {trace.final}});
  return trace;
}

std::vector<double> expected_policy_gradient_bruteforce(std::span<const double> losses,
                                                        std::span<const double> logits) {
  if (losses.size() != logits.size()) {
    throw ShapeError("expected_policy_gradient_bruteforce: losses/logits size mismatch");
  }
  if (losses.empty() || losses.size() > kMaxEnumerablePool) {
    throw ContractError("expected_policy_gradient_bruteforce: pool size " +
                        std::to_string(losses.size()) + " outside [1, " +
                        std::to_string(kMaxEnumerablePool) + "]");
  }
  const auto p = softmax(logits);
  // dE/dz_i = sum_j L_j * dp_j/dz_i, dp_j/dz_i = p_j (delta_ij - p_i).
  std::vector<double> grad(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double dpj = p[j] * ((i == j ? 1.0 : 0.0) - p[i]);
      grad[i] += losses[j] * dpj;
    }
  }
  return grad;
}

}  // namespace iclcot
