#pragma once

#include <cstdint>
#include <vector>

#include "iclcot/numerics/matrix.hpp"
#include "iclcot/numerics/tape.hpp"

namespace iclcot {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moments are kept in double for every parameter tensor.
struct AdamState {
  std::vector<Matrix64> m;
  std::vector<Matrix64> v;
  std::uint64_t step = 0;

  template <typename T>
  static AdamState zeros_like(const std::vector<Matrix<T>>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.rows(), p.cols());
      s.v.emplace_back(p.rows(), p.cols());
    }
    return s;
  }
};

// One bias-corrected Adam update. grads[i] pairs with params[i].
template <typename T>
void adam_step(std::vector<Matrix<T>>& params, const std::vector<Matrix<T>>& grads,
               AdamState& state, double lr, const AdamConfig& cfg = {});

// Same, reading gradients out of a tape's map (missing ids count as zero).
template <typename T>
void adam_step(std::vector<Matrix<T>>& params, const GradientMap<T>& grads, AdamState& state,
               double lr, const AdamConfig& cfg = {});

}  // namespace iclcot
