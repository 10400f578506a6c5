#include "iclcot/numerics/adam.hpp"

#include <cmath>

namespace iclcot {

namespace {

template <typename T>
void update_one(Matrix<T>& p, const Matrix<T>* g, Matrix64& m, Matrix64& v, double lr,
                double bc1, double bc2, const AdamConfig& cfg) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double delta = lr * mhat / (std::sqrt(vhat) + cfg.eps);
    if (delta != 0.0) p[i] = static_cast<T>(static_cast<double>(p[i]) - delta);
  }
}

template <typename T>
void check_state(const std::vector<Matrix<T>>& params, const AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state has " + std::to_string(state.m.size()) +
                     " slots for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != state.m[i].rows() || params[i].cols() != state.m[i].cols()) {
      throw ShapeError("adam_step: state shape mismatch for parameter " + std::to_string(i));
    }
  }
}

}  // namespace

template <typename T>
void adam_step(std::vector<Matrix<T>>& params, const std::vector<Matrix<T>>& grads,
               AdamState& state, double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i])) {
      throw ShapeError("adam_step: gradient " + shape_string(grads[i]) + " for parameter " +
                       shape_string(params[i]));
    }
  }
  check_state(params, state);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    update_one(params[i], &grads[i], state.m[i], state.v[i], lr, bc1, bc2, cfg);
  }
}

template <typename T>
void adam_step(std::vector<Matrix<T>>& params, const GradientMap<T>& grads, AdamState& state,
               double lr, const AdamConfig& cfg) {
  check_state(params, state);
  for (const auto& [id, g] : grads) {
    if (id >= params.size() || !params[id].same_shape(g)) {
      throw ShapeError("adam_step: gradient for unknown or mis-shaped parameter " +
                       std::to_string(id));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = grads.find(i);
    update_one(params[i], it == grads.end() ? nullptr : &it->second, state.m[i], state.v[i], lr,
               bc1, bc2, cfg);
  }
}

template void adam_step<float>(std::vector<Matrix32>&, const std::vector<Matrix32>&, AdamState&,
                               double, const AdamConfig&);
template void adam_step<double>(std::vector<Matrix64>&, const std::vector<Matrix64>&, AdamState&,
                                double, const AdamConfig&);
template void adam_step<float>(std::vector<Matrix32>&, const GradientMap<float>&, AdamState&,
                               double, const AdamConfig&);
template void adam_step<double>(std::vector<Matrix64>&, const GradientMap<double>&, AdamState&,
                                double, const AdamConfig&);

}  // namespace iclcot
