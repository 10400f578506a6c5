#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "iclcot/numerics/tape.hpp"

namespace iclcot::testing {

using Tape64 = Tape<double>;
using GraphFn = std::function<Tape64::Var(Tape64&, const std::vector<Tape64::Var>&)>;

struct GradCheck {
  double max_rel_error = 0.0;  // worst tensor, ||analytic - numeric|| / max(norms)
  std::size_t entries = 0;
};

inline double evaluate(const GraphFn& build, const std::vector<Matrix64>& params) {
  Tape64 tape(false);
  std::vector<Tape64::Var> vars;
  for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.parameter(i, params[i]));
  return tape.value(build(tape, vars))[0];
}

// Central differences with step h on every entry of every parameter.
inline GradCheck check_gradients(const GraphFn& build, std::vector<Matrix64> params,
                                 double h = 1e-5) {
  Tape64 tape;
  std::vector<Tape64::Var> vars;
  for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.parameter(i, params[i]));
  const auto analytic = tape.backward(build(tape, vars));

  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Matrix64& a = analytic.at(p);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + h;
      const double up = evaluate(build, params);
      params[p][i] = orig - h;
      const double down = evaluate(build, params);
      params[p][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (a[i] - numeric) * (a[i] - numeric);
      a2 += a[i] * a[i];
      n2 += numeric * numeric;
      ++out.entries;
    }
    const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    out.max_rel_error = std::max(out.max_rel_error, std::sqrt(diff2) / scale);
  }
  return out;
}

}  // namespace iclcot::testing
