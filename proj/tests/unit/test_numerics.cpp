#include <doctest.h>

#include <cmath>
#include <numeric>

#include "iclcot/numerics/adam.hpp"
#include "iclcot/numerics/matrix.hpp"
#include "iclcot/numerics/rng.hpp"
#include "iclcot/numerics/tape.hpp"
#include "support/gradcheck.hpp"

using namespace iclcot;
using iclcot::testing::check_gradients;
using Var = Tape<double>::Var;

TEST_CASE("gaussian_sample is reproducible for one (seed, stream)") {
  Rng a(42, Stream::kTrain), b(42, Stream::kTrain);
  CHECK(gaussian_sample<double>(a, 2, 2) == gaussian_sample<double>(b, 2, 2));
  Rng c(42, Stream::kInit);
  CHECK(std::isfinite(gaussian_sample<double>(c, 1, 1)[0]));
  CHECK_THROWS_AS(gaussian_sample<double>(c, 0, 3), ContractError);
}

TEST_CASE("gaussian_sample moments") {
  Rng rng(7, Stream::kTrain);
  const auto m = gaussian_sample<double>(rng, 100000, 1);
  double mean = 0.0;
  for (double v : m.data()) mean += v;
  mean /= static_cast<double>(m.size());
  double var = 0.0;
  for (double v : m.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m.size() - 1);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("split streams differ and do not advance the parent") {
  Rng parent(3, Stream::kEval);
  const auto before = parent.counter();
  Rng a = parent.split(1), b = parent.split(2);
  CHECK(parent.counter() == before);
  int same = 0;
  for (int i = 0; i < 1000; ++i) same += a.next_u64() == b.next_u64();
  CHECK(same == 0);
  // Crude independence check: correlation of paired uniforms stays near zero.
  Rng c = parent.split(10), d = parent.split(11);
  double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = c.uniform(), y = d.uniform();
    sxy += x * y; sx += x; sy += y; sxx += x * x; syy += y * y;
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  CHECK(std::abs(corr) < 0.05);
}

TEST_CASE("uniform_index stays in range") {
  Rng rng(1, Stream::kPolicy);
  std::vector<int> counts(3);
  for (int i = 0; i < 3000; ++i) counts[rng.uniform_index(3)]++;
  for (int c : counts) CHECK(c > 800);
  CHECK_THROWS_AS(rng.uniform_index(0), ContractError);
}

TEST_CASE("matmul") {
  const auto a = Matrix64::from_rows({{1, 2}, {3, 4}});
  const auto b = Matrix64::from_rows({{5}, {6}});
  CHECK(matmul(a, b) == Matrix64::from_rows({{17}, {39}}));
  CHECK_THROWS_AS(matmul(b, b), ShapeError);

  Rng rng(5, Stream::kInit);
  const auto r = gaussian_sample<double>(rng, 4, 4);
  CHECK(matmul(r, Matrix64::identity(4)) == r);
  CHECK(matmul(Matrix64(3, 4), r) == Matrix64(3, 4));
}

TEST_CASE("float matmul accumulates in double") {
  // 1 + 1e-8 * n is representable after the sum only with wide accumulation
  // and a single final rounding.
  const std::size_t n = 4096;
  Matrix32 a(1, n, 1.0f), b(n, 1, 1.0f);
  a[0] = 1.0e8f;
  const float got = matmul(a, b)[0];
  CHECK(got == static_cast<float>(1.0e8 + 4095.0));
}

TEST_CASE("relu") {
  const auto m = Matrix64::from_rows({{-1, 0, 2}});
  CHECK(relu(m) == Matrix64::from_rows({{0, 0, 2}}));
  CHECK(relu(relu(m)) == relu(m));
  CHECK(relu(Matrix64::from_rows({{-3, -0.5}})) == Matrix64(1, 2));
}

TEST_CASE("softmax") {
  const std::vector<double> z{0, 0, 0};
  for (double p : softmax(z)) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const std::vector<double> big{1000, 0};
  const auto p = softmax(big);
  CHECK(std::isfinite(p[0]));
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] < 1e-300);

  Rng rng(9, Stream::kPolicy);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(7), shifted(7);
    const double c = 50.0 * rng.normal();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = 3.0 * rng.normal();
      shifted[i] = v[i] + c;
    }
    const auto a = softmax(v), b = softmax(shifted);
    CHECK(std::abs(std::accumulate(a.begin(), a.end(), 0.0) - 1.0) < 1e-9);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
}

TEST_CASE("backward basics") {
  Matrix64 w(2, 3, 0.5);
  {
    Tape<double> tape;
    const Var W = tape.parameter(0, w);
    const auto g = tape.backward(tape.sum(W));
    CHECK(g.at(0) == Matrix64(2, 3, 1.0));
  }
  {
    Tape<double> tape;
    const Var W = tape.parameter(0, w);
    (void)W;
    const Var c = tape.constant(Matrix64(1, 1, 4.0));
    const auto g = tape.backward(c);
    CHECK(g.at(0) == Matrix64(2, 3));
  }
  {
    Tape<double> tape;
    const Var W = tape.parameter(0, w);
    CHECK_THROWS_AS(tape.backward(W), ContractError);
  }
  {
    Tape<double> tape(false);
    const Var W = tape.parameter(0, w);
    CHECK_THROWS_AS(tape.backward(tape.sum(W)), ContractError);
  }
}

TEST_CASE("||Wx - y||^2 gradient matches finite differences") {
  Rng rng(11, Stream::kInit);
  const auto x = gaussian_sample<double>(rng, 4, 1);
  const auto y = gaussian_sample<double>(rng, 3, 1);
  const auto res = check_gradients(
      [&](Tape<double>& t, const std::vector<Var>& p) {
        return t.sum(t.square(t.sub(t.matmul(p[0], t.constant(x)), t.constant(y))));
      },
      {gaussian_sample<double>(rng, 3, 4)});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("gradients are identical when a pass is replayed") {
  Rng rng(12, Stream::kInit);
  const auto w = gaussian_sample<double>(rng, 3, 3);
  auto run = [&] {
    Tape<double> t;
    const Var W = t.parameter(0, w);
    return t.backward(t.mean(t.gelu(t.matmul(W, W)))).at(0);
  };
  CHECK(run() == run());
}

TEST_CASE("adam") {
  std::vector<Matrix64> params{Matrix64(2, 2, 1.5)};
  AdamState state = AdamState::zeros_like(params);
  CHECK(state.m[0] == Matrix64(2, 2));
  CHECK(state.v[0] == Matrix64(2, 2));
  adam_step(params, std::vector<Matrix64>{Matrix64(2, 2)}, state, 0.1);
  CHECK(params[0] == Matrix64(2, 2, 1.5));
  CHECK_THROWS_AS(adam_step(params, std::vector<Matrix64>{Matrix64(1, 2)}, state, 0.1), ShapeError);

  // f(x) = x^2 from x = 1, lr 0.1.
  std::vector<Matrix64> x{Matrix64(1, 1, 1.0)};
  AdamState s = AdamState::zeros_like(x);
  int reached = -1;
  for (int step = 1; step <= 100; ++step) {
    adam_step(x, std::vector<Matrix64>{Matrix64(1, 1, 2.0 * x[0][0])}, s, 0.1);
    if (std::abs(x[0][0]) < 0.1) {
      reached = step;
      break;
    }
  }
  CHECK(reached > 0);

  // Reference recurrence written out by hand for the first two steps.
  std::vector<Matrix64> z{Matrix64(1, 1, 1.0)};
  AdamState sz = AdamState::zeros_like(z);
  adam_step(z, std::vector<Matrix64>{Matrix64(1, 1, 2.0)}, sz, 0.1);
  // m_hat = g, v_hat = g^2 on step one: update = lr * g / (|g| + eps).
  CHECK(z[0][0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
}
