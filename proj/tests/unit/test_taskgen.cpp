#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "iclcot/oracles/oracles.hpp"
#include "iclcot/taskgen/task.hpp"

using namespace iclcot;

namespace {

// Independent forward pass, written without the library helpers.
double hand_relu2nn(const Relu2NNTask& t, const std::vector<double>& x) {
  double out = t.b2;
  for (std::size_t i = 0; i < t.w1.rows(); ++i) {
    double a = t.b1[i];
    for (std::size_t j = 0; j < t.w1.cols(); ++j) a += t.w1(i, j) * x[j];
    out += t.w2[i] * (a > 0 ? a : 0.0);
  }
  return out > 0 ? out : 0.0;
}

}  // namespace

TEST_CASE("linear task_eval hand cases") {
  Task t = LinearTask{{1.0, 2.0}};
  CHECK(task_eval(t, std::vector<double>{3.0, 4.0}) == 11.0);
  CHECK(task_eval(t, std::vector<double>{0.0, 0.0}) == 0.0);
  Task zero = LinearTask{{0.0, 0.0, 0.0}};
  CHECK(task_eval(zero, std::vector<double>{1.5, -2.0, 7.0}) == 0.0);
  CHECK_THROWS_AS(task_eval(t, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("relu2nn matches an independent forward pass") {
  Rng rng(5, Stream::kTrain);
  for (int rep = 0; rep < 20; ++rep) {
    const auto task = sample_relu2nn_task(2, 2, rng);
    const Task t = task;
    for (int i = 0; i < 10; ++i) {
      std::vector<double> x{rng.normal(), rng.normal()};
      const double y = task_eval(t, x);
      CHECK(std::abs(y - hand_relu2nn(task, x)) < 1e-12);
      CHECK(y >= 0.0);
    }
  }
  Relu2NNTask zero{Matrix64(3, 2), {0, 0, 0}, {0, 0, 0}, 0.0};
  CHECK(task_eval(Task{zero}, std::vector<double>{4.0, -1.0}) == 0.0);
}

TEST_CASE("relu2nn d=2 h=2 hand trace") {
  Relu2NNTask t{Matrix64::from_rows({{1.0, -1.0}, {0.5, 2.0}}), {0.0, -1.0}, {2.0, -3.0}, 0.5};
  const std::vector<double> x{2.0, 1.0};
  // layer 1: [2-1, 1+2-1] = [1, 2]; layer 2: 2*1 - 3*2 + 0.5 = -3.5 -> 0
  const auto trace = chain_trace(Task{t}, x);
  REQUIRE(trace.steps.size() == 2);
  CHECK(trace.steps[0].values == std::vector<double>{1.0, 2.0});
  CHECK(trace.steps[1].values == std::vector<double>{0.0});
  CHECK(trace.final == 0.0);
  t.b2 = 5.0;  // 2 - 6 + 5 = 1
  CHECK(chain_trace(Task{t}, x).final == 1.0);
}

TEST_CASE("sample_prompt shape and consistency") {
  Rng rng(1, Stream::kTrain);
  const Task t = sample_task(TaskFamily::kLinear, 20, 100, rng);
  const Prompt p = sample_prompt(t, 40, rng);
  CHECK(p.k() == 40);
  CHECK(p.dim() == 20);
  for (const auto& pair : p.pairs) CHECK(pair.y == task_eval(t, pair.x));
  REQUIRE(p.query_y_truth);
  CHECK(*p.query_y_truth == task_eval(t, p.query_x));
  const Prompt empty = sample_prompt(t, 0, rng);
  CHECK(empty.k() == 0);
  CHECK(empty.query_x.size() == 20);
}

TEST_CASE("task sampling is deterministic per seed and stream") {
  Rng a(9, Stream::kTrain), b(9, Stream::kTrain);
  const auto ta = sample_linear_task(6, a);
  const auto tb = sample_linear_task(6, b);
  CHECK(ta.w == tb.w);
  const auto tc = sample_linear_task(6, a);
  CHECK(ta.w != tc.w);

  Rng e1 = eval_rng(9, 0), e2 = eval_rng(9, 0);
  Rng train(9, Stream::kTrain);
  const Task f1 = fresh_eval_task(TaskFamily::kLinear, 6, 1, e1);
  const Task f2 = fresh_eval_task(TaskFamily::kLinear, 6, 1, e2);
  CHECK(std::get<LinearTask>(f1).w == std::get<LinearTask>(f2).w);
  CHECK(std::get<LinearTask>(f1).w != sample_linear_task(6, train).w);
}

TEST_CASE("gaussian weights have unit scale") {
  Rng rng(3, Stream::kTrain);
  double sum = 0, sq = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto t = sample_linear_task(5, rng);
    for (double w : t.w) {
      sum += w;
      sq += w * w;
    }
  }
  const double m = sum / (5.0 * n);
  CHECK(std::abs(m) < 0.05);
  CHECK(std::abs(sq / (5.0 * n) - m * m - 1.0) < 0.05);
}

TEST_CASE("prompt and task JSON round trip") {
  Rng rng(2, Stream::kTrain);
  for (auto family : {TaskFamily::kLinear, TaskFamily::kRelu2NN}) {
    const Task t = sample_task(family, 3, 4, rng);
    const Prompt p = sample_prompt(t, 5, rng);
    const nlohmann::json jt = t, jp = p;
    const Task t2 = nlohmann::json::parse(jt.dump()).get<Task>();
    const Prompt p2 = nlohmann::json::parse(jp.dump()).get<Prompt>();
    CHECK(p2 == p);
    for (const auto& pair : p.pairs) CHECK(task_eval(t2, pair.x) == pair.y);
  }
}

TEST_CASE("pad_inputs keeps targets and zero-extends") {
  Rng rng(4, Stream::kTrain);
  const Task t = sample_task(TaskFamily::kLinear, 2, 1, rng);
  Prompt p = sample_prompt(t, 3, rng);
  const Prompt before = p;
  pad_inputs(p, 5);
  CHECK(p.dim() == 5);
  for (std::size_t i = 0; i < p.k(); ++i) {
    CHECK(p.pairs[i].y == before.pairs[i].y);
    CHECK(p.pairs[i].x[4] == 0.0);
  }
  CHECK_THROWS_AS(pad_inputs(p, 2), ShapeError);
}

TEST_CASE("full column rank for k >= d") {
  Rng rng(8, Stream::kTrain);
  for (int rep = 0; rep < 10; ++rep) {
    const Task t = sample_task(TaskFamily::kLinear, 5, 1, rng);
    const Prompt p = sample_prompt(t, 7, rng);
    const auto w = least_squares_fit(p.pairs);
    double resid = 0;
    for (const auto& pair : p.pairs) {
      double pred = 0;
      for (int j = 0; j < 5; ++j) pred += w[j] * pair.x[j];
      resid += (pred - pair.y) * (pred - pair.y);
    }
    CHECK(resid < 1e-8);
  }
}
