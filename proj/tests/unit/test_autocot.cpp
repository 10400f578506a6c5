#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "iclcot/autocot/pipeline.hpp"
#include "iclcot/oracles/oracles.hpp"

using namespace iclcot;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.embed_dim = 8;
  c.max_tokens = 40;
  c.input_dim = 3;
  return c;
}

double variance(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("query loss arithmetic") {
  CHECK(autocot_query_loss(1.3, 1.0, 20) == doctest::Approx(0.0045).epsilon(1e-12));
  CHECK(autocot_query_loss(5.0, 3.0, 4) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(autocot_query_loss(2.5, 2.5, 7) == 0.0);
  Rng rng(1, Stream::kPool);
  for (int i = 0; i < 100; ++i) CHECK(autocot_query_loss(rng.normal(), rng.normal(), 3) >= 0.0);
}

TEST_CASE("prune: thresholds, subset and order") {
  const std::vector<double> losses{0.4, 0.1, 0.9, 0.1, 0.5};
  const auto all = prune(losses, Threshold::fixed(INFINITY));
  CHECK(all.retained.size() == losses.size());
  const auto some = prune(losses, Threshold::fixed(0.45));
  CHECK(some.retained == std::vector<std::size_t>{0, 1, 3});
  const auto med = prune(losses, Threshold::median());
  CHECK(med.epsilon == 0.4);
  CHECK(med.retained.size() == 3);  // ceil(5/2)
  try {
    prune(losses, Threshold::fixed(0.05));
    FAIL("expected EmptyPrunedPool");
  } catch (const EmptyPrunedPool& e) {
    CHECK(e.min_loss() == 0.1);
  }
}

TEST_CASE("prune: median retains ceil(K/2) with ties kept") {
  Rng rng(2, Stream::kPool);
  for (std::size_t K : {1u, 2u, 7u, 8u, 32u}) {
    std::vector<double> losses(K);
    for (auto& l : losses) l = std::abs(rng.normal());
    CHECK(prune(losses, Threshold::median()).retained.size() == (K + 1) / 2);
  }
  const std::vector<double> tied{1.0, 1.0, 1.0, 2.0};
  CHECK(prune(tied, Threshold::median()).retained.size() == 3);
}

TEST_CASE("threshold JSON forms") {
  nlohmann::json j = Threshold::median();
  CHECK(j == "median");
  j = Threshold::fixed(INFINITY);
  CHECK(j == "inf");
  j = Threshold::fixed(0.25);
  CHECK(j == 0.25);
  CHECK(nlohmann::json("inf").get<Threshold>().value == INFINITY);
  CHECK(nlohmann::json(0.5).get<Threshold>().value == 0.5);
}

TEST_CASE("policy gradient: equal losses cancel, sums to zero, size checks") {
  const std::vector<double> logits{0.2, -0.4, 1.0};
  const std::vector<std::size_t> idx{0, 2, 2, 1};
  const std::vector<double> flat{3.0, 3.0, 3.0, 3.0};
  for (double g : policy_gradient(flat, idx, logits)) CHECK(g == 0.0);
  const std::vector<double> losses{1.0, 0.0, 4.0, 2.0};
  const auto g = policy_gradient(losses, idx, logits);
  CHECK(std::abs(std::accumulate(g.begin(), g.end(), 0.0)) < 1e-12);
  const std::vector<double> one{1.0};
  const std::vector<std::size_t> one_idx{0};
  CHECK_THROWS_AS(policy_gradient(one, one_idx, logits), ContractError);
  const std::vector<double> bad{1.0, NAN};
  const std::vector<std::size_t> two{0, 1};
  CHECK_THROWS_AS(policy_gradient(bad, two, logits), ContractError);
  CHECK_THROWS_AS(policy_gradient(losses, two, logits), ShapeError);
}

TEST_CASE("policy gradient mean tracks the enumerated gradient") {
  const std::vector<double> losses{0.2, 1.5, 0.7};
  const std::vector<double> logits{0.3, -0.2, 0.1};
  const auto exact = expected_policy_gradient_bruteforce(losses, logits);
  SelectionPolicy pol(3);
  pol.logits = logits;
  const auto p = pol.probabilities();
  Rng rng(3, Stream::kPolicy);
  std::vector<double> mean(3, 0.0);
  const int batches = 20000;
  for (int b = 0; b < batches; ++b) {
    std::vector<std::size_t> idx(8);
    std::vector<double> l(8);
    for (std::size_t i = 0; i < 8; ++i) {
      const double u = rng.uniform();
      idx[i] = u < p[0] ? 0 : (u < p[0] + p[1] ? 1 : 2);
      l[i] = losses[idx[i]];
    }
    const auto g = policy_gradient(l, idx, logits);
    for (int j = 0; j < 3; ++j) mean[j] += g[j] / batches;
  }
  double dot = 0, na = 0, nb = 0;
  for (int j = 0; j < 3; ++j) {
    dot += mean[j] * exact[j];
    na += mean[j] * mean[j];
    nb += exact[j] * exact[j];
  }
  CHECK(dot / std::sqrt(na * nb) > 0.99);
}

TEST_CASE("select_train prefers the low-loss arm and is deterministic") {
  const std::vector<double> arm{0.0, 10.0};
  SampleLoss loss = [&](std::span<const std::size_t> idx, Rng&) {
    std::vector<double> out;
    for (auto i : idx) out.push_back(arm[i]);
    return out;
  };
  PipelineConfig cfg;
  cfg.batch = 8;
  cfg.epochs = 50;
  cfg.policy_lr = 0.1;
  Rng r1(4, Stream::kPolicy), r2(4, Stream::kPolicy);
  SelectTrace trace;
  const auto a = select_train(SelectionPolicy(2), loss, cfg, r1, &trace);
  const auto b = select_train(SelectionPolicy(2), loss, cfg, r2);
  CHECK(a.probabilities()[0] > 0.9);
  CHECK(a.logits == b.logits);
  CHECK(trace.logits_per_epoch.size() == 50);
  CHECK(a.top(1) == std::vector<std::size_t>{0});

  cfg.epochs = 0;
  Rng r3(4, Stream::kPolicy);
  CHECK(select_train(SelectionPolicy(2), loss, cfg, r3).logits == std::vector<double>{0.0, 0.0});
}

TEST_CASE("augment builds chained demos and a perfect model keeps all of them") {
  OracleChainGenerator gen;
  Rng rng(5, Stream::kPool);
  const auto pool = augment(TaskFamily::kRelu2NN, 6, 4, 3, 5, gen, rng);
  REQUIRE(pool.size() == 6);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& d = pool.demos[i];
    REQUIRE(d.chains.size() == 4);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(d.chains[j].final == d.prompt.pairs[j].y);
      CHECK(task_eval(pool.task_of(i), d.prompt.pairs[j].x) == d.prompt.pairs[j].y);
    }
  }
  TruthPredictor truth;
  for (double l : pool_query_losses(pool, truth, true)) CHECK(l == 0.0);

  PipelineConfig cfg;
  cfg.pool_size = 6;
  cfg.batch = 3;
  cfg.epochs = 4;
  cfg.repeats = 4;
  Rng policy(5, Stream::kPolicy);
  const auto out = run_pipeline(pool, truth, cfg, policy);
  CHECK(out.record.retained.size() == 6);
  CHECK(out.selected.size() == 3);
  CHECK(std::abs(std::accumulate(out.selected_weights.begin(), out.selected_weights.end(), 0.0) - 1.0) < 1e-12);
}

TEST_CASE("pipeline with a transformer: empty prune path and JSON record") {
  Rng init(6, Stream::kInit);
  const Transformer<float> model(small_model(), init);
  TransformerPredictor pred(model);
  OracleChainGenerator gen;
  Rng rng(6, Stream::kPool);
  const auto pool = augment(TaskFamily::kLinear, 8, 3, 3, 1, gen, rng);
  PipelineConfig cfg;
  cfg.pool_size = 8;
  cfg.batch = 4;
  cfg.epochs = 3;
  cfg.epsilon = Threshold::fixed(1e-12);
  Rng policy(6, Stream::kPolicy);
  CHECK_THROWS_AS(run_pipeline(pool, pred, cfg, policy), EmptyPrunedPool);

  cfg.epsilon = Threshold::fixed(INFINITY);
  Rng p1(6, Stream::kPolicy), p2(6, Stream::kPolicy);
  const auto a = run_pipeline(pool, pred, cfg, p1);
  const auto b = run_pipeline(pool, pred, cfg, p2);
  CHECK(a.record.retained.size() == 8);
  CHECK(a.record.selected == b.record.selected);
  const nlohmann::json j = a.record;
  CHECK(j.at("policy_logits_per_epoch").size() == 3);
  CHECK(j.at("pool_losses").size() == 8);
}

TEST_CASE("inference averages repeats") {
  Rng init(7, Stream::kInit);
  const Transformer<float> model(small_model(), init);
  TransformerPredictor pred(model);
  OracleChainGenerator gen;
  Rng rng(7, Stream::kPool);
  const auto pool = augment(TaskFamily::kLinear, 8, 3, 3, 1, gen, rng);
  const std::vector<double> weights(8, 1.0 / 8);
  const std::vector<double> qx{0.5, -1.0, 0.2};

  // One demonstration, one repeat: a plain forward pass.
  Rng r(1, Stream::kInference);
  const std::vector<double> w1{1.0};
  const double single = inference(pred, std::span(pool.demos).first(1), w1, qx, 1, true, r);
  Prompt p = pool.demos[0].prompt;
  p.query_x = qx;
  CHECK(single == doctest::Approx(pred.predict_query(p, pool.demos[0].chains)).epsilon(1e-12));
  Rng r2(2, Stream::kInference);
  CHECK(inference(pred, std::span(pool.demos).first(1), w1, qx, 9, true, r2) ==
        doctest::Approx(single).epsilon(1e-12));

  // The mean of R repeats has about 1/R of the single-draw variance.
  std::vector<double> ones, sixteens;
  for (int t = 0; t < 400; ++t) {
    Rng a = Rng(8, Stream::kInference).split(t);
    Rng b = Rng(9, Stream::kInference).split(t);
    ones.push_back(inference(pred, pool.demos, weights, qx, 1, true, a));
    sixteens.push_back(inference(pred, pool.demos, weights, qx, 16, true, b));
  }
  const double ratio = variance(ones) / 16.0 / variance(sixteens);
  CHECK(ratio > 1.0 / 3.0);
  CHECK(ratio < 3.0);
}
