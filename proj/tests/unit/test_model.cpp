#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "iclcot/model/checkpoint.hpp"
#include "iclcot/model/train.hpp"

using namespace iclcot;

namespace {

ModelConfig tiny_config(std::size_t d = 2) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.embed_dim = 8;
  c.max_tokens = 16;
  c.input_dim = d;
  return c;
}

std::vector<Prompt> prompts_for(std::size_t n, std::size_t k, std::size_t d, Rng& rng,
                                std::vector<Task>* tasks = nullptr) {
  std::vector<Prompt> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Task t = sample_task(TaskFamily::kRelu2NN, d, 3, rng);
    out.push_back(sample_prompt(t, k, rng));
    if (tasks) tasks->push_back(t);
  }
  return out;
}

}  // namespace

TEST_CASE("embed_prompt layout") {
  Rng rng(1, Stream::kTrain);
  const Task t = sample_task(TaskFamily::kRelu2NN, 3, 4, rng);
  const Prompt p = sample_prompt(t, 4, rng);
  const auto seq = embed_prompt(p, {}, 64);
  CHECK(seq.length() == 9);
  CHECK(seq.tokens.cols() == 5);
  CHECK(seq.x_positions.size() == 5);
  CHECK(seq.tokens(1, 3) == 1.0);  // y_1 flag
  CHECK(seq.tokens(1, 0) == p.pairs[0].y);
  CHECK(seq.tokens(1, 1) == 0.0);
  CHECK(seq.tokens(0, 3) == 0.0);
  CHECK(seq.tokens(0, 4) == 0.0);

  std::vector<ChainTrace> chains;
  for (const auto& pair : p.pairs) chains.push_back(chain_trace(t, pair.x));
  const auto with = embed_prompt(p, chains, 64);
  CHECK(with.length() == 2 * 4 + 1 + 2 * 4);
  CHECK(with.tokens(1, 3) == 2.0);
  CHECK(with.tokens(3, 3) == 1.0);
  CHECK_THROWS_AS(embed_prompt(p, chains, 10), CapacityError);
}

TEST_CASE("forward gives k+1 finite predictions") {
  Rng rng(2, Stream::kInit);
  const Transformer<float> model(tiny_config(), rng);
  for (std::size_t k : {0u, 1u, 5u}) {
    const auto prompts = prompts_for(1, k, 2, rng);
    const auto preds = model.predict(embed_prompt(prompts[0], {}, 16));
    CHECK(preds.size() == k + 1);
    for (double v : preds) CHECK(std::isfinite(v));
  }
}

TEST_CASE("causal mask: suffix edits leave prefix predictions identical") {
  Rng rng(3, Stream::kInit);
  const Transformer<float> model(tiny_config(), rng);
  for (int rep = 0; rep < 10; ++rep) {
    auto prompts = prompts_for(1, 6, 2, rng);
    Prompt p = prompts[0];
    const auto before = model.predict(embed_prompt(p, {}, 16));
    const std::size_t j = 1 + rng.uniform_index(5);
    p.pairs[j].x[0] += 3.0;
    p.pairs[j].y -= 1.0;
    p.query_x[1] = 7.0;
    const auto after = model.predict(embed_prompt(p, {}, 16));
    for (std::size_t i = 0; i < j; ++i) CHECK(after[i] == before[i]);
    CHECK(after.back() != before.back());
  }
}

TEST_CASE("training loss gradient matches finite differences") {
  Rng rng(4, Stream::kInit);
  Transformer<double> model(tiny_config(), rng);
  std::vector<Task> tasks;
  const auto prompts = prompts_for(3, 3, 2, rng, &tasks);
  const auto batch = make_batch<double>(prompts, tasks, true, 16);

  Tape<double> tape;
  const auto grads = tape.backward(prefix_loss(model, tape, batch));
  auto loss_at = [&] {
    Tape<double> t(false);
    return t.value(prefix_loss(model, t, batch))[0];
  };
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t p = 0; p < model.parameters().size(); ++p) {
    auto& w = model.parameters()[p];
    double diff2 = 0, a2 = 0, n2 = 0;
    for (int s = 0; s < 6; ++s) {
      const std::size_t i = rng.uniform_index(w.size());
      const double orig = w[i];
      w[i] = orig + h;
      const double up = loss_at();
      w[i] = orig - h;
      const double down = loss_at();
      w[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.at(p)[i];
      diff2 += (numeric - analytic) * (numeric - analytic);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(std::max(a2, n2)), 1e-8);
    worst = std::max(worst, std::sqrt(diff2) / scale);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("parameter count of the large configuration") {
  const auto cfg = reference_model_config();
  const std::size_t ours = parameter_count(cfg);
  // The stated 22.4M counts a GPT-2 token table (50257 x 256) that a
  // continuous-input model has no use for; the transformer body is shared.
  const double with_vocab = static_cast<double>(ours + 50257 * 256);
  CHECK(std::abs(with_vocab - 22.4e6) / 22.4e6 < 0.10);
  Rng rng(5, Stream::kInit);
  CHECK(Transformer<float>(tiny_config(), rng).parameter_count() == parameter_count(tiny_config()));
  ModelConfig bad = tiny_config();
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("overfit a single task") {
  TrainConfig t;
  t.steps = 1500;
  t.batch_size = 16;
  t.learning_rate = 3e-3;
  t.k_max = 5;
  t.fixed_task = true;
  t.log_every = 100;
  t.seed = 6;
  ModelConfig m = tiny_config(2);
  m.embed_dim = 16;
  m.n_layers = 1;
  const auto result = train(t, m);
  for (const auto& p : result.curve) CHECK(std::isfinite(p.loss));
  CHECK(result.curve.back().loss < 1e-2);
}

TEST_CASE("training is bit-deterministic and rejects bad configs") {
  TrainConfig t;
  t.steps = 5;
  t.batch_size = 4;
  t.k_max = 3;
  t.seed = 7;
  t.chain_fraction = 0.5;
  const auto a = train(t, tiny_config());
  const auto b = train(t, tiny_config());
  CHECK(a.model.parameters() == b.model.parameters());
  CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));

  TrainConfig big = t;
  big.k_max = 10;  // 21 + 20 chain tokens > 16
  CHECK_THROWS_AS(big.validate(tiny_config()), ContractError);
}

TEST_CASE("dimension curriculum schedule") {
  TrainConfig t;
  CHECK(t.active_dim(1, 5) == 5);
  t.curriculum_start_dim = 2;
  t.curriculum_dim_every = 10;
  CHECK(t.active_dim(1, 5) == 2);
  CHECK(t.active_dim(10, 5) == 2);
  CHECK(t.active_dim(11, 5) == 3);
  CHECK(t.active_dim(1000, 5) == 5);
}

TEST_CASE("non-finite loss aborts with step and rate") {
  TrainConfig t;
  t.steps = 50;
  t.batch_size = 4;
  t.k_max = 3;
  t.learning_rate = 1e300;
  try {
    train(t, tiny_config());
    FAIL("expected NumericAbort");
  } catch (const NumericAbort& e) {
    CHECK(e.step() >= 1);
    CHECK(e.learning_rate() == 1e300);
  }
}

TEST_CASE("checkpoint round trip and load errors") {
  Rng rng(8, Stream::kInit);
  const Transformer<float> model(tiny_config(), rng);
  const auto bytes = serialize_checkpoint(model);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.parameters() == model.parameters());
  CHECK(serialize_checkpoint(back) == bytes);

  auto kind_of = [](const std::vector<std::uint8_t>& b) {
    try {
      deserialize_checkpoint(b);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  using Kind = CheckpointError::Kind;

  auto corrupt = bytes;
  corrupt[corrupt.size() - 10] ^= 0x40;
  CHECK(kind_of(corrupt) == static_cast<int>(Kind::kChecksum));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 100);
  CHECK(kind_of(truncated) == static_cast<int>(Kind::kTruncated));

  auto magic = bytes;
  magic[0] = 'X';
  CHECK(kind_of(magic) == static_cast<int>(Kind::kMalformedHeader));

  auto header = bytes;
  std::string text(header.begin(), header.end());
  const auto pos = text.find("[4,8]");
  REQUIRE(pos != std::string::npos);
  header[pos + 1] = '5';
  CHECK(kind_of(header) == static_cast<int>(Kind::kShapeMismatch));

  auto garbage = bytes;
  garbage[17] = '}';
  CHECK(kind_of(garbage) == static_cast<int>(Kind::kMalformedHeader));

  const auto dir = std::filesystem::temp_directory_path() / "iclcot_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(model, dir / "a.bin");
  CHECK(load_checkpoint(dir / "a.bin").parameters() == model.parameters());
  ModelConfig other = tiny_config();
  other.n_layers = 3;
  try {
    load_checkpoint(dir / "a.bin", other);
    FAIL("expected config mismatch");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == Kind::kConfigMismatch);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), CheckpointError);
  std::filesystem::remove_all(dir);
}
