#include "iclcot/taskgen/task.hpp"

#include <nlohmann/json.hpp>

namespace iclcot {

std::string_view to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::kLinear:
      return "linear";
    case TaskFamily::kRelu2NN:
      return "relu2nn";
  }
  return "unknown";
}

TaskFamily parse_task_family(std::string_view name) {
  if (name == "linear") return TaskFamily::kLinear;
  if (name == "relu2nn") return TaskFamily::kRelu2NN;
  throw ContractError("unknown task family '" + std::string(name) + "' (expected linear|relu2nn)");
}

std::size_t task_dim(const Task& task) {
  return std::visit([](const auto& t) { return t.dim(); }, task);
}

TaskFamily task_family(const Task& task) {
  return std::holds_alternative<LinearTask>(task) ? TaskFamily::kLinear : TaskFamily::kRelu2NN;
}

LinearTask sample_linear_task(std::size_t d, Rng& rng) {
  if (d == 0) throw ContractError("sample_linear_task: d must be >= 1");
  LinearTask t;
  t.w.resize(d);
  for (double& v : t.w) v = rng.normal();
  return t;
}

Relu2NNTask sample_relu2nn_task(std::size_t d, std::size_t hidden, Rng& rng) {
  if (d == 0 || hidden == 0) throw ContractError("sample_relu2nn_task: d and hidden must be >= 1");
  Relu2NNTask t;
  t.w1 = gaussian_sample<double>(rng, hidden, d);
  t.b1.resize(hidden);
  for (double& v : t.b1) v = rng.normal();
  t.w2.resize(hidden);
  for (double& v : t.w2) v = rng.normal();
  t.b2 = rng.normal();
  return t;
}

Task sample_task(TaskFamily family, std::size_t d, std::size_t hidden, Rng& rng) {
  if (family == TaskFamily::kLinear) return sample_linear_task(d, rng);
  return sample_relu2nn_task(d, hidden, rng);
}

namespace {

void check_dim(std::size_t expected, std::size_t got) {
  if (expected != got) {
    throw ShapeError("task input has dimension " + std::to_string(got) + ", task expects " +
                     std::to_string(expected));
  }
}

}  // namespace

std::vector<double> linear_products(const LinearTask& task, std::span<const double> x) {
  check_dim(task.dim(), x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = task.w[i] * x[i];
  return out;
}

double sum_in_order(std::span<const double> values) {
  double total = 0.0;
  for (double v : values) total += v;
  return total;
}

std::vector<double> relu2nn_hidden(const Relu2NNTask& task, std::span<const double> x) {
  check_dim(task.dim(), x.size());
  std::vector<double> h(task.hidden());
  for (std::size_t r = 0; r < h.size(); ++r) {
    double s = task.b1[r];
    auto row = task.w1.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) s += row[c] * x[c];
    h[r] = s > 0.0 ? s : 0.0;
  }
  return h;
}

double relu2nn_output(const Relu2NNTask& task, std::span<const double> hidden) {
  check_dim(task.hidden(), hidden.size());
  double s = task.b2;
  for (std::size_t r = 0; r < hidden.size(); ++r) s += task.w2[r] * hidden[r];
  return s > 0.0 ? s : 0.0;
}

double task_eval(const Task& task, std::span<const double> x) {
  if (const auto* lin = std::get_if<LinearTask>(&task)) {
    const auto products = linear_products(*lin, x);
    return sum_in_order(products);
  }
  const auto& nn = std::get<Relu2NNTask>(task);
  const auto h = relu2nn_hidden(nn, x);
  return relu2nn_output(nn, h);
}

Prompt sample_prompt(const Task& task, std::size_t k, Rng& rng) {
  const std::size_t d = task_dim(task);
  Prompt p;
  p.pairs.reserve(k);
  auto draw = [&] {
    std::vector<double> x(d);
    for (double& v : x) v = rng.normal();
    return x;
  };
  for (std::size_t i = 0; i < k; ++i) {
    Pair pair;
    pair.x = draw();
    pair.y = task_eval(task, pair.x);
    p.pairs.push_back(std::move(pair));
  }
  p.query_x = draw();
  p.query_y_truth = task_eval(task, p.query_x);
  return p;
}

Rng eval_rng(std::uint64_t seed, std::uint64_t index) {
  return Rng(seed, Stream::kEval).split(index);
}

Task fresh_eval_task(TaskFamily family, std::size_t d, std::size_t hidden, Rng& eval_stream) {
  return sample_task(family, d, hidden, eval_stream);
}

void to_json(nlohmann::json& j, const Task& task) {
  if (const auto* lin = std::get_if<LinearTask>(&task)) {
    j = {{"family", "linear"}, {"w", lin->w}};
    return;
  }
  const auto& nn = std::get<Relu2NNTask>(task);
  j = {{"family", "relu2nn"},
       {"d", nn.dim()},
       {"hidden", nn.hidden()},
       {"w1", nn.w1.values()},
       {"b1", nn.b1},
       {"w2", nn.w2},
       {"b2", nn.b2}};
}

void from_json(const nlohmann::json& j, Task& task) {
  const auto family = parse_task_family(j.at("family").get<std::string>());
  if (family == TaskFamily::kLinear) {
    task = LinearTask{j.at("w").get<std::vector<double>>()};
    return;
  }
  Relu2NNTask nn;
  const auto d = j.at("d").get<std::size_t>();
  const auto h = j.at("hidden").get<std::size_t>();
  nn.w1 = Matrix64(h, d, j.at("w1").get<std::vector<double>>());
  nn.b1 = j.at("b1").get<std::vector<double>>();
  nn.w2 = j.at("w2").get<std::vector<double>>();
  nn.b2 = j.at("b2").get<double>();
  if (nn.b1.size() != h || nn.w2.size() != h) throw ShapeError("relu2nn task: bias/readout size");
  task = std::move(nn);
}

void to_json(nlohmann::json& j, const Prompt& prompt) {
  auto pairs = nlohmann::json::array();
  for (const auto& p : prompt.pairs) pairs.push_back({{"x", p.x}, {"y", p.y}});
  j = {{"pairs", pairs}, {"query_x", prompt.query_x}};
  if (prompt.query_y_truth) j["query_y_truth"] = *prompt.query_y_truth;
}

void from_json(const nlohmann::json& j, Prompt& prompt) {
  prompt = Prompt{};
  for (const auto& p : j.at("pairs")) {
    prompt.pairs.push_back(Pair{p.at("x").get<std::vector<double>>(), p.at("y").get<double>()});
  }
  prompt.query_x = j.at("query_x").get<std::vector<double>>();
  for (const auto& p : prompt.pairs) {
    if (p.x.size() != prompt.query_x.size()) throw ShapeError("prompt: inconsistent x dimension");
  }
  if (j.contains("query_y_truth")) prompt.query_y_truth = j.at("query_y_truth").get<double>();
}

void pad_inputs(Prompt& prompt, std::size_t d) {
  if (d < prompt.dim()) throw ShapeError("pad_inputs: cannot shrink inputs");
  for (auto& p : prompt.pairs) p.x.resize(d, 0.0);
  prompt.query_x.resize(d, 0.0);
}

}  // namespace iclcot
