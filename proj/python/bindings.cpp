#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>
#include <variant>

#include <nlohmann/json.hpp>

#include "iclcot/autocot/pipeline.hpp"
#include "iclcot/cli/commands.hpp"
#include "iclcot/eval/metrics.hpp"
#include "iclcot/model/checkpoint.hpp"
#include "iclcot/oracles/oracles.hpp"
#include "iclcot/taskgen/task.hpp"

namespace py = pybind11;
using namespace iclcot;

namespace {

Threshold to_threshold(const std::variant<double, std::string>& eps) {
  if (std::holds_alternative<double>(eps)) return Threshold::fixed(std::get<double>(eps));
  const auto& s = std::get<std::string>(eps);
  if (s == "median") return Threshold::median();
  if (s == "inf") return Threshold::fixed(std::numeric_limits<double>::infinity());
  throw py::value_error("epsilon must be a number, \"median\" or \"inf\"");
}

py::dict prompt_dict(const Prompt& p) {
  py::list xs, ys;
  for (const auto& pair : p.pairs) {
    xs.append(pair.x);
    ys.append(pair.y);
  }
  py::dict d;
  d["x"] = xs;
  d["y"] = ys;
  d["query_x"] = p.query_x;
  d["query_y"] = p.query_y_truth ? py::cast(*p.query_y_truth) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Numerical in-context learning with chain-of-thought demo selection";

  py::register_exception<Error>(m, "IclcotError", PyExc_RuntimeError);

  m.def("version", &cli::version_string);

  m.def("autocot_query_loss", [](double p, double t, std::size_t d) { return autocot_query_loss(p, t, d); }, py::arg("prediction"), py::arg("truth"), py::arg("d"));
  m.def("mse_normalized", &mse_normalized, py::arg("prediction"), py::arg("truth"), py::arg("d"));
  m.def("auc_binarized",
        [](const std::vector<double>& preds, const std::vector<double>& truths) {
          return auc_binarized(preds, truths);
        },
        py::arg("predictions"), py::arg("truths"));
  m.def("sign_test_p", [](const std::vector<double>& diffs) { return sign_test_p(diffs); },
        py::arg("differences"));

  m.def("prune",
        [](const std::vector<double>& losses, const std::variant<double, std::string>& eps) {
          const auto r = prune(losses, to_threshold(eps));
          return py::make_tuple(r.retained, r.epsilon);
        },
        py::arg("losses"), py::arg("epsilon") = "median",
        "Indices with loss <= epsilon (ascending) and the resolved threshold.");

  m.def("policy_gradient",
        [](const std::vector<double>& losses, const std::vector<std::size_t>& indices,
           const std::vector<double>& logits) { return policy_gradient(losses, indices, logits); },
        py::arg("losses"), py::arg("indices"), py::arg("logits"));

  m.def("least_squares_fit",
        [](const std::vector<std::vector<double>>& xs, const std::vector<double>& ys) {
          if (xs.size() != ys.size()) throw py::value_error("xs and ys differ in length");
          std::vector<Pair> pairs;
          for (std::size_t i = 0; i < xs.size(); ++i) pairs.push_back({xs[i], ys[i]});
          return least_squares_fit(pairs);
        },
        py::arg("xs"), py::arg("ys"), "Minimum-norm least-squares weights.");

  m.def("sample_prompt",
        [](const std::string& family, std::size_t d, std::size_t k, std::uint64_t seed, std::size_t hidden) {
          Rng rng = eval_rng(seed, 0);
          const Task task = sample_task(parse_task_family(family), d, hidden, rng);
          return prompt_dict(sample_prompt(task, k, rng));
        },
        py::arg("family"), py::arg("d"), py::arg("k"), py::arg("seed") = 0, py::arg("hidden") = 100);

  m.def("checkpoint_info",
        [](const std::filesystem::path& path) {
          const auto model = load_checkpoint(path);
          nlohmann::json cfg = model.config();
          py::dict d;
          d["config"] = py::module_::import("json").attr("loads")(cfg.dump());
          d["parameters"] = model.parameter_count();
          return d;
        },
        py::arg("path"));

  m.def("run",
        [](const std::string& command, const std::filesystem::path& config, const std::filesystem::path& out,
           std::optional<std::uint64_t> seed, std::optional<std::filesystem::path> checkpoint,
           std::optional<std::filesystem::path> pipeline) {
          cli::CommandOptions o;
          o.command = command;
          o.config = config;
          o.out = out;
          o.seed = seed;
          o.quiet = true;
          if (checkpoint) o.checkpoint = *checkpoint;
          if (pipeline) o.pipeline_manifest = *pipeline;
          std::ostringstream sink, err;
          const int code = cli::run_command(o, sink, err);
          return py::make_tuple(code, sink.str(), err.str());
        },
        py::arg("command"), py::arg("config"), py::arg("out") = ".", py::arg("seed") = py::none(),
        py::arg("checkpoint") = py::none(), py::arg("pipeline") = py::none(),
        "Run one CLI command in-process; returns (exit_code, stdout, stderr).");
}
