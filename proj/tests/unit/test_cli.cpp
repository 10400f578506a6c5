#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "iclcot/cli/commands.hpp"

using namespace iclcot;
using namespace iclcot::cli;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(seed = 3

[task]
family = "relu2nn"
d = 3
hidden = 4

[model]
n_layers = 1
n_heads = 2
embed_dim = 8
max_tokens = 24

[train]
steps = 6
batch_size = 4
k_max = 4
chain_fraction = 0.5
log_every = 3

[pipeline]
K = 6
epsilon = "median"
B = 3
N = 2
repeats = 2
context_len = 3

[eval]
context_lengths = [1, 3]
trials = 4
repeats = 2
)";

struct Sandbox {
  fs::path root;
  Sandbox() {
    root = fs::temp_directory_path() / ("iclcot_cli_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Sandbox() { fs::remove_all(root); }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(root / name) << text;
    return root / name;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream b;
  b << in.rdbuf();
  return b.str();
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

int run(const CommandOptions& o, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_command(o, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

CommandOptions opts(const std::string& cmd, const fs::path& config, const fs::path& out) {
  CommandOptions o;
  o.command = cmd;
  o.config = config;
  o.out = out;
  o.quiet = true;
  return o;
}

}  // namespace

TEST_CASE("config: defaults, canonical JSON and field diagnostics") {
  const auto cfg = config_from_json(toml_to_json(kTiny, "tiny"));
  CHECK(cfg.model->input_dim == 3);
  CHECK(cfg.train->learning_rate == 1e-4);
  CHECK(cfg.pipeline->config.epsilon.mode == Threshold::Mode::kMedian);
  const auto again = config_from_json(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());

  auto field_of = [](const std::string& text) {
    try {
      config_from_json(toml_to_json(text, "t"));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(field_of(replace(kTiny, "n_layers = 1\n", "")).find("`model.n_layers`") != std::string::npos);
  CHECK(field_of(replace(kTiny, "n_heads = 2", "n_heads = 3")).find("model") != std::string::npos);
  CHECK(field_of(replace(kTiny, "steps = 6", "steps = -1")).find("`train.steps`") != std::string::npos);
  CHECK(field_of(replace(kTiny, "B = 3", "B = 3\nbogus = 1")).find("`pipeline.bogus`") != std::string::npos);
  CHECK(field_of(replace(kTiny, "epsilon = \"median\"", "epsilon = \"mean\"")).find("`pipeline.epsilon`") !=
        std::string::npos);
  CHECK(field_of(replace(kTiny, "epsilon = \"median\"", "epsilon = inf")) == "no error");
  CHECK_THROWS_AS(toml_to_json("[task\nfamily=", "broken"), ConfigError);
}

TEST_CASE("config hash follows meaning, not layout") {
  const auto a = config_from_json(toml_to_json(kTiny, "a"));
  std::string reordered = kTiny;
  reordered = replace(reordered, "n_layers = 1\nn_heads = 2\n", "n_heads = 2\nn_layers = 1\n");
  const auto b = config_from_json(toml_to_json(reordered, "b"));
  CHECK(canonical_hash(a.to_json()) == canonical_hash(b.to_json()));
  const auto c = config_from_json(toml_to_json(replace(kTiny, "trials = 4", "trials = 5"), "c"));
  CHECK(canonical_hash(a.to_json()) != canonical_hash(c.to_json()));
}

TEST_CASE("train, pipeline, eval, report end to end") {
  Sandbox box;
  const auto config = box.write("tiny.toml", kTiny);
  const auto out = box.root / "out";

  CommandOptions t = opts("train", config, out);
  std::ostringstream sink;
  const auto trained = execute(t, sink);
  for (const char* f : {"manifest.json", "checkpoint.bin", "train_loss.csv"}) CHECK(fs::exists(trained.dir / f));
  const auto ckpt = trained.dir / "checkpoint.bin";
  const std::string first_bytes = slurp(ckpt);
  fs::remove_all(trained.dir);
  CHECK(execute(t, sink).run_id == trained.run_id);
  CHECK(slurp(ckpt) == first_bytes);

  CommandOptions p = opts("pipeline", config, out);
  p.checkpoint = ckpt;
  const auto piped = execute(p, sink);
  const auto doc = nlohmann::json::parse(slurp(piped.dir / "pipeline.json"));
  CHECK(doc.at("record").at("selected").size() == 3);

  CommandOptions eb = opts("eval", config, out);
  eb.checkpoint = ckpt;
  const auto base = execute(eb, sink);
  CommandOptions ea = eb;
  ea.pipeline_manifest = piped.dir / "pipeline.json";
  const auto autocot = execute(ea, sink);
  CHECK(base.run_id != autocot.run_id);
  CHECK(slurp(base.dir / "metrics.csv").rfind("method,context_len,trials,repeats,mse_mean,mse_stderr,auc,seed,config_hash\n", 0) == 0);
  const std::string svg = slurp(base.dir / "plot.svg");
  fs::remove_all(base.dir);
  execute(eb, sink);
  CHECK(slurp(base.dir / "plot.svg") == svg);

  CommandOptions r;
  r.command = "report";
  r.out = out;
  r.quiet = true;
  r.baseline = base.dir / "metrics.csv";
  r.autocot_csv = autocot.dir / "metrics.csv";
  const auto rep = execute(r, sink);
  const auto table = parse_comparison_markdown(slurp(rep.dir / "report.md"));
  CHECK(table.rows.size() == 2);
  CHECK(table.rows[0].pairs == 4);

  r.autocot_csv = base.dir / "metrics.csv";
  const auto same = parse_comparison_markdown(slurp(execute(r, sink).dir / "report.md"));
  for (const auto& row : same.rows) CHECK(row.delta == 0.0);

  for (const auto& run : {trained, piped, base, autocot}) {
    std::ostringstream log;
    CHECK(replay(run.dir / "manifest.json", log).empty());
  }
}

TEST_CASE("exit codes") {
  Sandbox box;
  const auto out = box.root / "out";
  std::string err;

  const auto missing = box.write("missing.toml", replace(kTiny, "n_layers = 1\n", ""));
  CHECK(run(opts("train", missing, out), &err) == kExitConfig);
  CHECK(err.find("model.n_layers") != std::string::npos);

  const auto nan = box.write("nan.toml", replace(kTiny, "log_every = 3", "log_every = 3\nlearning_rate = 1e300"));
  CHECK(run(opts("train", nan, out), &err) == kExitNumericAbort);

  const auto config = box.write("tiny.toml", kTiny);
  std::ostringstream sink;
  const auto trained = execute(opts("train", config, out), sink);

  const auto tight = box.write("tight.toml", replace(kTiny, "epsilon = \"median\"", "epsilon = 1e-12"));
  CommandOptions p = opts("pipeline", tight, out);
  p.checkpoint = trained.dir / "checkpoint.bin";
  CHECK(run(p, &err) == kExitEmptyPrune);
  CHECK(err.find("min observed loss") != std::string::npos);

  const auto loose = box.write("loose.toml", replace(kTiny, "epsilon = \"median\"", "epsilon = \"inf\""));
  p.config = loose;
  const auto piped = execute(p, sink);
  const auto doc = nlohmann::json::parse(slurp(piped.dir / "pipeline.json"));
  CHECK(doc.at("record").at("retained").size() == 6);

  CommandOptions e = opts("eval", config, out);
  e.checkpoint = trained.dir / "checkpoint.bin";
  const auto full = execute(e, sink);
  const auto short_cfg = box.write("short.toml", replace(kTiny, "context_lengths = [1, 3]", "context_lengths = [1]"));
  e.config = short_cfg;
  const auto partial = execute(e, sink);
  CommandOptions r;
  r.command = "report";
  r.out = out;
  r.baseline = full.dir / "metrics.csv";
  r.autocot_csv = partial.dir / "metrics.csv";
  CHECK(run(r, &err) == kExitReportMismatch);

  CommandOptions bad = opts("train", box.root / "nope.toml", out);
  CHECK(run(bad, &err) == kExitConfig);
}

TEST_CASE("text-eval with the mock endpoint records and replays") {
  Sandbox box;
  std::string data;
  for (int i = 0; i < 14; ++i) data += "line " + std::to_string(i) + " of the sample ends with\tword" + std::to_string(i % 3) + "\n";
  box.write("data.tsv", data);
  const auto config = box.write("text.toml", R"(seed = 2
[text]
dataset = "data.tsv"
context_lengths = [1, 2]
validation = 2
queries = 3
[pipeline]
K = 4
B = 2
N = 2
repeats = 2
[endpoint]
mock = true
[mock]
copy_logprob = -0.5
)");
  CommandOptions o = opts("text-eval", config, box.root / "out");
  o.record = true;
  std::ostringstream sink;
  const auto run1 = execute(o, sink);
  CHECK(fs::exists(run1.dir / "replay.ndjson"));
  CHECK(fs::exists(run1.dir / "text_metrics.csv"));
  std::ostringstream log;
  CHECK(replay(run1.dir / "manifest.json", log).empty());

  box.write("empty.tsv", "");
  const auto empty = box.write("empty.toml", replace(slurp(config), "data.tsv", "empty.tsv"));
  std::ostringstream out_text, err_text;
  CommandOptions e = opts("text-eval", empty, box.root / "out");
  e.quiet = false;
  CHECK(run_command(e, out_text, err_text) == kExitOk);
  CHECK(out_text.str().find("warning") != std::string::npos);
}
