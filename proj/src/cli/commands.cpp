#include "iclcot/cli/commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "iclcot/model/checkpoint.hpp"

#ifndef ICLCOT_VERSION
#define ICLCOT_VERSION "unknown"
#endif

namespace iclcot::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

json input_entry(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("input not found: " + path.string());
  return {{"path", fs::absolute(path).lexically_normal().string()}, {"digest", file_digest(path)}};
}

json chains_json(const std::vector<ChainTrace>& chains) {
  json out = json::array();
  for (const auto& c : chains) {
    json steps = json::array();
    for (const auto& s : c.steps) steps.push_back({{"label", s.label}, {"values", s.values}});
    out.push_back({{"steps", steps}, {"final", c.final}});
  }
  return out;
}

// What one command body produced: primary artifacts are compared on replay.
struct Produced {
  std::vector<std::string> primary;
  std::vector<std::string> extra;
  bool partial = false;
};

class RunWriter {
 public:
  RunWriter(std::string command, const RunConfig& cfg, json inputs, json options, const fs::path& out_root)
      : command_(std::move(command)), inputs_(std::move(inputs)), options_(std::move(options)) {
    config_ = cfg.to_json();
    json digests = json::object();
    for (const auto& [name, entry] : inputs_.items()) digests[name] = entry.at("digest");
    run_id_ = canonical_hash(
        {{"command", command_}, {"config", config_}, {"inputs", digests}, {"options", options_}});
    dir_ = out_root / "runs" / run_id_;
    fs::create_directories(dir_);
    started_ = utc_now();
  }

  const fs::path& dir() const { return dir_; }
  const std::string& run_id() const { return run_id_; }

  RunOutcome finish(const Produced& produced) const {
    std::vector<std::string> artifacts = produced.primary;
    artifacts.insert(artifacts.end(), produced.extra.begin(), produced.extra.end());
    json manifest = {{"version", version_string()},
                     {"command", command_},
                     {"run_id", run_id_},
                     {"seed", config_.at("seed")},
                     {"config", config_},
                     {"inputs", inputs_},
                     {"options", options_},
                     {"artifacts", artifacts},
                     {"primary", produced.primary},
                     {"partial", produced.partial},
                     {"started_at", started_},
                     {"finished_at", utc_now()}};
    write_file(dir_ / "manifest.json", manifest.dump(2) + "\n");
    return {run_id_, dir_, manifest};
  }

 private:
  std::string command_;
  json config_;
  json inputs_;
  json options_;
  std::string run_id_;
  fs::path dir_;
  std::string started_;
};

Transformer<float> load_model(const RunConfig& cfg, const fs::path& path) {
  return cfg.model ? load_checkpoint(path, *cfg.model) : load_checkpoint(path);
}

Produced do_train(const RunConfig& cfg, const fs::path& dir, const CommandOptions& opts, std::ostream& out) {
  const TrainConfig tcfg = cfg.train_config();
  const auto result = train(tcfg, *cfg.model, [&](const LossPoint& p) {
    if (!opts.quiet) out << "step " << p.step << " loss " << format_number(p.loss) << "\n";
  });
  save_checkpoint(result.model, dir / "checkpoint.bin");
  std::ostringstream csv;
  csv << "step,loss\n";
  for (const auto& p : result.curve) csv << p.step << ',' << format_number(p.loss) << '\n';
  write_file(dir / "train_loss.csv", csv.str());
  return {{"checkpoint.bin", "train_loss.csv"}, {}, false};
}

Produced do_pipeline(const RunConfig& cfg, const fs::path& dir, const CommandOptions& opts, std::ostream& out) {
  cfg.require({"task", "pipeline"});
  const auto model = load_model(cfg, opts.checkpoint);
  const auto& task = *cfg.task;
  const auto& pcfg = *cfg.pipeline;
  OracleChainGenerator generator;
  Rng pool_rng(cfg.seed, Stream::kPool);
  DemoPool pool = augment(task.family, pcfg.config.pool_size, pcfg.context_len, task.d, task.hidden,
                          generator, pool_rng);
  Rng policy_rng(cfg.seed, Stream::kPolicy);
  TransformerPredictor predictor(model);
  const auto outcome = run_pipeline(std::move(pool), predictor, pcfg.config, policy_rng);

  json selected = json::array();
  for (std::size_t i = 0; i < outcome.selected.size(); ++i) {
    const auto& demo = outcome.selected[i];
    selected.push_back({{"index", outcome.record.selected[i]},
                        {"weight", outcome.selected_weights[i]},
                        {"prompt", demo.prompt},
                        {"chains", chains_json(demo.chains)}});
  }
  json doc = {{"config", pcfg.config},
              {"context_len", pcfg.context_len},
              {"seed", cfg.seed},
              {"record", outcome.record},
              {"selected", selected}};
  write_file(dir / "pipeline.json", doc.dump(2) + "\n");
  if (!opts.quiet) {
    out << "retained " << outcome.record.retained.size() << " of " << pcfg.config.pool_size
        << " demos (epsilon " << format_number(outcome.record.epsilon) << "), selected "
        << outcome.selected.size() << "\n";
  }
  return {{"pipeline.json"}, {}, false};
}

Produced do_eval(const RunConfig& cfg, const fs::path& dir, const CommandOptions& opts, std::ostream& out) {
  const bool autocot = opts.autocot || !opts.pipeline_manifest.empty();
  EvalConfig ecfg = cfg.eval_config(autocot && opts.pipeline_manifest.empty());
  if (!opts.pipeline_manifest.empty()) {
    const json doc = json::parse(read_file(opts.pipeline_manifest));
    ecfg.pipeline = doc.at("config").get<PipelineConfig>();
  }
  const auto model = load_model(cfg, opts.checkpoint);
  ecfg.validate(model.config().max_tokens);
  TransformerPredictor predictor(model);
  const std::string checkpoint_id = file_digest(opts.checkpoint);

  Produced produced{{"metrics.csv", "trials.csv", "plot.svg"}, {}, false};
  auto write_report = [&](const EvalReport& report) {
    write_file(dir / "metrics.csv", metrics_csv(report));
    write_file(dir / "trials.csv", trials_csv(report));
    write_file(dir / "plot.svg", plot_svg(report.rows));
  };
  std::size_t last_len = 0;
  try {
    const auto report = run_eval(predictor, ecfg, checkpoint_id, [&](std::size_t len, std::size_t) {
      if (!opts.quiet && len != last_len) {
        out << "context length " << len << "\n";
        last_len = len;
      }
    });
    write_report(report);
  } catch (const EvalInterrupted& e) {
    write_report(e.partial());
    throw;
  }
  return produced;
}

Produced do_report(const fs::path& dir, const CommandOptions& opts, std::ostream& out) {
  const auto base_rows = parse_metrics_csv(read_file(opts.baseline));
  const auto auto_rows = parse_metrics_csv(read_file(opts.autocot_csv));
  std::vector<TrialRecord> base_trials, auto_trials;
  const fs::path bt = opts.baseline.parent_path() / "trials.csv";
  const fs::path at = opts.autocot_csv.parent_path() / "trials.csv";
  if (fs::exists(bt) && fs::exists(at)) {
    base_trials = parse_trials_csv(read_file(bt));
    auto_trials = parse_trials_csv(read_file(at));
  }
  ComparisonReport report;
  try {
    report = compare(base_rows, auto_rows, base_trials, auto_trials);
  } catch (const ContractError& e) {
    throw ReportMismatch(e.what());
  }
  const std::string md = comparison_markdown(report);
  write_file(dir / "report.md", md);
  out << md;
  return {{"report.md"}, {}, false};
}

Produced do_text_eval(const RunConfig& cfg, const fs::path& dir, const CommandOptions& opts, std::ostream& out) {
  cfg.require({"text", "endpoint"});
  const auto records = llm::load_text_dataset(cfg.text->dataset);
  llm::EndpointConfig endpoint = cfg.endpoint->endpoint;
  endpoint.load_api_key();

  std::unique_ptr<llm::MockServer> server;
  std::shared_ptr<llm::Transport> transport;
  if (!opts.replay_log.empty()) {
    transport = std::make_shared<llm::ReplayTransport>(opts.replay_log);
  } else {
    if (cfg.endpoint->use_mock) {
      server = std::make_unique<llm::MockServer>(cfg.endpoint->mock);
      endpoint.base_url = server->base_url();
    }
    transport = std::make_shared<llm::HttpTransport>(endpoint.base_url, endpoint.timeout_seconds);
  }
  Produced produced{{"text_metrics.csv", "text_report.md"}, {}, false};
  if (opts.record) {
    fs::remove(dir / "replay.ndjson");
    transport = std::make_shared<llm::RecordingTransport>(transport, dir / "replay.ndjson");
    produced.extra.push_back("replay.ndjson");
  }
  llm::Client client(endpoint, transport);
  const auto report = llm::text_pipeline_eval(client, records, cfg.text->eval);
  for (const auto& w : report.warnings) out << "warning: " << w << "\n";
  write_file(dir / "text_metrics.csv", llm::text_report_csv(report));
  const std::string md = llm::text_report_markdown(report);
  write_file(dir / "text_report.md", md);
  if (!opts.quiet) out << md;
  if (!opts.quiet) out << "network calls: " << transport->network_calls() << "\n";
  return produced;
}

}  // namespace

std::string version_string() { return ICLCOT_VERSION; }

std::string file_digest(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

RunOutcome execute_with_config(const std::string& command, const RunConfig& cfg,
                               const CommandOptions& opts, std::ostream& out) {
  json inputs = json::object();
  json options = json::object();
  if (command == "pipeline" || command == "eval") {
    if (opts.checkpoint.empty()) throw ConfigError("--checkpoint", command + " needs --checkpoint");
    inputs["checkpoint"] = input_entry(opts.checkpoint);
  }
  if (command == "eval") {
    if (!opts.pipeline_manifest.empty()) inputs["pipeline"] = input_entry(opts.pipeline_manifest);
    options["autocot"] = opts.autocot || !opts.pipeline_manifest.empty();
  }
  if (command == "report") {
    if (opts.baseline.empty() || opts.autocot_csv.empty()) {
      throw ConfigError("--baseline", "report needs --baseline and --autocot CSV paths");
    }
    inputs["baseline"] = input_entry(opts.baseline);
    inputs["autocot"] = input_entry(opts.autocot_csv);
  }
  if (command == "text-eval") {
    cfg.require({"text"});
    inputs["dataset"] = input_entry(cfg.text->dataset);
    options["record"] = opts.record;
  }

  RunWriter writer(command, cfg, inputs, options, opts.out);
  if (!opts.quiet) out << "run " << writer.run_id() << " -> " << writer.dir().string() << "\n";
  Produced produced;
  if (command == "train") {
    produced = do_train(cfg, writer.dir(), opts, out);
  } else if (command == "pipeline") {
    produced = do_pipeline(cfg, writer.dir(), opts, out);
  } else if (command == "eval") {
    try {
      produced = do_eval(cfg, writer.dir(), opts, out);
    } catch (const EvalInterrupted&) {
      writer.finish({{"metrics.csv", "trials.csv", "plot.svg"}, {}, true});
      throw;
    }
  } else if (command == "report") {
    produced = do_report(writer.dir(), opts, out);
  } else if (command == "text-eval") {
    produced = do_text_eval(cfg, writer.dir(), opts, out);
  } else {
    throw ConfigError("command", "unknown command `" + command + "`");
  }
  return writer.finish(produced);
}

RunOutcome execute(const CommandOptions& opts, std::ostream& out) {
  RunConfig cfg;
  if (opts.command != "report") {
    if (opts.config.empty()) throw ConfigError("--config", opts.command + " needs --config");
    cfg = load_config(opts.config);
    if (cfg.text && fs::path(cfg.text->dataset).is_relative()) {
      cfg.text->dataset = (opts.config.parent_path() / cfg.text->dataset).lexically_normal().string();
    }
  }
  if (opts.seed) {
    cfg.seed = *opts.seed;
    if (cfg.text) cfg.text->eval.seed = *opts.seed;
  }
  return execute_with_config(opts.command, cfg, opts, out);
}

std::vector<std::string> replay(const fs::path& manifest_path, std::ostream& out) {
  const json manifest = json::parse(read_file(manifest_path));
  const std::string command = manifest.at("command").get<std::string>();
  RunConfig cfg = config_from_json(manifest.at("config"));
  if (cfg.text) cfg.text->eval.seed = cfg.seed;
  const fs::path run_dir = manifest_path.parent_path();

  CommandOptions opts;
  opts.command = command;
  opts.quiet = true;
  const json& inputs = manifest.at("inputs");
  for (const auto& [name, entry] : inputs.items()) {
    const fs::path path = entry.at("path").get<std::string>();
    if (!fs::exists(path) || file_digest(path) != entry.at("digest").get<std::string>()) {
      throw InputError("input `" + name + "` at " + path.string() + " is missing or changed since the run");
    }
    if (name == "checkpoint") opts.checkpoint = path;
    if (name == "pipeline") opts.pipeline_manifest = path;
    if (name == "baseline") opts.baseline = path;
    if (name == "autocot") opts.autocot_csv = path;
  }
  const json& options = manifest.at("options");
  if (options.contains("autocot")) opts.autocot = options.at("autocot").get<bool>();
  if (command == "text-eval") {
    if (options.value("record", false)) {
      opts.replay_log = run_dir / "replay.ndjson";
      opts.record = true;  // keeps the run id; the scratch copy is discarded
    } else if (!cfg.endpoint || !cfg.endpoint->use_mock) {
      throw InputError("text-eval run was not recorded; replay needs --record traffic or the mock endpoint");
    }
  }

  const fs::path scratch = fs::temp_directory_path() /
                           ("iclcot-replay-" + manifest.at("run_id").get<std::string>() + "-" +
                            std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  opts.out = scratch;
  std::vector<std::string> differing;
  try {
    const auto rerun = execute_with_config(command, cfg, opts, out);
    for (const auto& name : manifest.at("primary")) {
      const std::string file = name.get<std::string>();
      const fs::path a = run_dir / file;
      const fs::path b = rerun.dir / file;
      if (!fs::exists(a) || !fs::exists(b) || read_file(a) != read_file(b)) differing.push_back(file);
    }
  } catch (...) {
    fs::remove_all(scratch);
    throw;
  }
  fs::remove_all(scratch);
  return differing;
}

int run_command(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    if (opts.command == "replay") {
      if (opts.manifest.empty()) throw ConfigError("--manifest", "replay needs --manifest");
      const auto differing = replay(opts.manifest, out);
      if (!differing.empty()) {
        err << "replay mismatch:";
        for (const auto& f : differing) err << ' ' << f;
        err << "\n";
        return kExitFailure;
      }
      out << "replay ok: primary artifacts are byte-identical\n";
      return kExitOk;
    }
    execute(opts, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericAbort& e) {
    err << "numeric abort: " << e.what() << "\n";
    return kExitNumericAbort;
  } catch (const EmptyPrunedPool& e) {
    err << "empty pruned pool: " << e.what() << "\n"
        << "min observed loss " << format_number(e.min_loss()) << "; try epsilon >= "
        << format_number(e.min_loss()) << " or epsilon = \"median\"\n";
    return kExitEmptyPrune;
  } catch (const ReportMismatch& e) {
    err << "report mismatch: " << e.what() << "\n";
    return kExitReportMismatch;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace iclcot::cli
