#include <iostream>

#include <CLI11.hpp>

#include "iclcot/cli/commands.hpp"

int main(int argc, char** argv) {
  using iclcot::cli::CommandOptions;
  CLI::App app{"In-context learning with Auto-CoT: train, select demonstrations, evaluate"};
  app.set_version_flag("--version", iclcot::cli::version_string());
  app.require_subcommand(1);

  CommandOptions opts;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opts.config, "TOML config file");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", opts.out, "root directory for runs/<id>/")->capture_default_str();
    sub->add_flag("--quiet,-q", opts.quiet, "suppress progress output");
  };

  auto* train = app.add_subcommand("train", "train a transformer on synthetic ICL prompts");
  common(train, true);

  auto* pipeline = app.add_subcommand("pipeline", "augment, prune and select demonstrations");
  common(pipeline, true);
  pipeline->add_option("--checkpoint", opts.checkpoint, "checkpoint.bin from train")->required();

  auto* eval = app.add_subcommand("eval", "sweep context lengths for baseline or Auto-CoT");
  common(eval, true);
  eval->add_option("--checkpoint", opts.checkpoint, "checkpoint.bin from train")->required();
  eval->add_option("--pipeline", opts.pipeline_manifest, "pipeline.json; implies --autocot");
  eval->add_flag("--autocot", opts.autocot, "use the [pipeline] section of the config");

  auto* report = app.add_subcommand("report", "pair baseline and Auto-CoT metrics.csv files");
  common(report, false);
  report->add_option("--baseline", opts.baseline, "baseline metrics.csv")->required()->check(CLI::ExistingFile);
  report->add_option("--autocot", opts.autocot_csv, "Auto-CoT metrics.csv")->required()->check(CLI::ExistingFile);

  auto* text = app.add_subcommand("text-eval", "text scenario against a completions endpoint");
  common(text, true);
  text->add_flag("--record", opts.record, "write all traffic to replay.ndjson");

  auto* replay = app.add_subcommand("replay", "re-run a manifest and compare primary artifacts");
  replay->add_option("--manifest", opts.manifest, "runs/<id>/manifest.json")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : iclcot::cli::kExitConfig;
  }
  for (auto* sub : app.get_subcommands()) opts.command = sub->get_name();
  auto* chosen = app.get_subcommand(opts.command);
  if (auto* flag = chosen->get_option_no_throw("--seed"); flag && flag->count() > 0) opts.seed = seed;
  return iclcot::cli::run_command(opts, std::cout, std::cerr);
}
