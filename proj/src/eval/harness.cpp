#include "iclcot/eval/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace iclcot {

void EvalConfig::validate(std::size_t k_max) const {
  if (context_lengths.empty()) throw ContractError("eval config: no context lengths");
  for (std::size_t k : context_lengths) {
    if (k == 0 || k > k_max) {
      throw ContractError("eval config: context length " + std::to_string(k) +
                          " outside 1.." + std::to_string(k_max));
    }
  }
  if (repeats == 0) throw ContractError("eval config: repeats must be >= 1");
  if (trials == 0) throw ContractError("eval config: trials must be >= 1");
  if (d == 0 || hidden == 0) throw ContractError("eval config: d and hidden must be >= 1");
  if (pipeline) pipeline->validate();
}

void to_json(nlohmann::json& j, const EvalConfig& cfg) {
  j = {{"context_lengths", cfg.context_lengths},
       {"repeats", cfg.repeats},
       {"trials", cfg.trials},
       {"seed", cfg.seed},
       {"family", std::string(to_string(cfg.family))},
       {"d", cfg.d},
       {"hidden", cfg.hidden},
       {"pipeline", nullptr}};
  if (cfg.pipeline) j["pipeline"] = *cfg.pipeline;
}

void from_json(const nlohmann::json& j, EvalConfig& cfg) {
  cfg.context_lengths = j.at("context_lengths").get<std::vector<std::size_t>>();
  cfg.repeats = j.at("repeats").get<std::size_t>();
  cfg.trials = j.at("trials").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.family = parse_task_family(j.at("family").get<std::string>());
  cfg.d = j.at("d").get<std::size_t>();
  cfg.hidden = j.at("hidden").get<std::size_t>();
  cfg.pipeline.reset();
  if (j.contains("pipeline") && !j.at("pipeline").is_null()) {
    cfg.pipeline = j.at("pipeline").get<PipelineConfig>();
  }
}

std::string canonical_hash(const nlohmann::json& value) {
  // nlohmann::json objects are std::map backed, so dump() is key-sorted.
  const std::string text = value.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrialSetup trial_setup(const EvalConfig& cfg, std::size_t context_len, std::size_t trial) {
  Rng rng = eval_rng(cfg.seed, trial).split(context_len);
  TrialSetup out{fresh_eval_task(cfg.family, cfg.d, cfg.hidden, rng), {}, rng.split(1)};
  out.query.query_x.resize(cfg.d);
  for (double& v : out.query.query_x) v = rng.normal();
  out.query.query_y_truth = task_eval(out.task, out.query.query_x);
  return out;
}

double baseline_prediction(const QueryPredictor& model, const Task& task,
                           std::span<const double> query_x, std::size_t k, std::size_t repeats,
                           Rng& rng) {
  if (repeats == 0) throw ContractError("baseline: repeats must be >= 1");
  std::vector<Prompt> prompts;
  prompts.reserve(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    Prompt p = sample_prompt(task, k, rng);
    p.query_x.assign(query_x.begin(), query_x.end());
    p.query_y_truth = task_eval(task, query_x);
    prompts.push_back(std::move(p));
  }
  std::vector<QueryRequest> requests;
  for (const auto& p : prompts) requests.push_back({&p, {}});
  const auto preds = model.predict_queries(requests);
  double total = 0.0;
  for (double v : preds) total += v;
  return total / static_cast<double>(repeats);
}

double autocot_prediction(const QueryPredictor& model, const Task& task,
                          std::span<const double> query_x, std::size_t k,
                          const PipelineConfig& cfg, Rng& rng, PipelineRecord* record) {
  OracleChainGenerator generator;
  Rng pool_rng = rng.split(static_cast<std::uint64_t>(Stream::kPool));
  Rng policy_rng = rng.split(static_cast<std::uint64_t>(Stream::kPolicy));
  Rng infer_rng = rng.split(static_cast<std::uint64_t>(Stream::kInference));
  DemoPool pool = augment_from_task(task, cfg.pool_size, k, generator, pool_rng);
  // The truth stub needs stored truths on every prompt it sees.
  for (auto& demo : pool.demos) demo.prompt.query_y_truth = task_eval(task, demo.prompt.query_x);
  auto outcome = run_pipeline(std::move(pool), model, cfg, policy_rng);
  const double pred = inference(model, outcome.selected, outcome.selected_weights, query_x,
                                cfg.repeats, cfg.use_chains, infer_rng,
                                task_eval(task, query_x));
  if (record) *record = std::move(outcome.record);
  return pred;
}

EvalReport run_eval(const QueryPredictor& model, const EvalConfig& cfg,
                    const std::string& checkpoint_id, const ProgressFn& progress) {
  EvalReport report;
  report.seed = cfg.seed;
  report.config_hash = canonical_hash(nlohmann::json(cfg));
  report.checkpoint_id = checkpoint_id;
  const std::string method = cfg.method();

  std::vector<std::size_t> lengths = cfg.context_lengths;
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());

  for (std::size_t k : lengths) {
    std::vector<TrialRecord> records;
    try {
      for (std::size_t t = 0; t < cfg.trials; ++t) {
        TrialSetup setup = trial_setup(cfg, k, t);
        const double truth = *setup.query.query_y_truth;
        const double pred =
            cfg.pipeline
                ? autocot_prediction(model, setup.task, setup.query.query_x, k, *cfg.pipeline,
                                     setup.method_rng)
                : baseline_prediction(model, setup.task, setup.query.query_x, k, cfg.repeats,
                                      setup.method_rng);
        if (!std::isfinite(pred)) {
          throw NumericAbort(0, 0.0, "non-finite prediction at context length " +
                                         std::to_string(k) + ", trial " + std::to_string(t));
        }
        records.push_back({method, k, t, pred, truth, mse_normalized(pred, truth, cfg.d)});
        if (progress) progress(k, t);
      }
    } catch (const std::exception& e) {
      report.partial = true;
      throw EvalInterrupted(std::move(report),
                            "evaluation stopped at context length " + std::to_string(k) + ": " +
                                e.what(),
                            std::current_exception());
    }

    std::vector<double> losses, preds, truths;
    for (const auto& r : records) {
      losses.push_back(r.loss);
      preds.push_back(r.pred);
      truths.push_back(r.truth);
    }
    EvalRow row;
    row.method = method;
    row.context_len = k;
    row.trials = records.size();
    row.repeats = cfg.effective_repeats();
    const auto ms = mean_stderr(losses);
    row.mse_mean = ms.mean;
    row.mse_stderr = ms.stderr_;
    try {
      row.auc = auc_binarized(preds, truths);
    } catch (const UndefinedMetric&) {
      row.auc.reset();
    }
    row.seed = cfg.seed;
    row.config_hash = report.config_hash;
    report.rows.push_back(row);
    report.trials.insert(report.trials.end(), records.begin(), records.end());
  }
  return report;
}

// ---- files -----------------------------------------------------------------

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    throw ContractError("line " + std::to_string(line) + ": not a number: '" + s + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& s, std::size_t line) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ContractError("line " + std::to_string(line) + ": not a count: '" + s + "'");
  }
  return v;
}

std::vector<std::vector<std::string>> read_table(const std::string& text, const char* header,
                                                 std::size_t columns) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ContractError("csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) {
    throw ContractError("csv: header '" + line + "' does not match '" + header + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != columns) {
      throw ContractError("csv line " + std::to_string(n) + ": expected " + std::to_string(columns) +
                          " fields, got " + std::to_string(cells.size()));
    }
    cells.push_back(std::to_string(n));
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::string metrics_csv(const EvalReport& report) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.method << ',' << r.context_len << ',' << r.trials << ',' << r.repeats << ','
        << format_number(r.mse_mean) << ',' << format_number(r.mse_stderr) << ','
        << (r.auc ? format_number(*r.auc) : "null") << ',' << r.seed << ',' << r.config_hash
        << '\n';
  }
  return out.str();
}

std::string trials_csv(const EvalReport& report) {
  std::ostringstream out;
  out << kTrialsHeader << '\n';
  for (const auto& t : report.trials) {
    out << t.method << ',' << t.context_len << ',' << t.trial << ',' << format_number(t.pred) << ','
        << format_number(t.truth) << ',' << format_number(t.loss) << '\n';
  }
  return out.str();
}

std::vector<EvalRow> parse_metrics_csv(const std::string& text) {
  std::vector<EvalRow> rows;
  for (const auto& c : read_table(text, kMetricsHeader, 9)) {
    const std::size_t line = std::stoul(c[9]);
    EvalRow r;
    r.method = c[0];
    r.context_len = parse_uint(c[1], line);
    r.trials = parse_uint(c[2], line);
    r.repeats = parse_uint(c[3], line);
    r.mse_mean = parse_double(c[4], line);
    r.mse_stderr = parse_double(c[5], line);
    if (c[6] != "null") r.auc = parse_double(c[6], line);
    r.seed = parse_uint(c[7], line);
    r.config_hash = c[8];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<TrialRecord> parse_trials_csv(const std::string& text) {
  std::vector<TrialRecord> rows;
  for (const auto& c : read_table(text, kTrialsHeader, 6)) {
    const std::size_t line = std::stoul(c[6]);
    rows.push_back({c[0], parse_uint(c[1], line), parse_uint(c[2], line), parse_double(c[3], line),
                    parse_double(c[4], line), parse_double(c[5], line)});
  }
  return rows;
}

std::string plot_svg(const std::vector<EvalRow>& rows, const std::string& title) {
  constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 130, kTop = 40, kBottom = 50;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double xmin = INFINITY, xmax = -INFINITY, ymax = 0.0;
  for (const auto& r : rows) {
    const double x = static_cast<double>(r.context_len);
    series[r.method].emplace_back(x, r.mse_mean);
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymax = std::max(ymax, r.mse_mean);
  }
  if (rows.empty()) {
    xmin = 0;
    xmax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax <= 0.0) ymax = 1.0;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return kTop + ph - y / ymax * ph; };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << fmt(kW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\""
      << kTop + ph << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
      << "\" stroke=\"black\"/>\n";
  std::set<std::size_t> ticks;
  for (const auto& r : rows) ticks.insert(r.context_len);
  for (std::size_t t : ticks) {
    const double x = px(static_cast<double>(t));
    out << "<line x1=\"" << fmt(x) << "\" y1=\"" << kTop + ph << "\" x2=\"" << fmt(x) << "\" y2=\""
        << kTop + ph + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << fmt(x) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">" << t
        << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double y = ymax * i / 4.0;
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(py(y) + 4) << "\" text-anchor=\"end\">"
        << fmt(y) << "</text>\n";
  }
  out << "<text x=\"" << fmt(kLeft + pw / 2) << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\">context length</text>\n";
  out << "<text x=\"18\" y=\"" << fmt(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << fmt(kTop + ph / 2) << ")\">normalized MSE</text>\n";
  std::size_t c = 0;
  for (const auto& [method, pts] : series) {
    auto sorted = pts;
    std::sort(sorted.begin(), sorted.end());
    const char* color = kColors[c % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      out << (i ? " " : "") << fmt(px(sorted[i].first)) << ',' << fmt(py(sorted[i].second));
    }
    out << "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(c);
    out << "<line x1=\"" << kLeft + pw + 15 << "\" y1=\"" << fmt(ly) << "\" x2=\"" << kLeft + pw + 35
        << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << kLeft + pw + 40 << "\" y=\"" << fmt(ly + 4) << "\">" << method << "</text>\n";
    ++c;
  }
  out << "</svg>\n";
  return out.str();
}

// ---- comparison -------------------------------------------------------------

ComparisonReport compare(const std::vector<EvalRow>& baseline, const std::vector<EvalRow>& autocot,
                         const std::vector<TrialRecord>& baseline_trials,
                         const std::vector<TrialRecord>& autocot_trials) {
  std::map<std::size_t, const EvalRow*> b, a;
  for (const auto& r : baseline) b[r.context_len] = &r;
  for (const auto& r : autocot) a[r.context_len] = &r;
  std::set<std::size_t> bl, al;
  for (const auto& [k, _] : b) bl.insert(k);
  for (const auto& [k, _] : a) al.insert(k);
  if (bl != al) throw ContractError("compare: the two reports cover different context lengths");

  std::map<std::pair<std::size_t, std::size_t>, double> base_loss;
  for (const auto& t : baseline_trials) base_loss[{t.context_len, t.trial}] = t.loss;
  std::map<std::size_t, std::vector<double>> diffs;
  for (const auto& t : autocot_trials) {
    const auto it = base_loss.find({t.context_len, t.trial});
    if (it != base_loss.end()) diffs[t.context_len].push_back(t.loss - it->second);
  }
  const bool paired = !baseline_trials.empty() && !autocot_trials.empty();

  ComparisonReport out;
  for (std::size_t k : bl) {
    ComparisonRow row;
    row.context_len = k;
    row.baseline_mse = b[k]->mse_mean;
    row.autocot_mse = a[k]->mse_mean;
    row.delta = row.autocot_mse - row.baseline_mse;
    row.baseline_auc = b[k]->auc;
    row.autocot_auc = a[k]->auc;
    if (paired) {
      const auto& d = diffs[k];
      row.pairs = d.size();
      row.autocot_wins = static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [](double v) { return v < 0; }));
      row.sign_p = sign_test_p(d);
    }
    out.rows.push_back(row);
  }
  return out;
}

namespace {

constexpr const char* kComparisonHeader =
    "| context_len | baseline_mse | autocot_mse | delta | baseline_auc | autocot_auc | pairs | autocot_wins | sign_p |";

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : "null"; }

}  // namespace

std::string comparison_markdown(const ComparisonReport& report) {
  std::ostringstream out;
  out << "# Baseline vs Auto-CoT\n\n";
  out << "delta = autocot_mse - baseline_mse; a negative delta means Auto-CoT has the lower error.\n";
  out << "sign_p is the two-sided exact sign test over paired per-trial losses (null without them).\n\n";
  out << kComparisonHeader << '\n';
  out << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : report.rows) {
    out << "| " << r.context_len << " | " << format_number(r.baseline_mse) << " | "
        << format_number(r.autocot_mse) << " | " << format_number(r.delta) << " | "
        << opt_number(r.baseline_auc) << " | " << opt_number(r.autocot_auc) << " | " << r.pairs
        << " | " << r.autocot_wins << " | " << opt_number(r.sign_p) << " |\n";
  }
  return out.str();
}

ComparisonReport parse_comparison_markdown(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  bool in_table = false;
  ComparisonReport out;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line == kComparisonHeader) {
      in_table = true;
      continue;
    }
    if (!in_table || line.rfind("|---", 0) == 0) continue;
    if (line.empty() || line.front() != '|') break;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream cs(line.substr(1));
    while (std::getline(cs, cell, '|')) {
      const auto b = cell.find_first_not_of(' ');
      const auto e = cell.find_last_not_of(' ');
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (cells.size() != 9) {
      throw ContractError("comparison table line " + std::to_string(n) + ": expected 9 cells");
    }
    auto opt = [&](const std::string& s) -> std::optional<double> {
      if (s == "null") return std::nullopt;
      return parse_double(s, n);
    };
    ComparisonRow r;
    r.context_len = parse_uint(cells[0], n);
    r.baseline_mse = parse_double(cells[1], n);
    r.autocot_mse = parse_double(cells[2], n);
    r.delta = parse_double(cells[3], n);
    r.baseline_auc = opt(cells[4]);
    r.autocot_auc = opt(cells[5]);
    r.pairs = parse_uint(cells[6], n);
    r.autocot_wins = parse_uint(cells[7], n);
    r.sign_p = opt(cells[8]);
    out.rows.push_back(r);
  }
  if (!in_table) throw ContractError("no comparison table found");
  return out;
}

}  // namespace iclcot
