#include "iclcot/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

namespace iclcot::cli {

namespace {

using nlohmann::json;

json node_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = node_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(node_to_json(v));
    return out;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) {
    const double v = f->get();
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  }
  if (const auto* b = node.as_boolean()) return b->get();
  const auto where = node.source().begin;
  throw ConfigError("", "unsupported TOML value (date/time) at line " + std::to_string(where.line));
}

// Typed access to one section with dotted-path diagnostics.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    node_ = &root.at(name_);
    if (!node_->is_object()) throw ConfigError(name_, "field `" + name_ + "` must be a table");
  }

  bool present() const { return node_ != nullptr; }

  std::string path(const std::string& key) const { return name_ + "." + key; }

  bool has(const std::string& key) const { return node_ && node_->contains(key); }

  void no_unknown(std::initializer_list<const char*> keys) const {
    if (!node_) return;
    std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, _] : node_->items()) {
      if (!known.count(k)) throw ConfigError(path(k), "unknown field `" + path(k) + "`");
    }
  }

  const json& raw(const std::string& key) const {
    if (!has(key)) throw ConfigError(path(key), "missing required field `" + path(key) + "`");
    return node_->at(key);
  }

  std::size_t count(const std::string& key, bool allow_zero = false) const {
    const json& v = raw(key);
    if (!v.is_number_integer() || v.get<long long>() < (allow_zero ? 0 : 1)) {
      throw ConfigError(path(key), "field `" + path(key) + "` must be a " +
                                       (allow_zero ? "non-negative" : "positive") + " integer");
    }
    return v.get<std::size_t>();
  }
  std::size_t count_or(const std::string& key, std::size_t fallback, bool allow_zero = false) const {
    return has(key) ? count(key, allow_zero) : fallback;
  }

  double number(const std::string& key) const {
    const json& v = raw(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string() && v.get<std::string>() == "inf") return INFINITY;
    throw ConfigError(path(key), "field `" + path(key) + "` must be a number");
  }
  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::string text(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(path(key), "field `" + path(key) + "` must be a string");
    return v.get<std::string>();
  }
  std::string text_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? text(key) : fallback;
  }

  bool flag_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(path(key), "field `" + path(key) + "` must be true or false");
    return v.get<bool>();
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) {
      throw ConfigError(path(key), "field `" + path(key) + "` must be a non-empty array of positive integers");
    }
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 1) {
        throw ConfigError(path(key), "field `" + path(key) + "` must hold positive integers only");
      }
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::vector<std::string> texts_or(const std::string& key, std::vector<std::string> fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(path(key), "field `" + path(key) + "` must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(path(key), "field `" + path(key) + "` must hold strings only");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  // Wraps a semantic check so its message names this section.
  template <typename Fn>
  void check(Fn&& fn) const {
    try {
      fn();
    } catch (const ContractError& e) {
      throw ConfigError(name_, "invalid `" + name_ + "`: " + e.what());
    }
  }

  const json* node() const { return node_; }

 private:
  std::string name_;
  const json* node_ = nullptr;
};

Threshold read_threshold(const Section& s, const std::string& key, Threshold fallback) {
  if (!s.has(key)) return fallback;
  const json& v = s.raw(key);
  if (v.is_string()) {
    const auto t = v.get<std::string>();
    if (t == "median") return Threshold::median();
    if (t == "inf") return Threshold::fixed(INFINITY);
  } else if (v.is_number()) {
    const double e = v.get<double>();
    if (e > 0.0) return Threshold::fixed(e);
  }
  throw ConfigError(s.path(key), "field `" + s.path(key) + "` must be a positive number, \"median\" or \"inf\"");
}

}  // namespace

json toml_to_json(const std::string& text, const std::string& source) {
  try {
    const toml::table table = toml::parse(text, source);
    return node_to_json(table);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
        << e.description();
    throw ConfigError("", msg.str());
  }
}

RunConfig config_from_json(const json& root) {
  if (!root.is_object()) throw ConfigError("", "config root must be a table");
  static const std::set<std::string> kSections = {"seed", "task", "model", "train", "pipeline",
                                                  "eval", "text", "endpoint", "mock"};
  for (const auto& [k, _] : root.items()) {
    if (!kSections.count(k)) throw ConfigError(k, "unknown field `" + k + "`");
  }
  RunConfig cfg;
  if (root.contains("seed")) {
    const auto& s = root.at("seed");
    if (!s.is_number_integer() || s.get<long long>() < 0) {
      throw ConfigError("seed", "field `seed` must be a non-negative integer");
    }
    cfg.seed = s.get<std::uint64_t>();
  }

  if (Section s(root, "task"); s.present()) {
    s.no_unknown({"family", "d", "hidden"});
    TaskSection t;
    try {
      t.family = parse_task_family(s.text("family"));
    } catch (const ContractError&) {
      throw ConfigError(s.path("family"), "field `task.family` must be \"linear\" or \"relu2nn\"");
    }
    t.d = s.count("d");
    t.hidden = s.count_or("hidden", 100);
    cfg.task = t;
  }

  if (Section s(root, "model"); s.present()) {
    s.no_unknown({"n_layers", "n_heads", "embed_dim", "max_tokens", "d"});
    ModelConfig m;
    m.n_layers = s.count("n_layers");
    m.n_heads = s.count("n_heads");
    m.embed_dim = s.count("embed_dim");
    m.max_tokens = s.count("max_tokens");
    if (s.has("d")) {
      m.input_dim = s.count("d");
    } else if (cfg.task) {
      m.input_dim = cfg.task->d;
    } else {
      throw ConfigError("task.d", "missing required field `task.d`");
    }
    if (cfg.task && m.input_dim != cfg.task->d) {
      throw ConfigError("model.d", "field `model.d` disagrees with `task.d`");
    }
    s.check([&] { m.validate(); });
    cfg.model = m;
  }

  if (Section s(root, "train"); s.present()) {
    s.no_unknown({"steps", "batch_size", "learning_rate", "k_max", "chain_fraction", "log_every",
                  "fixed_task", "curriculum_start_dim", "curriculum_dim_every", "warmup_steps",
                  "grad_clip"});
    TrainConfig t;
    t.steps = s.count("steps");
    t.batch_size = s.count("batch_size");
    t.k_max = s.count("k_max");
    t.learning_rate = s.number_or("learning_rate", 1e-4);
    if (!(t.learning_rate > 0.0) || !std::isfinite(t.learning_rate)) {
      throw ConfigError(s.path("learning_rate"), "field `train.learning_rate` must be a positive number");
    }
    t.chain_fraction = s.number_or("chain_fraction", 0.0);
    if (t.chain_fraction < 0.0 || t.chain_fraction > 1.0) {
      throw ConfigError(s.path("chain_fraction"), "field `train.chain_fraction` must lie in [0, 1]");
    }
    t.log_every = s.count_or("log_every", 10);
    t.fixed_task = s.flag_or("fixed_task", false);
    t.curriculum_start_dim = s.count_or("curriculum_start_dim", 0, true);
    t.curriculum_dim_every = s.count_or("curriculum_dim_every", 1000);
    t.warmup_steps = s.count_or("warmup_steps", 0, true);
    t.grad_clip = s.number_or("grad_clip", 0.0);
    if (!(t.grad_clip >= 0.0) || !std::isfinite(t.grad_clip)) {
      throw ConfigError(s.path("grad_clip"), "field `train.grad_clip` must be a non-negative number");
    }
    cfg.train = t;
  }

  if (Section s(root, "pipeline"); s.present()) {
    s.no_unknown({"K", "epsilon", "B", "N", "repeats", "policy_lr", "use_chains", "context_len"});
    PipelineSection p;
    p.config.pool_size = s.count_or("K", 32);
    p.config.epsilon = read_threshold(s, "epsilon", Threshold::median());
    p.config.batch = s.count_or("B", 8);
    p.config.epochs = s.count_or("N", 50, true);
    p.config.repeats = s.count_or("repeats", 64);
    p.config.policy_lr = s.number_or("policy_lr", 0.1);
    p.config.use_chains = s.flag_or("use_chains", true);
    p.context_len = s.count_or("context_len", 8);
    s.check([&] { p.config.validate(); });
    cfg.pipeline = p;
  }

  if (Section s(root, "eval"); s.present()) {
    s.no_unknown({"context_lengths", "trials", "repeats"});
    EvalSection e;
    e.context_lengths = s.counts("context_lengths");
    e.trials = s.count_or("trials", 32);
    e.repeats = s.count_or("repeats", 8);
    cfg.eval = e;
  }

  if (Section s(root, "text"); s.present()) {
    s.no_unknown({"dataset", "context_lengths", "validation", "queries", "chain_max_tokens", "chain_stop"});
    TextSection t;
    t.dataset = s.text("dataset");
    t.eval.context_lengths = s.has("context_lengths") ? s.counts("context_lengths")
                                                      : std::vector<std::size_t>{1, 3, 5};
    t.eval.validation = s.count_or("validation", 4);
    t.eval.queries = s.count_or("queries", 8);
    t.eval.chain_params.max_tokens = s.count_or("chain_max_tokens", 48);
    t.eval.chain_params.stop = s.texts_or("chain_stop", {"\n"});
    t.eval.seed = cfg.seed;
    if (cfg.pipeline) t.eval.pipeline = cfg.pipeline->config;
    cfg.text = t;
  }

  if (Section s(root, "endpoint"); s.present()) {
    s.no_unknown({"base_url", "model", "timeout_seconds", "max_retries", "max_in_flight", "mock"});
    EndpointSection e;
    e.use_mock = s.flag_or("mock", false);
    e.endpoint.base_url = e.use_mock ? s.text_or("base_url", "mock://in-process") : s.text("base_url");
    e.endpoint.model = s.text_or("model", "gpt2");
    e.endpoint.timeout_seconds = s.number_or("timeout_seconds", 30.0);
    e.endpoint.max_retries = s.count_or("max_retries", 3, true);
    e.endpoint.max_in_flight = s.count_or("max_in_flight", 4);
    s.check([&] { e.endpoint.validate(); });
    Section m(root, "mock");
    m.no_unknown({"completion", "supports_logprobs", "base_logprob", "copy_logprob", "fixture"});
    e.mock.completion = m.text_or("completion", e.mock.completion);
    e.mock.supports_logprobs = m.flag_or("supports_logprobs", true);
    e.mock.base_logprob = m.number_or("base_logprob", -2.0);
    if (m.has("copy_logprob")) e.mock.copy_logprob = m.number("copy_logprob");
    if (m.has("fixture")) {
      const json& f = m.raw("fixture");
      if (!f.is_object()) throw ConfigError("mock.fixture", "field `mock.fixture` must be a table");
      for (const auto& [word, lp] : f.items()) {
        if (!lp.is_number()) {
          throw ConfigError("mock.fixture." + word, "field `mock.fixture." + word + "` must be a number");
        }
        e.mock.fixture[word] = lp.get<double>();
      }
    }
    cfg.endpoint = e;
  } else if (root.contains("mock")) {
    throw ConfigError("mock", "field `mock` needs an `endpoint` table with mock = true");
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json root;
  if (path.extension() == ".json") {
    try {
      root = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("", path.string() + ": " + e.what());
    }
  } else {
    root = toml_to_json(text, path.string());
  }
  return config_from_json(root);
}

void RunConfig::require(std::initializer_list<const char*> sections) const {
  for (const char* s : sections) {
    const std::string name(s);
    const bool present = (name == "task" && task) || (name == "model" && model) ||
                         (name == "train" && train) || (name == "pipeline" && pipeline) ||
                         (name == "eval" && eval) || (name == "text" && text) ||
                         (name == "endpoint" && endpoint);
    if (!present) throw ConfigError(name, "missing required table `" + name + "`");
  }
}

json RunConfig::to_json() const {
  json out = {{"seed", seed}};
  if (task) {
    out["task"] = {{"family", std::string(to_string(task->family))}, {"d", task->d}, {"hidden", task->hidden}};
  }
  if (model) {
    out["model"] = {{"n_layers", model->n_layers}, {"n_heads", model->n_heads},
                    {"embed_dim", model->embed_dim}, {"max_tokens", model->max_tokens},
                    {"d", model->input_dim}};
  }
  if (train) {
    out["train"] = {{"steps", train->steps},         {"batch_size", train->batch_size},
                    {"learning_rate", train->learning_rate}, {"k_max", train->k_max},
                    {"chain_fraction", train->chain_fraction}, {"log_every", train->log_every},
                    {"fixed_task", train->fixed_task},
                    {"curriculum_start_dim", train->curriculum_start_dim},
                    {"curriculum_dim_every", train->curriculum_dim_every},
                    {"warmup_steps", train->warmup_steps},
                    {"grad_clip", train->grad_clip}};
  }
  if (pipeline) {
    json p = pipeline->config;
    p["context_len"] = pipeline->context_len;
    out["pipeline"] = p;
  }
  if (eval) {
    out["eval"] = {{"context_lengths", eval->context_lengths}, {"trials", eval->trials},
                   {"repeats", eval->repeats}};
  }
  if (text) {
    out["text"] = {{"dataset", text->dataset},
                   {"context_lengths", text->eval.context_lengths},
                   {"validation", text->eval.validation},
                   {"queries", text->eval.queries},
                   {"chain_max_tokens", text->eval.chain_params.max_tokens},
                   {"chain_stop", text->eval.chain_params.stop}};
  }
  if (endpoint) {
    json e = endpoint->endpoint;
    e["mock"] = endpoint->use_mock;
    out["endpoint"] = e;
    if (endpoint->use_mock) {
      json m = {{"completion", endpoint->mock.completion},
                {"supports_logprobs", endpoint->mock.supports_logprobs},
                {"base_logprob", endpoint->mock.base_logprob},
                {"fixture", endpoint->mock.fixture}};
      if (endpoint->mock.copy_logprob) m["copy_logprob"] = *endpoint->mock.copy_logprob;
      out["mock"] = m;
    }
  }
  return out;
}

TrainConfig RunConfig::train_config() const {
  require({"task", "model", "train"});
  TrainConfig t = *train;
  t.seed = seed;
  t.family = task->family;
  t.hidden = task->hidden;
  try {
    t.validate(*model);
  } catch (const ContractError& e) {
    throw ConfigError("train", std::string("invalid `train`: ") + e.what());
  }
  return t;
}

EvalConfig RunConfig::eval_config(bool autocot) const {
  require({"task", "eval"});
  EvalConfig e;
  e.context_lengths = eval->context_lengths;
  e.trials = eval->trials;
  e.repeats = eval->repeats;
  e.seed = seed;
  e.family = task->family;
  e.d = task->d;
  e.hidden = task->hidden;
  if (autocot) {
    require({"pipeline"});
    e.pipeline = pipeline->config;
  }
  return e;
}

}  // namespace iclcot::cli
