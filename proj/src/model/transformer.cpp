#include "iclcot/model/transformer.hpp"

#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

namespace iclcot {

namespace {

constexpr std::size_t kPerLayer = 12;
constexpr std::size_t kEmbedW = 0, kEmbedB = 1, kPos = 2, kFirstLayer = 3;
// Offsets inside one block.
constexpr std::size_t kLn1G = 0, kLn1B = 1, kQkvW = 2, kQkvB = 3, kOutW = 4, kOutB = 5,
                      kLn2G = 6, kLn2B = 7, kFcW = 8, kFcB = 9, kProjW = 10, kProjB = 11;

std::size_t layer_base(std::size_t layer) { return kFirstLayer + layer * kPerLayer; }

}  // namespace

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || embed_dim == 0 || max_tokens == 0 || input_dim == 0) {
    throw ContractError("model config: all sizes must be positive");
  }
  if (embed_dim % n_heads != 0) {
    throw ContractError("model config: embed_dim " + std::to_string(embed_dim) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  }
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = {{"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads}, {"embed_dim", cfg.embed_dim},
       {"max_tokens", cfg.max_tokens}, {"d", cfg.input_dim}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  cfg.n_layers = j.at("n_layers").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
  cfg.max_tokens = j.at("max_tokens").get<std::size_t>();
  cfg.input_dim = j.at("d").get<std::size_t>();
}

ModelConfig reference_model_config() {
  ModelConfig cfg;
  cfg.n_layers = 12;
  cfg.n_heads = 8;
  cfg.embed_dim = 256;
  cfg.max_tokens = 81;
  cfg.input_dim = 20;
  return cfg;
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t e = cfg.embed_dim;
  std::vector<ParamSpec> out;
  out.push_back({"embed.weight", cfg.token_dim(), e});
  out.push_back({"embed.bias", 1, e});
  out.push_back({"pos", cfg.max_tokens, e});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.push_back({p + "ln1.gamma", 1, e});
    out.push_back({p + "ln1.beta", 1, e});
    out.push_back({p + "attn.qkv.weight", e, 3 * e});
    out.push_back({p + "attn.qkv.bias", 1, 3 * e});
    out.push_back({p + "attn.out.weight", e, e});
    out.push_back({p + "attn.out.bias", 1, e});
    out.push_back({p + "ln2.gamma", 1, e});
    out.push_back({p + "ln2.beta", 1, e});
    out.push_back({p + "mlp.fc.weight", e, 4 * e});
    out.push_back({p + "mlp.fc.bias", 1, 4 * e});
    out.push_back({p + "mlp.proj.weight", 4 * e, e});
    out.push_back({p + "mlp.proj.bias", 1, e});
  }
  out.push_back({"ln_f.gamma", 1, e});
  out.push_back({"ln_f.beta", 1, e});
  out.push_back({"readout.weight", e, 1});
  out.push_back({"readout.bias", 1, 1});
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : parameter_layout(cfg)) n += s.rows * s.cols;
  return n;
}

template <typename T>
Transformer<T>::Transformer(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto layout = parameter_layout(cfg_);
  for (const auto& spec : layout) {
    Matrix<T> m(spec.rows, spec.cols);
    const auto& name = spec.name;
    const bool is_gain = name.ends_with(".gamma");
    const bool is_bias = name.ends_with(".bias") || name.ends_with(".beta");
    if (is_gain) {
      m.fill(T{1});
    } else if (name == "pos") {
      for (T& v : m.data()) v = static_cast<T>(0.02 * rng.normal());
    } else if (!is_bias) {
      // U(-a, a): a = 1/sqrt(fan_in), Glorot bound for the fused qkv projection.
      const double fan_in = static_cast<double>(spec.rows), fan_out = static_cast<double>(spec.cols);
      const double a = name.ends_with("attn.qkv.weight") ? std::sqrt(6.0 / (fan_in + fan_out))
                                                         : 1.0 / std::sqrt(fan_in);
      for (T& v : m.data()) v = static_cast<T>(a * (2.0 * rng.uniform() - 1.0));
    }
    params_.push_back(std::move(m));
  }
}

template <typename T>
Transformer<T>::Transformer(const ModelConfig& cfg, std::vector<Matrix<T>> params)
    : cfg_(cfg), params_(std::move(params)) {
  const auto layout = parameter_layout(cfg_);
  if (layout.size() != params_.size()) {
    throw ShapeError("transformer: expected " + std::to_string(layout.size()) +
                     " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params_[i].rows() != layout[i].rows || params_[i].cols() != layout[i].cols) {
      throw ShapeError("transformer: parameter " + layout[i].name + " is " +
                       shape_string(params_[i]) + ", expected " +
                       shape_string(layout[i].rows, layout[i].cols));
    }
  }
}

template <typename T>
std::size_t Transformer<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <typename T>
bool Transformer<T>::all_finite() const {
  for (const auto& p : params_) {
    if (!p.all_finite()) return false;
  }
  return true;
}

template <typename T>
typename Transformer<T>::Var Transformer<T>::forward(Tape<T>& tape, const Matrix<T>& tokens,
                                                     std::size_t batch, std::size_t seq) const {
  if (tokens.rows() != batch * seq || tokens.cols() != cfg_.token_dim()) {
    throw ShapeError("transformer forward: tokens " + shape_string(tokens) + " for batch " +
                     std::to_string(batch) + " x seq " + std::to_string(seq) + ", width " +
                     std::to_string(cfg_.token_dim()));
  }
  if (seq == 0 || seq > cfg_.max_tokens) {
    throw CapacityError("sequence of " + std::to_string(seq) + " tokens, model holds " +
                        std::to_string(cfg_.max_tokens));
  }
  auto p = [&](std::size_t id) { return tape.parameter(id, params_[id]); };

  Var x = tape.matmul(tape.constant(tokens), p(kEmbedW));
  x = tape.add_row(x, p(kEmbedB));
  x = tape.add_cyclic_rows(x, tape.slice_rows(p(kPos), 0, seq));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::size_t b = layer_base(l);
    Var h = tape.layer_norm(x, p(b + kLn1G), p(b + kLn1B));
    Var qkv = tape.add_row(tape.matmul(h, p(b + kQkvW)), p(b + kQkvB));
    Var att = tape.causal_attention(qkv, batch, seq, cfg_.n_heads);
    att = tape.add_row(tape.matmul(att, p(b + kOutW)), p(b + kOutB));
    x = tape.add(x, att);
    h = tape.layer_norm(x, p(b + kLn2G), p(b + kLn2B));
    Var m = tape.gelu(tape.add_row(tape.matmul(h, p(b + kFcW)), p(b + kFcB)));
    m = tape.add_row(tape.matmul(m, p(b + kProjW)), p(b + kProjB));
    x = tape.add(x, m);
  }
  const std::size_t tail = layer_base(cfg_.n_layers);
  x = tape.layer_norm(x, p(tail), p(tail + 1));
  return tape.add_row(tape.matmul(x, p(tail + 2)), p(tail + 3));
}

template <typename T>
std::vector<double> Transformer<T>::predict(const TokenSequence& seq) const {
  std::span<const TokenSequence> one(&seq, 1);
  return predict_batch(one).front();
}

template <typename T>
std::vector<std::vector<double>> Transformer<T>::predict_batch(
    std::span<const TokenSequence> seqs) const {
  std::vector<std::vector<double>> out(seqs.size());
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < seqs.size(); ++i) by_length[seqs[i].length()].push_back(i);
  const std::size_t width = cfg_.token_dim();
  for (const auto& [len, members] : by_length) {
    Matrix<T> tokens(members.size() * len, width);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const Matrix64& src = seqs[members[m]].tokens;
      if (src.cols() != width) {
        throw ShapeError("predict: token width " + std::to_string(src.cols()) + ", model expects " +
                         std::to_string(width));
      }
      for (std::size_t i = 0; i < src.size(); ++i) {
        tokens[m * len * width + i] = static_cast<T>(src[i]);
      }
    }
    Tape<T> tape(false);
    const auto readout = forward(tape, tokens, members.size(), len);
    const Matrix<T>& values = tape.value(readout);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto& seq = seqs[members[m]];
      auto& preds = out[members[m]];
      preds.reserve(seq.x_positions.size());
      for (std::size_t pos : seq.x_positions) {
        preds.push_back(static_cast<double>(values[m * len + pos]));
      }
    }
  }
  return out;
}

template <typename T>
double Transformer<T>::predict_query(const TokenSequence& seq) const {
  return predict(seq).back();
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace iclcot
