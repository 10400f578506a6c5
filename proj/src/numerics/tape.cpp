#include "iclcot/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "iclcot/numerics/kernels.hpp"

namespace iclcot {

namespace {

template <typename T>
void require_same_shape(const char* op, const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

template <typename T>
typename Tape<T>::Var Tape<T>::push(Matrix<T> value, bool needs_grad,
                                    std::function<void(Tape&, const Matrix<T>&)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Matrix<T>& Tape<T>::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Matrix<T>(n.get().rows(), n.get().cols());
  return n.grad;
}

template <typename T>
const Matrix<T>& Tape<T>::value(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("tape: unknown variable");
  return nodes_[v.id].get();
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Matrix<T> value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
typename Tape<T>::Var Tape<T>::parameter(std::size_t param_id, const Matrix<T>& value) {
  Node n;
  n.external = &value;
  n.is_param = true;
  n.param_id = param_id;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
typename Tape<T>::Var Tape<T>::matmul(Var a, Var b) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_string(av) + " x " + shape_string(bv));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Matrix<T> out(m, n);
  if (!out.empty() && k > 0) {
    kernels::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n, false);
  }
  return push(std::move(out), needs(a) || needs(b), [a, b, m, k, n](Tape& t, const Matrix<T>& g) {
    if (m == 0 || n == 0 || k == 0) return;
    if (t.needs(a)) {
      kernels::gemm_nt(g.data().data(), t.value(b).data().data(), t.grad_ref(a).data().data(), m,
                       n, k, true);
    }
    if (t.needs(b)) {
      kernels::gemm_tn(t.value(a).data().data(), g.data().data(), t.grad_ref(b).data().data(), m,
                       k, n, true);
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& bv = value(b);
  require_same_shape("add", av, bv);
  Matrix<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix<T>& g) {
    for (Var v : {a, b}) {
      if (!t.needs(v)) continue;
      Matrix<T>& gr = t.grad_ref(v);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::sub(Var a, Var b) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& bv = value(b);
  require_same_shape("sub", av, bv);
  Matrix<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix<T>& g) {
    if (t.needs(a)) {
      Matrix<T>& gr = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
    }
    if (t.needs(b)) {
      Matrix<T>& gr = t.grad_ref(b);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i] -= g[i];
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& bv = value(b);
  require_same_shape("mul", av, bv);
  Matrix<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix<T>& g) {
    if (t.needs(a)) {
      const Matrix<T>& bv2 = t.value(b);
      Matrix<T>& gr = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i] * bv2[i];
    }
    if (t.needs(b)) {
      const Matrix<T>& av2 = t.value(a);
      Matrix<T>& gr = t.grad_ref(b);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i] * av2[i];
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::scale(Var a, double s) {
  Matrix<T> out = value(a);
  for (T& v : out.data()) v = static_cast<T>(static_cast<double>(v) * s);
  return push(std::move(out), needs(a), [a, s](Tape& t, const Matrix<T>& g) {
    Matrix<T>& gr = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gr[i] += static_cast<T>(static_cast<double>(g[i]) * s);
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::add_row(Var a, Var bias) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& bv = value(bias);
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeError("add_row: " + shape_string(av) + " + " + shape_string(bv));
  }
  Matrix<T> out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return push(std::move(out), needs(a) || needs(bias), [a, bias](Tape& t, const Matrix<T>& g) {
    if (t.needs(a)) {
      Matrix<T>& gr = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
    }
    if (t.needs(bias)) {
      std::vector<double> acc(g.cols(), 0.0);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) acc[c] += static_cast<double>(row[c]);
      }
      Matrix<T>& gr = t.grad_ref(bias);
      for (std::size_t c = 0; c < acc.size(); ++c) gr[c] += static_cast<T>(acc[c]);
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::add_cyclic_rows(Var a, Var table) {
  const Matrix<T>& av = value(a);
  const Matrix<T>& tv = value(table);
  if (tv.cols() != av.cols() || tv.rows() == 0 || av.rows() % tv.rows() != 0) {
    throw ShapeError("add_cyclic_rows: " + shape_string(av) + " + " + shape_string(tv));
  }
  Matrix<T> out = av;
  const std::size_t p = tv.rows();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    auto src = tv.row(r % p);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += src[c];
  }
  return push(std::move(out), needs(a) || needs(table), [a, table, p](Tape& t, const Matrix<T>& g) {
    if (t.needs(a)) {
      Matrix<T>& gr = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
    }
    if (t.needs(table)) {
      std::vector<double> acc(p * g.cols(), 0.0);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        double* dst = acc.data() + (r % p) * g.cols();
        for (std::size_t c = 0; c < row.size(); ++c) dst[c] += static_cast<double>(row[c]);
      }
      Matrix<T>& gr = t.grad_ref(table);
      for (std::size_t i = 0; i < acc.size(); ++i) gr[i] += static_cast<T>(acc[i]);
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Matrix<T>& av = value(a);
  if (begin + count > av.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") of " + shape_string(av));
  }
  const std::size_t cols = av.cols();
  std::vector<T> data(av.data().begin() + begin * cols, av.data().begin() + (begin + count) * cols);
  return push(Matrix<T>(count, cols, std::move(data)), needs(a),
              [a, begin, cols](Tape& t, const Matrix<T>& g) {
                Matrix<T>& gr = t.grad_ref(a);
                for (std::size_t i = 0; i < g.size(); ++i) gr[begin * cols + i] += g[i];
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::gather_rows(Var a, std::vector<std::size_t> rows) {
  const Matrix<T>& av = value(a);
  Matrix<T> out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy(av.row(rows[i]).begin(), av.row(rows[i]).end(), out.row(i).begin());
  }
  return push(std::move(out), needs(a), [a, rows = std::move(rows)](Tape& t, const Matrix<T>& g) {
    Matrix<T>& gr = t.grad_ref(a);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto dst = gr.row(rows[i]);
      auto src = g.row(i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::relu(Var a) {
  Matrix<T> out = value(a);
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return push(std::move(out), needs(a), [a](Tape& t, const Matrix<T>& g) {
    const Matrix<T>& x = t.value(a);
    Matrix<T>& gr = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T{0}) gr[i] += g[i];
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::gelu(Var a) {
  Matrix<T> out = value(a);
  for (T& v : out.data()) {
    const double x = static_cast<double>(v);
    const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
    v = static_cast<T>(0.5 * x * (1.0 + std::tanh(u)));
  }
  return push(std::move(out), needs(a), [a](Tape& t, const Matrix<T>& g) {
    const Matrix<T>& xv = t.value(a);
    Matrix<T>& gr = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = static_cast<double>(xv[i]);
      const double th = std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x));
      const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      gr[i] += static_cast<T>(static_cast<double>(g[i]) * d);
    }
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::tanh(Var a) {
  Matrix<T> out = value(a);
  for (T& v : out.data()) v = static_cast<T>(std::tanh(static_cast<double>(v)));
  const Var result = push(std::move(out), needs(a), nullptr);
  if (needs(a)) {
    nodes_[result.id].backward = [a, result](Tape& t, const Matrix<T>& g) {
      const Matrix<T>& y = t.value(result);
      Matrix<T>& gr = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double yi = static_cast<double>(y[i]);
        gr[i] += static_cast<T>(static_cast<double>(g[i]) * (1.0 - yi * yi));
      }
    };
  }
  return result;
}

template <typename T>
typename Tape<T>::Var Tape<T>::square(Var a) {
  Matrix<T> out = value(a);
  for (T& v : out.data()) v = v * v;
  return push(std::move(out), needs(a), [a](Tape& t, const Matrix<T>& g) {
    const Matrix<T>& x = t.value(a);
    Matrix<T>& gr = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) gr[i] += T{2} * x[i] * g[i];
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::softmax_rows(Var a) {
  Matrix<T> out = value(a);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (row.empty()) continue;
    const double mx = static_cast<double>(*std::max_element(row.begin(), row.end()));
    double total = 0.0;
    std::vector<double> e(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      e[c] = std::exp(static_cast<double>(row[c]) - mx);
      total += e[c];
    }
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = static_cast<T>(e[c] / total);
  }
  const Var result = push(std::move(out), needs(a), nullptr);
  if (needs(a)) {
    nodes_[result.id].backward = [a, result](Tape& t, const Matrix<T>& g) {
      const Matrix<T>& p = t.value(result);
      Matrix<T>& gr = t.grad_ref(a);
      for (std::size_t r = 0; r < p.rows(); ++r) {
        auto pr = p.row(r);
        auto gg = g.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < pr.size(); ++c) {
          dot += static_cast<double>(pr[c]) * static_cast<double>(gg[c]);
        }
        auto dst = gr.row(r);
        for (std::size_t c = 0; c < pr.size(); ++c) {
          dst[c] += static_cast<T>(static_cast<double>(pr[c]) * (static_cast<double>(gg[c]) - dot));
        }
      }
    };
  }
  return result;
}

template <typename T>
typename Tape<T>::Var Tape<T>::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix<T>& xv = value(x);
  const Matrix<T>& gv = value(gamma);
  const Matrix<T>& bv = value(beta);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gv.rows() != 1 || gv.cols() != cols || !gv.same_shape(bv)) {
    throw ShapeError("layer_norm: " + shape_string(xv) + " with gamma " + shape_string(gv) +
                     " beta " + shape_string(bv));
  }
  Matrix<T> out(rows, cols);
  std::vector<double> xhat(rows * cols);
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (T v : in) mean += static_cast<double>(v);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (T v : in) {
      const double d = static_cast<double>(v) - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (static_cast<double>(in[c]) - mean) * rstd[r];
      xhat[r * cols + c] = h;
      o[c] = static_cast<T>(h * static_cast<double>(gv[c]) + static_cast<double>(bv[c]));
    }
  }
  const bool track = needs(x) || needs(gamma) || needs(beta);
  if (!track) return push(std::move(out), false, nullptr);
  return push(std::move(out), true,
              [x, gamma, beta, rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](
                  Tape& t, const Matrix<T>& g) {
                const Matrix<T>& gv2 = t.value(gamma);
                if (t.needs(gamma) || t.needs(beta)) {
                  std::vector<double> dg(cols, 0.0), db(cols, 0.0);
                  for (std::size_t r = 0; r < rows; ++r) {
                    auto gr = g.row(r);
                    for (std::size_t c = 0; c < cols; ++c) {
                      dg[c] += static_cast<double>(gr[c]) * xhat[r * cols + c];
                      db[c] += static_cast<double>(gr[c]);
                    }
                  }
                  if (t.needs(gamma)) {
                    Matrix<T>& d = t.grad_ref(gamma);
                    for (std::size_t c = 0; c < cols; ++c) d[c] += static_cast<T>(dg[c]);
                  }
                  if (t.needs(beta)) {
                    Matrix<T>& d = t.grad_ref(beta);
                    for (std::size_t c = 0; c < cols; ++c) d[c] += static_cast<T>(db[c]);
                  }
                }
                if (t.needs(x)) {
                  Matrix<T>& dx = t.grad_ref(x);
                  std::vector<double> dxhat(cols);
                  const double inv_n = 1.0 / static_cast<double>(cols);
                  for (std::size_t r = 0; r < rows; ++r) {
                    auto gr = g.row(r);
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                      dxhat[c] = static_cast<double>(gr[c]) * static_cast<double>(gv2[c]);
                      mean_d += dxhat[c];
                      mean_dx += dxhat[c] * xhat[r * cols + c];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    auto dst = dx.row(r);
                    for (std::size_t c = 0; c < cols; ++c) {
                      dst[c] += static_cast<T>(
                          rstd[r] * (dxhat[c] - mean_d - xhat[r * cols + c] * mean_dx));
                    }
                  }
                }
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::causal_attention(Var qkv, std::size_t batch, std::size_t seq,
                                                std::size_t heads) {
  const Matrix<T>& in = value(qkv);
  if (heads == 0 || in.cols() % 3 != 0 || in.rows() != batch * seq) {
    throw ShapeError("causal_attention: input " + shape_string(in) + " for batch " +
                     std::to_string(batch) + " seq " + std::to_string(seq));
  }
  const std::size_t embed = in.cols() / 3;
  if (embed % heads != 0) throw ShapeError("causal_attention: embed not divisible by heads");
  const std::size_t hd = embed / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t width = in.cols();

  Matrix<T> out(batch * seq, embed);
  const bool track = needs(qkv);
  // probs[(b*heads + h)*seq*seq + i*seq + j] for j <= i.
  std::vector<double> probs(track ? batch * heads * seq * seq : 0);
  std::vector<double> p(seq);
  std::vector<double> acc(hd);
  const T* base = in.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * hd, ko = embed + h * hd, vo = 2 * embed + h * hd;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* q = base + (b * seq + i) * width + qo;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* k = base + (b * seq + j) * width + ko;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += static_cast<double>(q[c]) * static_cast<double>(k[c]);
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          total += p[j];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] /= total;
          const T* v = base + (b * seq + j) * width + vo;
          for (std::size_t c = 0; c < hd; ++c) acc[c] += p[j] * static_cast<double>(v[c]);
        }
        T* o = out.row(b * seq + i).data() + h * hd;
        for (std::size_t c = 0; c < hd; ++c) o[c] = static_cast<T>(acc[c]);
        if (track) {
          std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(i + 1),
                    probs.begin() + static_cast<std::ptrdiff_t>(((b * heads + h) * seq + i) * seq));
        }
      }
    }
  }
  if (!track) return push(std::move(out), false, nullptr);
  return push(std::move(out), true,
              [qkv, batch, seq, heads, embed, hd, scale, width, probs = std::move(probs)](
                  Tape& t, const Matrix<T>& g) {
                const T* base2 = t.value(qkv).data().data();
                std::vector<double> dqkv(batch * seq * width, 0.0);
                std::vector<double> dp(seq);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t qo = h * hd, ko = embed + h * hd, vo = 2 * embed + h * hd;
                    for (std::size_t i = 0; i < seq; ++i) {
                      const double* pi = probs.data() + ((b * heads + h) * seq + i) * seq;
                      const T* go = g.row(b * seq + i).data() + h * hd;
                      double dot = 0.0;
                      for (std::size_t j = 0; j <= i; ++j) {
                        const T* v = base2 + (b * seq + j) * width + vo;
                        double s = 0.0;
                        for (std::size_t c = 0; c < hd; ++c) {
                          s += static_cast<double>(go[c]) * static_cast<double>(v[c]);
                        }
                        dp[j] = s;
                        dot += s * pi[j];
                        double* dv = dqkv.data() + (b * seq + j) * width + vo;
                        for (std::size_t c = 0; c < hd; ++c) dv[c] += pi[j] * static_cast<double>(go[c]);
                      }
                      const T* q = base2 + (b * seq + i) * width + qo;
                      double* dq = dqkv.data() + (b * seq + i) * width + qo;
                      for (std::size_t j = 0; j <= i; ++j) {
                        const double ds = pi[j] * (dp[j] - dot) * scale;
                        if (ds == 0.0) continue;
                        const T* k = base2 + (b * seq + j) * width + ko;
                        double* dk = dqkv.data() + (b * seq + j) * width + ko;
                        for (std::size_t c = 0; c < hd; ++c) {
                          dq[c] += ds * static_cast<double>(k[c]);
                          dk[c] += ds * static_cast<double>(q[c]);
                        }
                      }
                    }
                  }
                }
                Matrix<T>& gr = t.grad_ref(qkv);
                for (std::size_t i = 0; i < dqkv.size(); ++i) gr[i] += static_cast<T>(dqkv[i]);
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::sum(Var a) {
  double total = 0.0;
  for (T v : value(a).data()) total += static_cast<double>(v);
  return push(Matrix<T>(1, 1, static_cast<T>(total)), needs(a), [a](Tape& t, const Matrix<T>& g) {
    Matrix<T>& gr = t.grad_ref(a);
    for (T& v : gr.data()) v += g[0];
  });
}

template <typename T>
typename Tape<T>::Var Tape<T>::mean(Var a) {
  const std::size_t n = value(a).size();
  if (n == 0) throw ContractError("mean of empty matrix");
  double total = 0.0;
  for (T v : value(a).data()) total += static_cast<double>(v);
  const double inv = 1.0 / static_cast<double>(n);
  return push(Matrix<T>(1, 1, static_cast<T>(total * inv)), needs(a),
              [a, inv](Tape& t, const Matrix<T>& g) {
                Matrix<T>& gr = t.grad_ref(a);
                const T d = static_cast<T>(static_cast<double>(g[0]) * inv);
                for (T& v : gr.data()) v += d;
              });
}

template <typename T>
typename Tape<T>::Var Tape<T>::mse(Var pred, Matrix<T> target) {
  const Matrix<T>& pv = value(pred);
  require_same_shape("mse", pv, target);
  if (pv.empty()) throw ContractError("mse of empty prediction");
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv[i]) - static_cast<double>(target[i]);
    total += d * d;
  }
  const double inv = 1.0 / static_cast<double>(pv.size());
  return push(Matrix<T>(1, 1, static_cast<T>(total * inv)), needs(pred),
              [pred, inv, target = std::move(target)](Tape& t, const Matrix<T>& g) {
                const Matrix<T>& p = t.value(pred);
                Matrix<T>& gr = t.grad_ref(pred);
                const double scale = 2.0 * inv * static_cast<double>(g[0]);
                for (std::size_t i = 0; i < p.size(); ++i) {
                  gr[i] += static_cast<T>(
                      scale * (static_cast<double>(p[i]) - static_cast<double>(target[i])));
                }
              });
}

template <typename T>
GradientMap<T> Tape<T>::backward(Var loss) {
  if (!record_) throw ContractError("backward on a tape created without recording");
  const Matrix<T>& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be a scalar node, got " + shape_string(lv));
  }
  for (Node& n : nodes_) n.grad = Matrix<T>();
  if (nodes_[loss.id].needs_grad) {
    grad_ref(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }
  GradientMap<T> grads;
  for (Node& n : nodes_) {
    if (!n.is_param) continue;
    Matrix<T> g = n.grad.empty() ? Matrix<T>(n.get().rows(), n.get().cols()) : std::move(n.grad);
    auto it = grads.find(n.param_id);
    if (it == grads.end()) {
      grads.emplace(n.param_id, std::move(g));
    } else {
      // Same parameter registered twice: gradients add.
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  return grads;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace iclcot
