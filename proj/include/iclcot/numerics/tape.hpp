#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <vector>

#include "iclcot/numerics/matrix.hpp"

namespace iclcot {

// Gradients keyed by the parameter id passed to Tape::parameter.
template <typename T>
using GradientMap = std::map<std::size_t, Matrix<T>>;

// Reverse-mode tape over whole matrices. Nodes are appended in evaluation
// order, so a reverse sweep over the node list is a valid topological order.
//
// A tape created with record == false evaluates the same values but keeps no
// backward closures; calling backward on it is a contract error.
template <typename T>
class Tape {
 public:
  struct Var {
    std::size_t id = 0;
  };

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix<T> value);
  // `value` is referenced, not copied, and must outlive the tape.
  Var parameter(std::size_t param_id, const Matrix<T>& value);

  const Matrix<T>& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  // a (m x n) + bias (1 x n) broadcast over rows.
  Var add_row(Var a, Var bias);
  // a (m x n) + table (p x n), row r of `a` paired with row r % p of `table`.
  Var add_cyclic_rows(Var a, Var table);
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  Var gather_rows(Var a, std::vector<std::size_t> rows);

  Var relu(Var a);
  // tanh-approximated GELU.
  Var gelu(Var a);
  Var tanh(Var a);
  Var square(Var a);
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

  // Multi-head causal self-attention over `batch` sequences of length `seq`
  // stacked row-wise. qkv is (batch*seq x 3E) with query, key and value
  // blocks side by side; the result is (batch*seq x E). Row i of a sequence
  // only ever reads rows j <= i of the same sequence.
  Var causal_attention(Var qkv, std::size_t batch, std::size_t seq, std::size_t heads);

  Var sum(Var a);
  Var mean(Var a);
  // Mean squared error against a constant target of the same shape.
  Var mse(Var pred, Matrix<T> target);

  // Accumulates d(loss)/d(node) for every node and returns the gradients of
  // all parameters registered on the tape (zeros for unreached ones).
  GradientMap<T> backward(Var loss);

 private:
  struct Node {
    Matrix<T> value;
    const Matrix<T>* external = nullptr;
    Matrix<T> grad;
    std::function<void(Tape&, const Matrix<T>&)> backward;
    std::size_t param_id = 0;
    bool is_param = false;
    bool needs_grad = false;

    const Matrix<T>& get() const { return external ? *external : value; }
  };

  Var push(Matrix<T> value, bool needs_grad,
           std::function<void(Tape&, const Matrix<T>&)> backward);
  bool needs(Var v) const { return record_ && nodes_[v.id].needs_grad; }
  Matrix<T>& grad_ref(Var v);
  const Node& node(Var v) const { return nodes_[v.id]; }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace iclcot
