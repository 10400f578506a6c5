#include "iclcot/numerics/matrix.hpp"

#include <algorithm>
#include <limits>

#include "iclcot/numerics/kernels.hpp"

namespace iclcot {

std::string shape_string(std::size_t rows, std::size_t cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a) + " x " + shape_string(b));
  }
  Matrix<T> c(a.rows(), b.cols());
  if (c.empty()) return c;
  kernels::gemm_nn(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(),
                   b.cols(), false);
  return c;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  }
  return t;
}

template <typename T>
Matrix<T> relu(const Matrix<T>& a) {
  Matrix<T> out = a;
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - mx);
  const double lse = mx + std::log(total);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

template Matrix<float> matmul(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> matmul(const Matrix<double>&, const Matrix<double>&);
template Matrix<float> transpose(const Matrix<float>&);
template Matrix<double> transpose(const Matrix<double>&);
template Matrix<float> relu(const Matrix<float>&);
template Matrix<double> relu(const Matrix<double>&);

}  // namespace iclcot
