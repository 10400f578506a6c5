#include "iclcot/numerics/kernels.hpp"

#include <Eigen/Core>

namespace iclcot::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatD = RowMat<double>;

template <typename T>
Eigen::Map<const RowMat<T>> view(const T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

template <typename T>
void store(const RowMatD& prod, T* c, std::size_t r, std::size_t n, bool accumulate) {
  Eigen::Map<RowMat<T>> out(c, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(n));
  if (accumulate) {
    out = (out.template cast<double>() + prod).template cast<T>();
  } else {
    out = prod.template cast<T>();
  }
}

}  // namespace

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  RowMatD prod(m, n);
  prod.noalias() = view(a, m, k).template cast<double>() * view(b, k, n).template cast<double>();
  store(prod, c, m, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  RowMatD prod(k, n);
  prod.noalias() = view(a, m, k).template cast<double>().transpose() * view(b, m, n).template cast<double>();
  store(prod, c, k, n, accumulate);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  RowMatD prod(m, n);
  prod.noalias() = view(a, m, k).template cast<double>() * view(b, n, k).template cast<double>().transpose();
  store(prod, c, m, n, accumulate);
}

#define ICLCOT_GEMM(T)                                                                         \
  template void gemm_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool); \
  template void gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool); \
  template void gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);
ICLCOT_GEMM(float)
ICLCOT_GEMM(double)
#undef ICLCOT_GEMM

}  // namespace iclcot::kernels
