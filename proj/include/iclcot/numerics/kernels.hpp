#pragma once

#include <cstddef>

// Raw row-major GEMM kernels backed by Eigen. Operands are widened to double,
// multiplied, and rounded once on store, for both float and double storage.
namespace iclcot::kernels {

// c(m x n) = a(m x k) * b(k x n)      (c += ... when accumulate)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

// c(k x n) = a(m x k)^T * b(m x n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

// c(m x n) = a(m x k) * b(n x k)^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

}  // namespace iclcot::kernels
