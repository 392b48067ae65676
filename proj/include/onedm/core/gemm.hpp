#pragma once
#include <Eigen/Core>

namespace onedm {

// Thin wrappers so Eigen stays out of the rest of the codebase.
// All matrices are row-major contiguous. acc=true accumulates into C.

template <class T>
using EMat =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ECMat = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C[M,N] = A[M,K] * B[K,N]
template <class T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C,
             bool acc = false) {
  ECMat<T> a(A, M, K), b(B, K, N);
  EMat<T> c(C, M, N);
  if (acc)
    c.noalias() += a * b;
  else
    c.noalias() = a * b;
}

// C[M,N] = A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C,
             bool acc = false) {
  ECMat<T> a(A, M, K), b(B, N, K);
  EMat<T> c(C, M, N);
  if (acc)
    c.noalias() += a * b.transpose();
  else
    c.noalias() = a * b.transpose();
}

// C[M,N] = A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C,
             bool acc = false) {
  ECMat<T> a(A, K, M), b(B, K, N);
  EMat<T> c(C, M, N);
  if (acc)
    c.noalias() += a.transpose() * b;
  else
    c.noalias() = a.transpose() * b;
}

}  // namespace onedm
