#pragma once

#include <Eigen/Core>

namespace dann {

// C[M,N] = alpha * op(A) * op(B) + beta * C, all row-major dense.
// Eigen's single-threaded product kernel does the heavy lifting; everything
// above it (im2col, gradient accumulation, update rules) is written out here.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapC = Eigen::Map<const Mat>;
  Eigen::Map<Mat> C(c, m, n);
  MapC A(a, trans_a ? k : m, trans_a ? m : k);
  MapC B(b, trans_b ? n : k, trans_b ? k : n);

  auto run = [&](const auto& lhs, const auto& rhs) {
    if (beta == T(0)) {
      C.noalias() = alpha * (lhs * rhs);
    } else {
      C *= beta;
      C.noalias() += alpha * (lhs * rhs);
    }
  };

  if (!trans_a && !trans_b)
    run(A, B);
  else if (trans_a && !trans_b)
    run(A.transpose(), B);
  else if (!trans_a && trans_b)
    run(A, B.transpose());
  else
    run(A.transpose(), B.transpose());
}

}  // namespace dann
