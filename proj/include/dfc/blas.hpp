#pragma once

#include <Eigen/Core>

namespace dfc::blas {

// Row-major C = alpha * op(A) * op(B) + beta * C, with leading dimensions
// as in BLAS. Single-threaded Eigen product.
template <class T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta,
          T* c, int ldc) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Stride = Eigen::OuterStride<>;
    Eigen::Map<Mat, 0, Stride> cm(c, m, n, Stride(ldc));
    if (beta == T{0}) cm.setZero();
    else if (beta != T{1}) cm *= beta;
    auto run = [&](const auto& opa, const auto& opb) { cm.noalias() += alpha * (opa * opb); };
    const Eigen::Map<const Mat, 0, Stride> am(a, ta ? k : m, ta ? m : k, Stride(lda));
    const Eigen::Map<const Mat, 0, Stride> bm(b, tb ? n : k, tb ? k : n, Stride(ldb));
    if (ta && tb) run(am.transpose(), bm.transpose());
    else if (ta) run(am.transpose(), bm);
    else if (tb) run(am, bm.transpose());
    else run(am, bm);
}

}  // namespace dfc::blas
