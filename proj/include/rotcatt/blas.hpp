#pragma once

namespace rotcatt::blas {

// Row-major C = alpha * op(A) * op(B) + beta * C, forwarded to cblas.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b, T beta,
          T* c);

}  // namespace rotcatt::blas
