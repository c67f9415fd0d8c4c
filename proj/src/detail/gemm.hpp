#pragma once

// Small accumulating GEMM kernels. C is always M x N row-major.
// Loop orders are chosen so the inner loop is contiguous and vectorizes.

namespace nsae::detail {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn_acc(T* c, const T* a, const T* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<long>(i) * k;
    T* crow = c + static_cast<long>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<long>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt_acc(T* c, const T* a, const T* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<long>(i) * k;
    T* crow = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<long>(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn_acc(T* c, const T* a, const T* b, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<long>(p) * m;
    const T* brow = b + static_cast<long>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + static_cast<long>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace nsae::detail
