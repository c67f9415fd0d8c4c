#pragma once

#include <vector>

#include "nsae/tensor.hpp"

namespace nsae {

/// Eigenvalues of a symmetric n x n matrix (row-major, double) by cyclic
/// Jacobi rotation. Returns eigenvalues in non-increasing order. Throws
/// NumericalError if the off-diagonal mass has not vanished after max_sweeps.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n,
                                       double tol = 1e-12, int max_sweeps = 100);

/// Singular values of a B x D matrix, non-increasing. Forward-only: computed
/// from the symmetric eigendecomposition of the smaller Gram matrix, no
/// gradient path.
template <class T>
std::vector<T> singular_values(const Tensor<T>& m);

}  // namespace nsae
