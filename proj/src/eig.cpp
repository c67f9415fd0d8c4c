#include "nsae/eig.hpp"

#include <algorithm>
#include <cmath>

namespace nsae {

std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n,
                                       double tol, int max_sweeps) {
  if (n <= 0) return {};
  if (static_cast<int>(a.size()) != n * n)
    throw DimensionError("jacobi_eigenvalues: bad matrix size");
  auto at = [&](int i, int j) -> double& { return a[static_cast<long>(i) * n + j]; };

  double frob = 0.0;
  for (double v : a) frob += v * v;
  frob = std::sqrt(frob);
  const double thresh = tol * std::max(frob, 1.0);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
    if (std::sqrt(2.0 * off) <= thresh) {
      std::vector<double> eig(n);
      for (int i = 0; i < n; ++i) eig[i] = at(i, i);
      std::sort(eig.begin(), eig.end(), std::greater<>());
      return eig;
    }
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double app = at(p, p), aqq = at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        // Stable tangent of the rotation angle.
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = at(p, i), aqi = at(q, i);
          at(p, i) = c * api - s * aqi;
          at(q, i) = s * api + c * aqi;
        }
      }
    }
  }
  throw NumericalError("jacobi_eigenvalues: no convergence after " +
                       std::to_string(max_sweeps) + " sweeps");
}

template <class T>
std::vector<T> singular_values(const Tensor<T>& m) {
  if (m.shape().size() != 2)
    throw DimensionError("singular_values: expected 2-d matrix");
  const int rows = m.shape()[0], cols = m.shape()[1];
  const int n = std::min(rows, cols);
  const bool use_rows = rows <= cols;
  const auto& v = m.values();

  // Gram matrix of the smaller side, accumulated in double.
  std::vector<double> gram(static_cast<long>(n) * n, 0.0);
  if (use_rows) {
    for (int i = 0; i < rows; ++i)
      for (int j = i; j < rows; ++j) {
        double acc = 0.0;
        for (int k = 0; k < cols; ++k)
          acc += static_cast<double>(v[static_cast<long>(i) * cols + k]) *
                 static_cast<double>(v[static_cast<long>(j) * cols + k]);
        gram[static_cast<long>(i) * n + j] = acc;
        gram[static_cast<long>(j) * n + i] = acc;
      }
  } else {
    for (int i = 0; i < cols; ++i)
      for (int j = i; j < cols; ++j) {
        double acc = 0.0;
        for (int k = 0; k < rows; ++k)
          acc += static_cast<double>(v[static_cast<long>(k) * cols + i]) *
                 static_cast<double>(v[static_cast<long>(k) * cols + j]);
        gram[static_cast<long>(i) * n + j] = acc;
        gram[static_cast<long>(j) * n + i] = acc;
      }
  }

  auto eig = jacobi_eigenvalues(std::move(gram), n);
  std::vector<T> sv(n);
  for (int i = 0; i < n; ++i)
    sv[i] = static_cast<T>(std::sqrt(std::max(eig[i], 0.0)));
  return sv;
}

template std::vector<float> singular_values<float>(const Tensor<float>&);
template std::vector<double> singular_values<double>(const Tensor<double>&);

}  // namespace nsae
