#pragma once

#include "edgedistill/random.hpp"
#include "edgedistill/tensor.hpp"

#include <functional>

namespace edgedistill::testing {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Index r = 0; r < m.rows(); ++r) m.row(r) /= m.row(r).norm();
  return m;
}

/// Central finite differences of a scalar function of one matrix.
inline Matrix numeric_grad(const std::function<double(const Matrix&)>& f, Matrix x, double eps = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + eps;
    const double up = f(x);
    x.data()[i] = keep - eps;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * eps);
  }
  return g;
}

/// max |a - n| / max(1, max |n|): relative to the gradient scale, absolute near zero.
inline double grad_error(const Matrix& analytic, const Matrix& numeric) {
  const double scale = std::max(1.0, numeric.cwiseAbs().maxCoeff());
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

}  // namespace edgedistill::testing
