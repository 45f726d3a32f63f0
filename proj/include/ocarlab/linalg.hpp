#pragma once
//------------------------------------------------------------------------------
//
//   Copyright 2026 The ocarlab Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------

#include "ocarlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace ocar::linalg {

/// Inverse of a symmetric positive-definite matrix through a Cholesky factorization.
/// Throws NotPositiveDefinite when a pivot is not strictly positive; no damping is
/// ever added here.
inline Matrix spd_inverse(const Matrix& m) {
  require(m.rows() == m.cols(), ErrorKind::ShapeMismatch,
          "spd_inverse needs a square matrix, got " + shape_str(m.rows(), m.cols()));
  require(m.allFinite(), ErrorKind::NotPositiveDefinite, "matrix has non-finite entries");
  const Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::NotPositiveDefinite, "Cholesky pivot <= 0 for " + shape_str(m.rows(), m.cols()) + " matrix");
  }
  Matrix inv = llt.solve(Matrix::Identity(m.rows(), m.cols()));
  if (!inv.allFinite()) fail(ErrorKind::NotPositiveDefinite, "inverse is not finite");
  // Triangular solves leave O(eps) asymmetry; the caller relies on exact symmetry.
  Matrix sym = 0.5 * (inv + inv.transpose());
  return sym;
}

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // column k pairs with values[k]
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Intended for the
/// diagnostic path (small blocks); cost is O(n^3) per sweep.
inline EigenDecomposition sym_eig(const Matrix& m, int max_sweeps = 100) {
  require(m.rows() == m.cols(), ErrorKind::ShapeMismatch,
          "sym_eig needs a square matrix, got " + shape_str(m.rows(), m.cols()));
  const Eigen::Index n = m.rows();
  Matrix a = 0.5 * (m + m.transpose());
  Matrix v = Matrix::Identity(n, n);

  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) s += a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  bool converged = n <= 1;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    if (off_norm() <= 1e-15 * scale * static_cast<double>(n)) {
      converged = true;
      break;
    }
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged && off_norm() > 1e-15 * scale * static_cast<double>(n)) {
    fail(ErrorKind::NoConvergence, "Jacobi did not converge in " + std::to_string(max_sweeps) + " sweeps");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  EigenDecomposition out{Vector(n), Matrix(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto src = order[static_cast<std::size_t>(k)];
    out.values[k] = a(src, src);
    out.vectors.col(k) = v.col(src);
  }
  return out;
}

/// Standard Kronecker product: block (p, q) of the result is a(p, q) * b.
inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index p = 0; p < a.rows(); ++p)
    for (Eigen::Index q = 0; q < a.cols(); ++q)
      out.block(p * b.rows(), q * b.cols(), b.rows(), b.cols()) = a(p, q) * b;
  return out;
}

/// Column-stacking vectorization, the convention under which
/// (A (x) G) vec(V) = vec(G V A^T).
inline Vector vec(const Matrix& m) {
  Vector out(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) out[k++] = m(r, c);
  return out;
}

inline Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  require(v.size() == rows * cols, ErrorKind::ShapeMismatch, "unvec length mismatch");
  Matrix out(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = v[k++];
  return out;
}

/// Applies (A (x) G)^{-1} to vec(grad) given the two (symmetric) factor inverses,
/// i.e. returns G^{-1} * grad * A^{-1} for a (out x in+1) layer gradient.
inline Matrix kron_precondition(const Matrix& a_inv, const Matrix& g_inv, const Matrix& grad) {
  if (a_inv.rows() != a_inv.cols() || g_inv.rows() != g_inv.cols() || grad.rows() != g_inv.rows() ||
      grad.cols() != a_inv.rows()) {
    fail(ErrorKind::ShapeMismatch, "kron_precondition: a_inv " + shape_str(a_inv.rows(), a_inv.cols()) + ", g_inv " +
                                       shape_str(g_inv.rows(), g_inv.cols()) + ", grad " +
                                       shape_str(grad.rows(), grad.cols()));
  }
  Matrix left = g_inv * grad;
  Matrix out = left * a_inv;
  return out;
}

}  // namespace ocar::linalg
