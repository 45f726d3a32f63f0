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

// Independent reference computations shared by the unit and acceptance
// suites. Nothing here calls into the code under test except to read shapes.

#include "ocarlab/nn.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <random>
#include <vector>

namespace ocar::oracle {

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

/// B^T B / n + shift I: symmetric positive definite.
inline Matrix random_spd(Eigen::Index n, Rng& rng, double shift = 1.0) {
  const Matrix b = random_matrix(n, n, rng);
  Matrix m = b.transpose() * b / static_cast<double>(n);
  m.diagonal().array() += shift;
  return 0.5 * (m + m.transpose());
}

/// Gauss-Jordan elimination with partial pivoting, written out by hand.
inline Matrix gauss_jordan_inverse(const Matrix& m) {
  const Eigen::Index n = m.rows();
  std::vector<std::vector<double>> a(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(2 * n)));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      a[i][j] = m(i, j);
      a[i][n + j] = i == j ? 1.0 : 0.0;
    }
  for (Eigen::Index col = 0; col < n; ++col) {
    Eigen::Index piv = col;
    for (Eigen::Index r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    const double d = a[col][col];
    for (auto& v : a[col]) v /= d;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (Eigen::Index j = 0; j < 2 * n; ++j) a[r][j] -= f * a[col][j];
    }
  }
  Matrix inv(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) inv(i, j) = a[i][n + j];
  return inv;
}

/// Dense Kronecker product by explicit index arithmetic.
inline Matrix dense_kron(const Matrix& a, const Matrix& b) {
  Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index p = 0; p < b.rows(); ++p)
        for (Eigen::Index q = 0; q < b.cols(); ++q) k(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
  return k;
}

/// Column-stacking vectorization.
inline Vector col_vec(const Matrix& m) {
  Vector v(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) v[k++] = m(i, j);
  return v;
}

inline Matrix col_unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = v[k++];
  return m;
}

/// Upper-tail probability of a chi-square statistic.
inline double chi2_pvalue(double statistic, double dof) {
  const boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, statistic));
}

/// Pearson chi-square statistic of observed counts against a uniform expectation.
inline double chi2_uniform(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  const double expected = total / static_cast<double>(counts.size());
  double s = 0.0;
  for (double c : counts) s += (c - expected) * (c - expected) / expected;
  return s;
}

/// Chi-square statistic for inclusion counts of N items over T uniformly drawn
/// k-subsets. Each count has variance T p (1 - p) with p = k / N and the counts
/// are exchangeable with a fixed sum, so the scaled sum of squared deviations
/// is chi-square with N - 1 degrees of freedom. Reduces to Pearson for k = 1.
inline double chi2_subset_inclusion(const std::vector<double>& counts, double trials, double k) {
  const double n = static_cast<double>(counts.size());
  const double p = k / n;
  const double expected = trials * p;
  double ss = 0.0;
  for (double c : counts) ss += (c - expected) * (c - expected);
  return ss * (n - 1.0) / (n * trials * p * (1.0 - p));
}

/// Mean loss of a network written independently of nn::head_loss: plain loops
/// over the forward outputs.
inline double reference_loss(const nn::Network& net, const Matrix& x, const nn::Targets& t) {
  Matrix h = x;
  for (const auto& l : net.layers) {
    Matrix z = h * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    if (l.activation == nn::Activation::ReLU) z = z.cwiseMax(0.0);
    h = z;
  }
  double total = 0.0;
  for (Eigen::Index n = 0; n < h.rows(); ++n) {
    if (net.head == nn::HeadKind::SoftmaxCE) {
      const double mx = h.row(n).maxCoeff();
      double z = 0.0;
      for (Eigen::Index k = 0; k < h.cols(); ++k) z += std::exp(h(n, k) - mx);
      total += -(h(n, t.labels[static_cast<std::size_t>(n)]) - mx - std::log(z));
    } else {
      for (Eigen::Index k = 0; k < h.cols(); ++k) total += 0.5 * std::pow(h(n, k) - t.values(n, k), 2);
    }
  }
  return total / static_cast<double>(h.rows());
}

/// Central finite differences of reference_loss for every parameter, laid out
/// as augmented per-layer matrices [W | b].
inline nn::LayerMatrices fd_gradients(nn::Network net, const Matrix& x, const nn::Targets& t, double h = 1e-5) {
  nn::LayerMatrices out;
  for (auto& l : net.layers) {
    Matrix g(l.out_dim(), l.in_dim() + 1);
    for (Eigen::Index i = 0; i < l.out_dim(); ++i) {
      for (Eigen::Index j = 0; j <= l.in_dim(); ++j) {
        double& p = j < l.in_dim() ? l.weight(i, j) : l.bias[i];
        const double saved = p;
        p = saved + h;
        const double up = reference_loss(net, x, t);
        p = saved - h;
        const double down = reference_loss(net, x, t);
        p = saved;
        g(i, j) = (up - down) / (2.0 * h);
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace ocar::oracle
