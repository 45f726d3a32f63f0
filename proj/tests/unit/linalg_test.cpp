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

#include "ocarlab/linalg.hpp"
#include "support/oracles.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

namespace {

using namespace ocar;

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

TEST(SpdInverse, IdentityIsItsOwnInverse) {
  EXPECT_EQ(linalg::spd_inverse(Matrix::Identity(3, 3)), Matrix::Identity(3, 3));
}

TEST(SpdInverse, DiagonalCase) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 2.0;
  m(1, 1) = 4.0;
  const Matrix inv = linalg::spd_inverse(m);
  EXPECT_DOUBLE_EQ(inv(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(inv(1, 1), 0.25);
  EXPECT_EQ(inv(0, 1), 0.0);
}

TEST(SpdInverse, MatchesGaussJordan) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = oracle::random_spd(8, rng);
    EXPECT_LE(max_abs(linalg::spd_inverse(m) - oracle::gauss_jordan_inverse(m)), 1e-10);
  }
}

TEST(SpdInverse, ResidualUpTo32) {
  Rng rng(12);
  for (Eigen::Index n = 1; n <= 32; ++n) {
    const Matrix m = oracle::random_spd(n, rng);
    EXPECT_LE(max_abs(m * linalg::spd_inverse(m) - Matrix::Identity(n, n)), 1e-9) << "n=" << n;
  }
}

TEST(SpdInverse, IndefiniteIsReported) {
  Matrix m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;
  try {
    linalg::spd_inverse(m);
    FAIL() << "expected NotPositiveDefinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotPositiveDefinite);
  }
}

TEST(SymEig, DiagonalCase) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 3.0;
  m(1, 1) = 1.0;
  const auto e = linalg::sym_eig(m);
  EXPECT_DOUBLE_EQ(e.values[0], 3.0);
  EXPECT_DOUBLE_EQ(e.values[1], 1.0);
  EXPECT_DOUBLE_EQ(std::abs(e.vectors(0, 0)), 1.0);
  EXPECT_DOUBLE_EQ(std::abs(e.vectors(1, 1)), 1.0);
}

TEST(SymEig, CharacteristicPolynomialCase) {
  // det([[2,1],[1,2]] - x I) = (2-x)^2 - 1 -> x in {3, 1}.
  Matrix m(2, 2);
  m << 2.0, 1.0, 1.0, 2.0;
  const auto e = linalg::sym_eig(m);
  EXPECT_NEAR(e.values[0], 3.0, 1e-14);
  EXPECT_NEAR(e.values[1], 1.0, 1e-14);
}

TEST(SymEig, ReconstructsRandomSymmetric) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix b = oracle::random_matrix(6, 6, rng);
    const Matrix m = 0.5 * (b + b.transpose());
    const auto e = linalg::sym_eig(m);
    const Matrix rec = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
    EXPECT_LE(max_abs(rec - m), 1e-9);
    EXPECT_LE(max_abs(e.vectors.transpose() * e.vectors - Matrix::Identity(6, 6)), 1e-12);
    for (Eigen::Index i = 1; i < 6; ++i) EXPECT_GE(e.values[i - 1], e.values[i]);
    // Independent solver as a second opinion on the spectrum.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(m);
    for (Eigen::Index i = 0; i < 6; ++i) EXPECT_NEAR(e.values[i], ref.eigenvalues()[5 - i], 1e-10);
  }
}

TEST(SymEig, SpdSpectrumIsPositive) {
  Rng rng(14);
  const auto e = linalg::sym_eig(oracle::random_spd(10, rng, 1e-3));
  EXPECT_GT(e.values.minCoeff(), 0.0);
}

TEST(SymEig, SweepCapIsReported) {
  Matrix m(2, 2);
  m << 2.0, 1.0, 1.0, 2.0;
  try {
    linalg::sym_eig(m, 0);
    FAIL() << "expected NoConvergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoConvergence);
  }
}

TEST(Kron, MatchesIndexOracleAndMixedProduct) {
  Rng rng(15);
  const Matrix a = oracle::random_matrix(2, 3, rng), b = oracle::random_matrix(4, 2, rng);
  EXPECT_EQ(linalg::kron(a, b), oracle::dense_kron(a, b));
  const Matrix c = oracle::random_matrix(3, 2, rng), d = oracle::random_matrix(2, 3, rng);
  EXPECT_LE(max_abs(linalg::kron(a, b) * linalg::kron(c, d) - linalg::kron(a * c, b * d)), 1e-12);
}

TEST(Vec, ColumnStackingRoundTrip) {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const Vector v = linalg::vec(m);
  Vector expected(6);
  expected << 1, 4, 2, 5, 3, 6;
  EXPECT_EQ(v, expected);
  EXPECT_EQ(linalg::unvec(v, 2, 3), m);
}

TEST(KronPrecondition, IdentityAndScalarFactors) {
  Rng rng(16);
  const Matrix v = oracle::random_matrix(3, 4, rng);
  EXPECT_EQ(linalg::kron_precondition(Matrix::Identity(4, 4), Matrix::Identity(3, 3), v), v);
  const Matrix a2 = 2.0 * Matrix::Identity(4, 4), g3 = 3.0 * Matrix::Identity(3, 3);
  EXPECT_LE(max_abs(linalg::kron_precondition(a2, g3, v) - 6.0 * v), 1e-15);
}

TEST(KronPrecondition, MatchesDenseKroneckerInverse) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = oracle::random_spd(4, rng), g = oracle::random_spd(3, rng);
    const Matrix v = oracle::random_matrix(3, 4, rng);
    const Matrix out = linalg::kron_precondition(oracle::gauss_jordan_inverse(a), oracle::gauss_jordan_inverse(g), v);
    const Vector dense = oracle::gauss_jordan_inverse(oracle::dense_kron(a, g)) * oracle::col_vec(v);
    EXPECT_LE(max_abs(out - oracle::col_unvec(dense, 3, 4)), 1e-10);
  }
}

TEST(KronPrecondition, ShapeMismatch) {
  try {
    linalg::kron_precondition(Matrix::Identity(3, 3), Matrix::Identity(2, 2), Matrix::Zero(2, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

}  // namespace
