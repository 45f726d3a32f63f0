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

#include "ocarlab/kfac.hpp"
#include "support/oracles.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

namespace {

using namespace ocar;

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

kfac::KfacState state_with(const Matrix& a, const Matrix& g, double tau) {
  auto s = kfac::make_state(1.0, tau);
  s.layers.push_back({a, g, {}, {}, 1.0, 0.0, 0.0});
  s.initialized = true;
  return s;
}

TEST(BatchFactors, SingleExampleIsOuterProduct) {
  const auto net = nn::make_linear(3, 2, nn::HeadKind::SoftmaxCE);
  Matrix x(1, 3);
  x << 0.5, -1.0, 2.0;
  const auto cache = nn::forward(net, x);
  Rng rng(1);
  const auto fisher = nn::loss_and_grad(net, cache, {}, nn::LabelMode::SampledLabels, rng);
  const std::vector<std::uint8_t> mask{0};
  const auto f = kfac::compute_batch_factors(cache, fisher.backward, mask, 1.0);
  const Matrix& ab = cache.inputs_aug[0];
  EXPECT_EQ(f[0].a, ab.transpose() * ab);
  const Matrix& g = fisher.backward.output_grads[0];
  EXPECT_LE(max_abs(f[0].g - g.transpose() * g), 1e-15);
}

TEST(BatchFactors, BufferWeightSymmetryAtLambdaOne) {
  Rng rng(2);
  const auto net = nn::make_mlp({4, 5, 3}, nn::HeadKind::SoftmaxCE, rng);
  const auto cache = nn::forward(net, oracle::random_matrix(6, 4, rng));
  const auto fisher = nn::loss_and_grad(net, cache, {}, nn::LabelMode::SampledLabels, rng);
  const std::vector<std::uint8_t> all_new(6, 0), all_buf(6, 1);
  const auto a = kfac::compute_batch_factors(cache, fisher.backward, all_new, 1.0);
  const auto b = kfac::compute_batch_factors(cache, fisher.backward, all_buf, 1.0);
  for (std::size_t l = 0; l < a.size(); ++l) {
    EXPECT_EQ(a[l].a, b[l].a);
    EXPECT_EQ(a[l].g, b[l].g);
  }
}

TEST(BatchFactors, WeightsNormalizedToMeanOne) {
  const std::vector<std::uint8_t> mask{0, 0, 1, 1};
  const Vector w = kfac::example_weights(mask, 3.0);
  EXPECT_NEAR(w.mean(), 1.0, 1e-15);
  EXPECT_NEAR(w[2] / w[0], 3.0, 1e-15);
}

TEST(BatchFactors, EmptyBatch) {
  try {
    kfac::example_weights({}, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyBatch);
  }
}

TEST(BatchFactors, SoftmaxFisherDiagonalMatchesAnalyticForm) {
  // One example, one linear softmax layer: diag of A (x) G for weight (i, j)
  // is h_j^2 E[(p_i - y_i)^2] = h_j^2 p_i (1 - p_i).
  nn::Network net = nn::make_linear(3, 4, nn::HeadKind::SoftmaxCE);
  Rng rng(3);
  net.layers[0].weight = oracle::random_matrix(4, 3, rng);
  Matrix h(1, 3);
  h << 0.7, -1.2, 0.4;
  const auto cache = nn::forward(net, h);
  const int draws = 20000;
  const auto fisher = nn::loss_and_grad(net, cache, {}, nn::LabelMode::SampledLabels, rng, draws);
  const std::vector<std::uint8_t> mask{0};
  const auto f = kfac::compute_batch_factors(cache, fisher.backward, mask, 1.0);
  const Matrix p = nn::softmax(cache.outputs);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double pi = p(0, i);
    const double expected = pi * (1.0 - pi);
    // (p_i - y_i)^2 is (1-p_i)^2 w.p. p_i and p_i^2 otherwise.
    const double second = pi * std::pow(1 - pi, 4) + (1 - pi) * std::pow(pi, 4);
    const double se = std::sqrt((second - expected * expected) / draws);
    EXPECT_NEAR(f[0].g(i, i), expected, 4.0 * se) << "class " << i;
  }
  EXPECT_DOUBLE_EQ(f[0].a(1, 1), 1.44);
}

TEST(EmaUpdate, ArithmeticAndAdoption) {
  auto s = kfac::make_state(0.5, 0.0);
  std::vector<kfac::LayerFactors> first{{Matrix::Identity(2, 2), Matrix::Identity(2, 2)}};
  kfac::ema_update(s, first, false);
  EXPECT_EQ(s.layers[0].a_ema, Matrix::Identity(2, 2));
  std::vector<kfac::LayerFactors> second{{3.0 * Matrix::Identity(2, 2), Matrix::Identity(2, 2)}};
  kfac::ema_update(s, second, false);
  EXPECT_EQ(s.layers[0].a_ema, 2.0 * Matrix::Identity(2, 2));
  EXPECT_FALSE(s.inverses_fresh);

  auto full = kfac::make_state(1.0, 0.0);
  kfac::ema_update(full, first, false);
  kfac::ema_update(full, second, false);
  EXPECT_EQ(full.layers[0].a_ema, second[0].a);
}

TEST(EmaUpdate, GrowthResetsLastG) {
  auto s = kfac::make_state(0.25, 0.0);
  std::vector<kfac::LayerFactors> before{{Matrix::Identity(3, 3), Matrix::Identity(4, 4)},
                                         {Matrix::Identity(5, 5), Matrix::Identity(5, 5)}};
  kfac::ema_update(s, before, false);
  Rng rng(4);
  const Matrix g_new = oracle::random_spd(10, rng);
  const Matrix a_new = oracle::random_spd(5, rng);
  std::vector<kfac::LayerFactors> after{{Matrix::Identity(3, 3), Matrix::Identity(4, 4)}, {a_new, g_new}};
  kfac::ema_update(s, after, true);
  EXPECT_EQ(s.layers[1].g_ema, g_new);
  EXPECT_LE(max_abs(s.layers[1].a_ema - (0.75 * Matrix::Identity(5, 5) + 0.25 * a_new)), 1e-15);
}

TEST(EmaUpdate, ShapeMismatchOnHiddenLayer) {
  auto s = kfac::make_state(0.5, 0.0);
  kfac::ema_update(s, {{Matrix::Identity(3, 3), Matrix::Identity(4, 4)}, {Matrix::Identity(5, 5), Matrix::Identity(2, 2)}},
                   false);
  try {
    kfac::ema_update(s, {{Matrix::Identity(3, 3), Matrix::Identity(6, 6)}, {Matrix::Identity(5, 5), Matrix::Identity(2, 2)}},
                     true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(InvertDamped, IdentityCases) {
  auto s = state_with(Matrix::Identity(3, 3), Matrix::Identity(2, 2), 0.0);
  kfac::invert_damped(s);
  EXPECT_EQ(s.layers[0].a_inv, Matrix::Identity(3, 3));
  EXPECT_EQ(s.layers[0].g_inv, Matrix::Identity(2, 2));
  s.tau = 1.0;
  kfac::invert_damped(s);
  EXPECT_DOUBLE_EQ(s.layers[0].pi, 1.0);
  EXPECT_LE(max_abs(s.layers[0].a_inv - 0.5 * Matrix::Identity(3, 3)), 1e-15);
  EXPECT_LE(max_abs(s.layers[0].g_inv - 0.5 * Matrix::Identity(2, 2)), 1e-15);
}

TEST(InvertDamped, PiFollowsTraceRatio) {
  auto s = state_with(4.0 * Matrix::Identity(3, 3), Matrix::Identity(2, 2), 0.25);
  kfac::invert_damped(s);
  EXPECT_DOUBLE_EQ(s.layers[0].pi, 2.0);
  EXPECT_DOUBLE_EQ(s.layers[0].damping_a, 1.0);
  EXPECT_DOUBLE_EQ(s.layers[0].damping_g, 0.25);
  auto extreme = state_with(1e12 * Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1.0);
  kfac::invert_damped(extreme);
  EXPECT_DOUBLE_EQ(extreme.layers[0].pi, 1e3);
}

TEST(InvertDamped, MatchesDenseKroneckerOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index na = 1 + trial % 6, ng = 1 + (trial * 5) % 7;
    auto s = state_with(oracle::random_spd(na, rng, 0.1), oracle::random_spd(ng, rng, 0.1), 0.05);
    kfac::invert_damped(s);
    const Matrix v = oracle::random_matrix(ng, na, rng);
    const auto out = kfac::precondition(s, {v});
    const Matrix dense = kfac::dense_damped_block(s, 0);
    const Vector ref = oracle::gauss_jordan_inverse(dense) * oracle::col_vec(v);
    EXPECT_LE(max_abs(out[0] - oracle::col_unvec(ref, ng, na)), 1e-10);
  }
}

TEST(InvertDamped, EscalatesOnIndefiniteFactor) {
  Matrix a = Matrix::Identity(2, 2);
  a(1, 1) = -1e-6;
  auto s = state_with(a, Matrix::Identity(2, 2), 0.0);
  const int used = kfac::invert_damped_escalating(s, 3);
  EXPECT_GE(used, 1);
  EXPECT_TRUE(s.inverses_fresh);
  EXPECT_GT(s.tau, 0.0);

  Matrix bad = -Matrix::Identity(2, 2);
  auto hopeless = state_with(bad, Matrix::Identity(2, 2), 0.0);
  try {
    kfac::invert_damped_escalating(hopeless, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotPositiveDefinite);
  }
}

TEST(Precondition, StaleInverse) {
  auto s = state_with(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 0.0);
  try {
    kfac::precondition(s, {Matrix::Zero(2, 2)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::StaleInverse);
  }
  kfac::invert_damped(s);
  kfac::ema_update(s, {{Matrix::Identity(2, 2), Matrix::Identity(2, 2)}}, false);
  EXPECT_THROW(kfac::precondition(s, {Matrix::Zero(2, 2)}), Error);
}

TEST(Precondition, IdentityFactorsLeaveGradient) {
  auto s = state_with(Matrix::Identity(4, 4), Matrix::Identity(3, 3), 0.0);
  kfac::invert_damped(s);
  Rng rng(6);
  const Matrix v = oracle::random_matrix(3, 4, rng);
  EXPECT_EQ(kfac::precondition(s, {v})[0], v);
}

TEST(Precondition, EigenOuterProductScaling) {
  Rng rng(7);
  auto s = state_with(oracle::random_spd(4, rng, 0.2), oracle::random_spd(3, rng, 0.2), 0.3);
  kfac::invert_damped(s);
  const auto ea = linalg::sym_eig(s.layers[0].a_ema);
  const auto eg = linalg::sym_eig(s.layers[0].g_ema);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      const Matrix v = eg.vectors.col(j) * ea.vectors.col(i).transpose();
      const Matrix out = kfac::precondition(s, {v})[0];
      const double scale = 1.0 / ((ea.values[i] + s.layers[0].damping_a) * (eg.values[j] + s.layers[0].damping_g));
      EXPECT_LE(max_abs(out - scale * v), 1e-12);
    }
}

TEST(Precondition, Linear) {
  Rng rng(8);
  auto s = state_with(oracle::random_spd(3, rng), oracle::random_spd(2, rng), 0.1);
  kfac::invert_damped(s);
  const Matrix v = oracle::random_matrix(2, 3, rng);
  EXPECT_LE(max_abs(kfac::precondition(s, {-2.5 * v})[0] + 2.5 * kfac::precondition(s, {v})[0]), 1e-13);
}

TEST(Precondition, RegressionLayerMatchesDenseDampedFisher) {
  // Single linear layer on linear-regression inputs with a dense
  // (F + damping)^{-1} grad oracle built from the damped factor block.
  Rng rng(9);
  auto net = nn::make_linear(5, 1, nn::HeadKind::GaussianMSE);
  const Matrix x = oracle::random_matrix(40, 5, rng);
  const auto cache = nn::forward(net, x);
  const auto fisher = nn::loss_and_grad(net, cache, {}, nn::LabelMode::SampledLabels, rng);
  nn::Targets t;
  t.values = oracle::random_matrix(40, 1, rng);
  const auto grad = nn::loss_and_grad(net, cache, t, nn::LabelMode::TrueLabels, rng);
  auto s = kfac::make_state(1.0, 0.01);
  const std::vector<std::uint8_t> mask(40, 0);
  kfac::ema_update(s, kfac::compute_batch_factors(cache, fisher.backward, mask, 1.0), false);
  kfac::invert_damped(s);
  const Matrix out = kfac::precondition(s, grad.backward.grads)[0];
  Matrix a = s.layers[0].a_ema;
  a.diagonal().array() += s.layers[0].damping_a;
  const double g = s.layers[0].g_ema(0, 0) + s.layers[0].damping_g;
  const Vector ref = oracle::gauss_jordan_inverse(g * a) * grad.backward.grads[0].transpose();
  EXPECT_LE(max_abs(out.transpose() - ref), 1e-8);
}

TEST(EffectiveSpectrum, LimitsAndDenseEigenvectors) {
  EXPECT_DOUBLE_EQ(kfac::step_multiplier(0.1, 0.0, 0.01), 10.0);
  const double tau = 0.01, sigma = 100 * tau;
  EXPECT_NEAR(kfac::step_multiplier(0.1, sigma, tau) / (0.1 / sigma), 1.0, 0.01);

  Rng rng(10);
  auto s = state_with(oracle::random_spd(3, rng, 0.1), oracle::random_spd(2, rng, 0.1), 0.2);
  kfac::invert_damped(s);
  const double alpha = 0.3;
  const auto spec = kfac::effective_spectrum(s, 0, alpha);
  const Matrix dense = kfac::dense_damped_block(s, 0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
  const Eigen::Index n = dense.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    const Vector e = es.eigenvectors().col(k);
    const Matrix out = kfac::precondition(s, {oracle::col_unvec(e, 2, 3)})[0];
    const double scaled = alpha * oracle::col_vec(out).norm();
    // Eigen sorts ascending, the spectrum descending.
    EXPECT_NEAR(scaled, spec.multiplier[n - 1 - k], 1e-8);
    EXPECT_NEAR(spec.damped[n - 1 - k], es.eigenvalues()[k], 1e-10);
  }
}

TEST(GradNormRatio, Cases) {
  Rng rng(11);
  const nn::LayerMatrices g{oracle::random_matrix(2, 3, rng)};
  EXPECT_DOUBLE_EQ(kfac::grad_norm_ratio(g, g, 1.0).ratio, 1.0);
  EXPECT_EQ(kfac::grad_norm_ratio(g, g, 0.0).ratio, 0.0);
  const nn::LayerMatrices zero{Matrix::Zero(2, 3)};
  const auto r = kfac::grad_norm_ratio(g, zero, 1.0);
  EXPECT_TRUE(r.zero_raw);
  EXPECT_EQ(r.ratio, 0.0);
}

}  // namespace
