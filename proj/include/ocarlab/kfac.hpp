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

// Block-diagonal Kronecker-factored Fisher with exponential moving averages,
// per-example buffer weighting, and factored Tikhonov damping.
//
// For layer l the curvature block is approximated by A_l (x) G_l. Damping
// tau * I is distributed over the factors as
//
//     (A + pi sqrt(tau) I) (x) (G + sqrt(tau)/pi I),
//     pi = sqrt((tr A / dim A) / (tr G / dim G))  clamped to [1e-3, 1e3],
//
// so the product of the two factor dampings is exactly tau. Preconditioning a
// gradient V = [dW | db] is then G_inv V A_inv.

#include "ocarlab/linalg.hpp"
#include "ocarlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace ocar::kfac {

struct LayerFactors {
  Matrix a;  // (in+1) x (in+1)
  Matrix g;  // out x out
};

struct LayerState {
  Matrix a_ema;
  Matrix g_ema;
  Matrix a_inv;
  Matrix g_inv;
  double pi = 1.0;
  double damping_a = 0.0;
  double damping_g = 0.0;
};

struct KfacState {
  std::vector<LayerState> layers;
  double ema_coeff = 1.0;  // weight of the newest batch
  double tau = 0.0;
  double lambda = 1.0;
  bool initialized = false;
  bool inverses_fresh = false;
};

inline KfacState make_state(double ema_coeff, double tau, double lambda = 1.0) {
  require(ema_coeff > 0.0 && ema_coeff <= 1.0, ErrorKind::InvalidArgument, "EMA coefficient must be in (0, 1]");
  require(tau >= 0.0, ErrorKind::InvalidArgument, "tau must be >= 0");
  KfacState s;
  s.ema_coeff = ema_coeff;
  s.tau = tau;
  s.lambda = lambda;
  return s;
}

/// Identity factors at the network's shapes, marked initialized.
inline KfacState identity_state(const nn::Network& net, double ema_coeff, double tau) {
  KfacState s = make_state(ema_coeff, tau);
  for (const auto& l : net.layers) {
    LayerState ls;
    ls.a_ema = Matrix::Identity(l.in_dim() + 1, l.in_dim() + 1);
    ls.g_ema = Matrix::Identity(l.out_dim(), l.out_dim());
    s.layers.push_back(std::move(ls));
  }
  s.initialized = true;
  return s;
}

/// Per-example weights: lambda for buffer examples, 1 for new ones, rescaled to
/// mean 1 over the batch.
inline Vector example_weights(std::span<const std::uint8_t> buffer_mask, double lambda) {
  require(!buffer_mask.empty(), ErrorKind::EmptyBatch, "no examples to weight");
  require(lambda >= 0.0, ErrorKind::InvalidArgument, "lambda must be >= 0");
  Vector w(static_cast<Eigen::Index>(buffer_mask.size()));
  for (std::size_t n = 0; n < buffer_mask.size(); ++n) w[static_cast<Eigen::Index>(n)] = buffer_mask[n] ? lambda : 1.0;
  const double total = w.sum();
  require(total > 0.0, ErrorKind::InvalidArgument, "all example weights are zero");
  w *= static_cast<double>(w.size()) / total;
  return w;
}

/// Weighted batch estimates A = E_w[a_bar a_bar^T], G = E_w[g g^T] per layer.
/// `fisher` must come from a SampledLabels backward pass.
inline std::vector<LayerFactors> compute_batch_factors(const nn::ForwardCache& cache, const nn::BackwardResult& fisher,
                                                       std::span<const std::uint8_t> buffer_mask, double lambda) {
  const Eigen::Index batch = cache.batch_size();
  require(batch > 0, ErrorKind::EmptyBatch, "cannot estimate factors from an empty batch");
  require(static_cast<Eigen::Index>(buffer_mask.size()) == batch, ErrorKind::ShapeMismatch,
          "buffer mask length " + std::to_string(buffer_mask.size()) + " != batch " + std::to_string(batch));
  const Vector w = example_weights(buffer_mask, lambda);
  const double inv_n = 1.0 / static_cast<double>(batch);
  const int draws = fisher.draws;

  std::vector<LayerFactors> out(cache.inputs_aug.size());
  for (std::size_t l = 0; l < out.size(); ++l) {
    const Matrix& a_bar = cache.inputs_aug[l];
    const Matrix weighted_a = w.asDiagonal() * a_bar;
    out[l].a = inv_n * (a_bar.transpose() * weighted_a);

    const Matrix& g = fisher.output_grads[l];
    require(g.rows() == batch * draws, ErrorKind::ShapeMismatch, "output gradients do not match the batch");
    Matrix gg = Matrix::Zero(g.cols(), g.cols());
    for (int d = 0; d < draws; ++d) {
      const auto block = g.middleRows(d * batch, batch);
      const Matrix weighted_g = w.asDiagonal() * block;
      gg.noalias() += block.transpose() * weighted_g;
    }
    out[l].g = (inv_n / static_cast<double>(draws)) * gg;
  }
  return out;
}

/// F_ema <- (1 - gamma) F_ema + gamma F_batch for every factor. The first call
/// adopts the batch factors. When the classifier grew, the last layer's G is
/// reset to the batch factor while its A keeps averaging.
inline void ema_update(KfacState& state, const std::vector<LayerFactors>& batch, bool classifier_grew) {
  const double gamma = state.ema_coeff;
  if (!state.initialized) {
    state.layers.clear();
    for (const auto& f : batch) {
      LayerState ls;
      ls.a_ema = f.a;
      ls.g_ema = f.g;
      state.layers.push_back(std::move(ls));
    }
    state.initialized = true;
    state.inverses_fresh = false;
    return;
  }
  require(batch.size() == state.layers.size(), ErrorKind::ShapeMismatch, "layer count changed");
  const std::size_t last = batch.size() - 1;
  for (std::size_t l = 0; l < batch.size(); ++l) {
    auto& ls = state.layers[l];
    const auto& f = batch[l];
    require(f.a.rows() == ls.a_ema.rows() && f.a.cols() == ls.a_ema.cols(), ErrorKind::ShapeMismatch,
            "A factor shape changed at layer " + std::to_string(l));
    ls.a_ema = (1.0 - gamma) * ls.a_ema + gamma * f.a;
    const bool g_shape_ok = f.g.rows() == ls.g_ema.rows() && f.g.cols() == ls.g_ema.cols();
    if (l == last && classifier_grew) {
      ls.g_ema = f.g;
    } else {
      require(g_shape_ok, ErrorKind::ShapeMismatch, "G factor shape changed at layer " + std::to_string(l));
      ls.g_ema = (1.0 - gamma) * ls.g_ema + gamma * f.g;
    }
  }
  state.inverses_fresh = false;
}

inline double damping_split(const Matrix& a, const Matrix& g) {
  const double ta = a.trace() / static_cast<double>(a.rows());
  const double tg = g.trace() / static_cast<double>(g.rows());
  const double ratio = ta / tg;
  if (std::isnan(ratio)) return 1.0;
  return std::clamp(std::sqrt(std::max(ratio, 0.0)), 1e-3, 1e3);
}

/// Refreshes the cached damped inverses (A + pi sqrt(tau) I)^{-1} and
/// (G + sqrt(tau)/pi I)^{-1} for every layer.
inline void invert_damped(KfacState& state) {
  require(state.initialized, ErrorKind::StaleInverse, "factors were never estimated");
  const double root_tau = std::sqrt(state.tau);
  for (auto& ls : state.layers) {
    ls.pi = damping_split(ls.a_ema, ls.g_ema);
    ls.damping_a = ls.pi * root_tau;
    ls.damping_g = root_tau / ls.pi;
    Matrix a = ls.a_ema;
    a.diagonal().array() += ls.damping_a;
    Matrix g = ls.g_ema;
    g.diagonal().array() += ls.damping_g;
    ls.a_inv = linalg::spd_inverse(a);
    ls.g_inv = linalg::spd_inverse(g);
  }
  state.inverses_fresh = true;
}

/// invert_damped with the recovery policy for indefinite factors: tau is raised
/// tenfold (from 1e-8 when it is zero) up to `max_escalations` times before the
/// failure is propagated. Returns the number of escalations used.
inline int invert_damped_escalating(KfacState& state, int max_escalations = 3) {
  for (int attempt = 0;; ++attempt) {
    try {
      invert_damped(state);
      return attempt;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NotPositiveDefinite || attempt >= max_escalations) throw;
      state.tau = state.tau > 0.0 ? 10.0 * state.tau : 1e-8;
    }
  }
}

/// Maps every layer gradient V to G_inv V A_inv.
inline nn::LayerMatrices precondition(const KfacState& state, const nn::LayerMatrices& grads) {
  require(state.inverses_fresh, ErrorKind::StaleInverse, "invert_damped not called since the last EMA update");
  require(grads.size() == state.layers.size(), ErrorKind::ShapeMismatch, "gradient layer count mismatch");
  nn::LayerMatrices out;
  out.reserve(grads.size());
  for (std::size_t l = 0; l < grads.size(); ++l) {
    out.push_back(linalg::kron_precondition(state.layers[l].a_inv, state.layers[l].g_inv, grads[l]));
  }
  return out;
}

/// The dense damped block (A + aI) (x) (G + bI) of one layer. Diagnostic only.
inline Matrix dense_damped_block(const KfacState& state, std::size_t layer) {
  const auto& ls = state.layers.at(layer);
  Matrix a = ls.a_ema;
  a.diagonal().array() += ls.damping_a;
  Matrix g = ls.g_ema;
  g.diagonal().array() += ls.damping_g;
  return linalg::kron(a, g);
}

/// alpha / (sigma + tau): the step multiplier along an eigendirection with
/// curvature sigma.
inline double step_multiplier(double alpha, double sigma, double tau) { return alpha / (sigma + tau); }

struct EffectiveSpectrum {
  Vector sigma;       // eigenvalues of the undamped block A (x) G
  Vector tau_eff;     // damping seen by that eigendirection
  Vector damped;      // sigma + tau_eff, eigenvalues of the damped block
  Vector multiplier;  // alpha / (sigma + tau_eff)
};

/// Eigen-analysis of one layer block. The factored damping adds
/// tau_eff = b sigma_A + a sigma_G + tau along the eigenpair (sigma_A, sigma_G),
/// so the undamped eigenvalue is sigma = sigma_A sigma_G. Sorted by damped
/// eigenvalue, descending.
inline EffectiveSpectrum effective_spectrum(const KfacState& state, std::size_t layer, double alpha) {
  const auto& ls = state.layers.at(layer);
  const auto ea = linalg::sym_eig(ls.a_ema);
  const auto eg = linalg::sym_eig(ls.g_ema);
  const Eigen::Index na = ea.values.size();
  const Eigen::Index ng = eg.values.size();
  struct Entry {
    double sigma, damped;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(na * ng));
  for (Eigen::Index i = 0; i < na; ++i)
    for (Eigen::Index j = 0; j < ng; ++j) {
      const double sa = ea.values[i];
      const double sg = eg.values[j];
      entries.push_back({sa * sg, (sa + ls.damping_a) * (sg + ls.damping_g)});
    }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) { return x.damped > y.damped; });
  EffectiveSpectrum out;
  const auto n = static_cast<Eigen::Index>(entries.size());
  out.sigma.resize(n);
  out.tau_eff.resize(n);
  out.damped.resize(n);
  out.multiplier.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& e = entries[static_cast<std::size_t>(k)];
    out.sigma[k] = e.sigma;
    out.damped[k] = e.damped;
    out.tau_eff[k] = e.damped - e.sigma;
    out.multiplier[k] = step_multiplier(alpha, e.sigma, out.tau_eff[k]);
  }
  return out;
}

struct NormRatio {
  double ratio = 0.0;
  bool zero_raw = false;
};

/// ||alpha * preconditioned|| / ||raw|| over all parameters.
inline NormRatio grad_norm_ratio(const nn::LayerMatrices& preconditioned, const nn::LayerMatrices& raw, double alpha) {
  require(preconditioned.size() == raw.size(), ErrorKind::ShapeMismatch, "layer count mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    require(preconditioned[l].rows() == raw[l].rows() && preconditioned[l].cols() == raw[l].cols(),
            ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " shape mismatch");
    num += preconditioned[l].squaredNorm();
    den += raw[l].squaredNorm();
  }
  if (den == 0.0) return {0.0, true};
  return {std::abs(alpha) * std::sqrt(num) / std::sqrt(den), false};
}

inline std::vector<double> factor_traces_a(const KfacState& s) {
  std::vector<double> out;
  for (const auto& l : s.layers) out.push_back(l.a_ema.trace());
  return out;
}

inline std::vector<double> factor_traces_g(const KfacState& s) {
  std::vector<double> out;
  for (const auto& l : s.layers) out.push_back(l.g_ema.trace());
  return out;
}

}  // namespace ocar::kfac
