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

// Online continual strategies. Each one consumes a new-data batch plus a batch
// drawn from the replay buffer and updates the network in place:
//
//   ER    plain SGD on the mean loss of the concatenated batch
//   OCAR  the same gradient preconditioned by damped K-FAC factors whose buffer
//         examples are weighted by lambda; tau and lambda follow schedules
//   EWC   ER plus an online diagonal-Fisher penalty on the step-to-step motion
//   NGD   ER gradient preconditioned by an EMA of the (dense or K-FAC) Fisher

#include "ocarlab/data.hpp"
#include "ocarlab/kfac.hpp"
#include "ocarlab/replay.hpp"

#include <deque>
#include <memory>
#include <set>
#include <string>

namespace ocar::strategies {

enum class LambdaMode { ClassRatio, TimeGrowth, Fixed };

struct HyperParams {
  double alpha = 0.01;
  double delta_tau = 0.0;
  /// Per-step lambda increase in TimeGrowth mode; negative means "same as delta_tau".
  double delta_lambda = -1.0;
  double ema_coeff = 0.1;
  int inner_steps = 1;
  int new_batch_size = 10;
  int buffer_batch_size = 10;
  LambdaMode lambda_mode = LambdaMode::Fixed;
  double lambda_fixed = 1.0;
  /// Classes per stream portion for ClassRatio; 0 estimates it from recent batches.
  int classes_per_task = 0;
  /// Initial tau; negative means tau starts at alpha.
  double tau_init = -1.0;
  int fisher_samples = 1;
  /// Replace the estimated factors by identities (reduction to ER).
  bool identity_factors = false;

  // Baselines.
  double ewc_penalty = 0.0;
  double ewc_ema = 0.1;
  double ngd_damping = 1e-3;
  double ngd_ema = 0.1;
  /// Dense full Fisher for NGD instead of K-FAC (small models only).
  bool ngd_dense = true;

  [[nodiscard]] double effective_delta_lambda() const { return delta_lambda < 0.0 ? delta_tau : delta_lambda; }
  [[nodiscard]] double initial_tau() const { return tau_init < 0.0 ? alpha : tau_init; }

  void validate() const {
    require(alpha > 0.0, ErrorKind::InvalidArgument, "alpha must be > 0");
    require(delta_tau >= 0.0, ErrorKind::InvalidArgument, "delta_tau must be >= 0");
    require(ema_coeff > 0.0 && ema_coeff <= 1.0, ErrorKind::InvalidArgument, "ema_coeff must be in (0, 1]");
    require(ewc_ema > 0.0 && ewc_ema <= 1.0, ErrorKind::InvalidArgument, "ewc_ema must be in (0, 1]");
    require(ngd_ema > 0.0 && ngd_ema <= 1.0, ErrorKind::InvalidArgument, "ngd_ema must be in (0, 1]");
    require(inner_steps >= 1, ErrorKind::InvalidArgument, "inner_steps must be >= 1");
    require(new_batch_size >= 1, ErrorKind::InvalidArgument, "new_batch_size must be >= 1");
    require(buffer_batch_size >= 0, ErrorKind::InvalidArgument, "buffer_batch_size must be >= 0");
    require(fisher_samples >= 1, ErrorKind::InvalidArgument, "fisher_samples must be >= 1");
    require(ewc_penalty >= 0.0 && ngd_damping >= 0.0, ErrorKind::InvalidArgument, "penalties must be >= 0");
  }
};

/// Buffer-weight schedule.
///   ClassRatio  lambda = n / k, n distinct buffer classes, k classes per portion
///   TimeGrowth  lambda <- lambda + delta every inner step, starting at 1
///   Fixed       constant
class LambdaSchedule {
 public:
  static constexpr std::size_t kEstimateWindow = 20;

  LambdaSchedule(LambdaMode mode, double fixed_value, double delta, int classes_per_task)
      : mode_(mode), fixed_(fixed_value), delta_(delta), classes_per_task_(classes_per_task) {
    value_ = mode == LambdaMode::Fixed ? fixed_value : 1.0;
  }

  /// Records the classes of a new-data batch (used when k is estimated).
  void observe_new_batch(const std::vector<int>& class_ids) {
    std::set<int> s;
    for (int c : class_ids)
      if (c >= 0) s.insert(c);
    recent_.push_back(std::move(s));
    if (recent_.size() > kEstimateWindow) recent_.pop_front();
  }

  [[nodiscard]] int estimated_k() const {
    if (classes_per_task_ > 0) return classes_per_task_;
    std::set<int> all;
    for (const auto& s : recent_) all.insert(s.begin(), s.end());
    return static_cast<int>(all.size());
  }

  /// Advances one inner step and returns the new lambda.
  double step(const ReplayBuffer& buffer) {
    switch (mode_) {
      case LambdaMode::Fixed:
        value_ = fixed_;
        break;
      case LambdaMode::TimeGrowth:
        value_ += delta_;
        break;
      case LambdaMode::ClassRatio:
        value_ = class_ratio(buffer.empty() ? 0 : buffer.distinct_classes(), estimated_k());
        break;
    }
    return value_;
  }

  [[nodiscard]] double value() const { return value_; }
  [[nodiscard]] LambdaMode mode() const { return mode_; }

  /// n / k, or 1 when either count is zero.
  static double class_ratio(std::size_t n, int k) {
    if (n == 0 || k <= 0) return 1.0;
    return static_cast<double>(n) / static_cast<double>(k);
  }

 private:
  LambdaMode mode_;
  double fixed_;
  double delta_;
  int classes_per_task_;
  double value_ = 1.0;
  std::deque<std::set<int>> recent_;
};

/// Everything a strategy may look at for one inner step. Task identity is
/// deliberately absent.
struct StepContext {
  int inner_index = 0;           // 0-based s
  bool classifier_grew = false;  // true on the first inner step after growth
  const ReplayBuffer* buffer = nullptr;
};

struct StepInfo {
  double loss = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  double grad_norm_ratio = 1.0;
  bool zero_raw_gradient = false;
  int escalations = 0;
  std::vector<double> trace_a;
  std::vector<double> trace_g;
};

/// Mask with 1 for rows that came from the buffer (they follow the new rows).
inline std::vector<std::uint8_t> buffer_mask(const Batch& new_batch, const Batch& buf_batch) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(new_batch.size() + buf_batch.size()), 0);
  for (std::size_t i = static_cast<std::size_t>(new_batch.size()); i < mask.size(); ++i) mask[i] = 1;
  return mask;
}

/// One SGD step on the mean loss over the concatenated batch.
inline double er_step(nn::Network& net, const Batch& new_batch, const Batch& buf_batch, double alpha) {
  const Batch joint = concat(new_batch, buf_batch);
  require(!joint.empty(), ErrorKind::EmptyBatch, "er_step with no data");
  const auto cache = nn::forward(net, joint.inputs);
  Rng unused(0);
  const auto lg = nn::loss_and_grad(net, cache, joint.targets, nn::LabelMode::TrueLabels, unused);
  nn::apply_update(net, lg.backward.grads, alpha);
  return lg.loss;
}

/// OCAR optimizer state: K-FAC factors plus the tau and lambda schedules.
struct OcarState {
  kfac::KfacState kfac;
  LambdaSchedule lambda;
  Rng fisher_rng;

  OcarState(const HyperParams& hp, std::uint64_t seed)
      : kfac(kfac::make_state(hp.ema_coeff, hp.initial_tau())),
        lambda(hp.lambda_mode, hp.lambda_fixed, hp.effective_delta_lambda(), hp.classes_per_task),
        fisher_rng(seed) {}
};

/// One inner step s of the OCAR loop: tau <- tau + delta_tau, lambda from its
/// schedule, factors re-estimated (sampled labels, lambda-weighted buffer rows),
/// averaged and inverted on s = 0 only, then w <- w - alpha * F_inv grad.
inline StepInfo ocar_step(nn::Network& net, OcarState& st, const Batch& new_batch, const Batch& buf_batch,
                          const HyperParams& hp, const StepContext& ctx) {
  const Batch joint = concat(new_batch, buf_batch);
  require(!joint.empty(), ErrorKind::EmptyBatch, "ocar_step with no data");
  const auto cache = nn::forward(net, joint.inputs);
  const auto lg = nn::loss_and_grad(net, cache, joint.targets, nn::LabelMode::TrueLabels, st.fisher_rng);

  StepInfo info;
  st.kfac.tau += hp.delta_tau;
  static const ReplayBuffer kNoBuffer(0);
  st.kfac.lambda = st.lambda.step(ctx.buffer ? *ctx.buffer : kNoBuffer);

  if (ctx.inner_index == 0 || !st.kfac.inverses_fresh) {
    if (hp.identity_factors) {
      const double tau = st.kfac.tau;
      const double gamma = st.kfac.ema_coeff;
      const double lambda = st.kfac.lambda;
      st.kfac = kfac::identity_state(net, gamma, tau);
      st.kfac.lambda = lambda;
    } else {
      const auto fisher =
          nn::loss_and_grad(net, cache, joint.targets, nn::LabelMode::SampledLabels, st.fisher_rng, hp.fisher_samples);
      const auto mask = buffer_mask(new_batch, buf_batch);
      const auto factors = kfac::compute_batch_factors(cache, fisher.backward, mask, st.kfac.lambda);
      kfac::ema_update(st.kfac, factors, ctx.classifier_grew);
    }
    info.escalations = kfac::invert_damped_escalating(st.kfac);
  }

  const auto direction = kfac::precondition(st.kfac, lg.backward.grads);
  const auto ratio = kfac::grad_norm_ratio(direction, lg.backward.grads, hp.alpha);
  nn::apply_update(net, direction, hp.alpha);

  info.loss = lg.loss;
  info.tau = st.kfac.tau;
  info.lambda = st.kfac.lambda;
  info.grad_norm_ratio = ratio.ratio;
  info.zero_raw_gradient = ratio.zero_raw;
  info.trace_a = kfac::factor_traces_a(st.kfac);
  info.trace_g = kfac::factor_traces_g(st.kfac);
  return info;
}

/// Online EWC state: per-parameter diagonal Fisher EMA and the previous step's
/// weights, both laid out as augmented per-layer matrices.
struct EwcState {
  nn::LayerMatrices fisher;
  nn::LayerMatrices prev_weights;
  double penalty = 0.0;
  double ema = 0.1;

  /// Matches the state to the network shapes; new classifier rows get zero
  /// Fisher and their current weights as anchor.
  void fit_to(const nn::Network& net) {
    fisher.resize(net.layers.size());
    prev_weights.resize(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const Matrix w = net.layers[l].augmented();
      if (fisher[l].size() == 0) {
        fisher[l] = Matrix::Zero(w.rows(), w.cols());
        prev_weights[l] = w;
      } else if (fisher[l].rows() != w.rows()) {
        const Eigen::Index old = fisher[l].rows();
        Matrix f = Matrix::Zero(w.rows(), w.cols());
        f.topRows(old) = fisher[l];
        Matrix p = w;
        p.topRows(old) = prev_weights[l];
        fisher[l] = std::move(f);
        prev_weights[l] = std::move(p);
      }
    }
  }
};

/// Mean over examples of the squared per-example gradient of every parameter
/// (the empirical-Fisher diagonal).
inline nn::LayerMatrices empirical_fisher_diagonal(const nn::Network& net, const Batch& batch) {
  const auto cache = nn::forward(net, batch.inputs);
  Rng unused(0);
  const auto lg = nn::loss_and_grad(net, cache, batch.targets, nn::LabelMode::TrueLabels, unused);
  nn::LayerMatrices out(net.layers.size());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t l = 0; l < out.size(); ++l) {
    const Matrix g2 = lg.backward.output_grads[l].array().square().matrix();
    const Matrix a2 = cache.inputs_aug[l].array().square().matrix();
    out[l] = inv_n * (g2.transpose() * a2);
  }
  return out;
}

/// ER step on [loss + penalty * sum_i F_i (w_i - w_prev_i)^2]. The Fisher EMA is
/// refreshed from the buffer batch before the step; w_prev then becomes the
/// pre-step weights.
inline double ewc_online_step(nn::Network& net, EwcState& st, const Batch& new_batch, const Batch& buf_batch,
                              double alpha) {
  st.fit_to(net);
  if (!buf_batch.empty()) {
    const auto fb = empirical_fisher_diagonal(net, buf_batch);
    for (std::size_t l = 0; l < fb.size(); ++l) st.fisher[l] = (1.0 - st.ema) * st.fisher[l] + st.ema * fb[l];
  }
  const Batch joint = concat(new_batch, buf_batch);
  require(!joint.empty(), ErrorKind::EmptyBatch, "ewc_online_step with no data");
  const auto cache = nn::forward(net, joint.inputs);
  Rng unused(0);
  auto lg = nn::loss_and_grad(net, cache, joint.targets, nn::LabelMode::TrueLabels, unused);
  nn::LayerMatrices direction = lg.backward.grads;
  nn::LayerMatrices pre_step(net.layers.size());
  double penalty_value = 0.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    pre_step[l] = net.layers[l].augmented();
    if (st.penalty != 0.0) {
      const Matrix diff = pre_step[l] - st.prev_weights[l];
      direction[l] += (2.0 * st.penalty) * st.fisher[l].cwiseProduct(diff);
      penalty_value += st.penalty * (st.fisher[l].cwiseProduct(diff.cwiseProduct(diff))).sum();
    }
  }
  nn::apply_update(net, direction, alpha);
  st.prev_weights = std::move(pre_step);
  return lg.loss + penalty_value;
}

/// NGD state: a dense Fisher EMA over all parameters, or K-FAC factors with
/// fixed damping and unit buffer weight for larger networks.
struct NgdState {
  bool dense = true;
  Matrix fisher;
  bool fisher_initialized = false;
  kfac::KfacState kfac;
  double damping = 1e-3;
  double ema = 0.1;
  Rng fisher_rng;

  NgdState(bool dense_mode, double damping_value, double ema_coeff, std::uint64_t seed)
      : dense(dense_mode),
        kfac(kfac::make_state(ema_coeff, damping_value)),
        damping(damping_value),
        ema(ema_coeff),
        fisher_rng(seed) {}
};

/// Mean outer product of per-example score vectors, parameters ordered like
/// nn::flatten.
inline Matrix dense_fisher(const nn::ForwardCache& cache, const nn::BackwardResult& fisher) {
  const Eigen::Index batch = cache.batch_size();
  const int draws = fisher.draws;
  Eigen::Index p = 0;
  for (const auto& g : fisher.grads) p += g.size();
  Matrix scores(batch * draws, p);
  for (int d = 0; d < draws; ++d) {
    for (Eigen::Index n = 0; n < batch; ++n) {
      Eigen::Index k = 0;
      for (std::size_t l = 0; l < fisher.grads.size(); ++l) {
        const auto& a = cache.inputs_aug[l];
        const auto& g = fisher.output_grads[l];
        const Eigen::Index in = a.cols() - 1;
        const Eigen::Index row = d * batch + n;
        for (Eigen::Index r = 0; r < g.cols(); ++r)
          for (Eigen::Index c = 0; c < in; ++c) scores(row, k++) = g(row, r) * a(n, c);
        for (Eigen::Index r = 0; r < g.cols(); ++r) scores(row, k++) = g(row, r);
      }
    }
  }
  Matrix f = scores.transpose() * scores;
  f /= static_cast<double>(batch * draws);
  return f;
}

inline nn::LayerMatrices unflatten_like(const Vector& flat, const nn::LayerMatrices& like) {
  nn::LayerMatrices out;
  Eigen::Index k = 0;
  for (const auto& m : like) {
    Matrix x(m.rows(), m.cols());
    const Eigen::Index in = m.cols() - 1;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < in; ++c) x(r, c) = flat[k++];
    for (Eigen::Index r = 0; r < m.rows(); ++r) x(r, in) = flat[k++];
    out.push_back(std::move(x));
  }
  return out;
}

/// Joint gradient preconditioned by (F_ema + damping I)^{-1}.
inline StepInfo ngd_step(nn::Network& net, NgdState& st, const Batch& new_batch, const Batch& buf_batch, double alpha,
                         bool classifier_grew, int fisher_samples = 1) {
  const Batch joint = concat(new_batch, buf_batch);
  require(!joint.empty(), ErrorKind::EmptyBatch, "ngd_step with no data");
  const auto cache = nn::forward(net, joint.inputs);
  const auto lg = nn::loss_and_grad(net, cache, joint.targets, nn::LabelMode::TrueLabels, st.fisher_rng);
  const auto fisher =
      nn::loss_and_grad(net, cache, joint.targets, nn::LabelMode::SampledLabels, st.fisher_rng, fisher_samples);

  nn::LayerMatrices direction;
  if (st.dense) {
    const Matrix fb = dense_fisher(cache, fisher.backward);
    if (!st.fisher_initialized || st.fisher.rows() != fb.rows()) {
      st.fisher = fb;
      st.fisher_initialized = true;
    } else {
      st.fisher = (1.0 - st.ema) * st.fisher + st.ema * fb;
    }
    Matrix damped = st.fisher;
    damped.diagonal().array() += st.damping;
    const Matrix inv = linalg::spd_inverse(damped);
    const Vector g = nn::flatten(lg.backward.grads);
    direction = unflatten_like(inv * g, lg.backward.grads);
  } else {
    const std::vector<std::uint8_t> mask(static_cast<std::size_t>(joint.size()), 0);
    const auto factors = kfac::compute_batch_factors(cache, fisher.backward, mask, 1.0);
    kfac::ema_update(st.kfac, factors, classifier_grew);
    st.kfac.tau = st.damping;
    kfac::invert_damped(st.kfac);
    direction = kfac::precondition(st.kfac, lg.backward.grads);
  }
  const auto ratio = kfac::grad_norm_ratio(direction, lg.backward.grads, alpha);
  nn::apply_update(net, direction, alpha);
  StepInfo info;
  info.loss = lg.loss;
  info.tau = st.damping;
  info.lambda = 1.0;
  info.grad_norm_ratio = ratio.ratio;
  info.zero_raw_gradient = ratio.zero_raw;
  return info;
}

enum class StrategyKind { ER, OCAR, EWC, NGD };

inline std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::ER: return "er";
    case StrategyKind::OCAR: return "ocar";
    case StrategyKind::EWC: return "ewc";
    case StrategyKind::NGD: return "ngd";
  }
  return "?";
}

/// Uniform driver-facing wrapper around the four step functions.
class Strategy {
 public:
  Strategy(StrategyKind kind, const HyperParams& hp, std::uint64_t seed)
      : kind_(kind), hp_(hp), ocar_(hp, seed), ngd_(hp.ngd_dense, hp.ngd_damping, hp.ngd_ema, seed) {
    hp_.validate();
    ewc_.penalty = hp.ewc_penalty;
    ewc_.ema = hp.ewc_ema;
  }

  [[nodiscard]] StrategyKind kind() const { return kind_; }
  [[nodiscard]] const HyperParams& hyper_params() const { return hp_; }
  [[nodiscard]] const OcarState& ocar_state() const { return ocar_; }

  void observe_new_batch(const Batch& new_batch) { ocar_.lambda.observe_new_batch(new_batch.class_ids); }

  StepInfo step(nn::Network& net, const Batch& new_batch, const Batch& buf_batch, const StepContext& ctx) {
    switch (kind_) {
      case StrategyKind::ER: {
        StepInfo info;
        info.loss = er_step(net, new_batch, buf_batch, hp_.alpha);
        return info;
      }
      case StrategyKind::OCAR:
        return ocar_step(net, ocar_, new_batch, buf_batch, hp_, ctx);
      case StrategyKind::EWC: {
        StepInfo info;
        info.loss = ewc_online_step(net, ewc_, new_batch, buf_batch, hp_.alpha);
        return info;
      }
      case StrategyKind::NGD:
        return ngd_step(net, ngd_, new_batch, buf_batch, hp_.alpha, ctx.classifier_grew && ctx.inner_index == 0,
                        hp_.fisher_samples);
    }
    return {};
  }

 private:
  StrategyKind kind_;
  HyperParams hp_;
  OcarState ocar_;
  EwcState ewc_;
  NgdState ngd_;
};

}  // namespace ocar::strategies
