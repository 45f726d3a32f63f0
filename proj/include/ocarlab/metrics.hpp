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

// Continual-evaluation metrics. The accuracy matrix stores one row per
// evaluation step with an entry for every task encountered so far.

#include "ocarlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace ocar::metrics {

/// Formula tag written next to WC-Acc so alternative definitions can be
/// recomputed from the persisted matrix.
inline constexpr const char* kWcAccFormula = "mean_t min_{i<=current(t)} acc[t][i]";

struct AccuracyMatrix {
  std::vector<std::int64_t> steps;
  std::vector<std::vector<double>> rows;  // rows[t].size() == tasks encountered by t

  void append(std::int64_t step, std::vector<double> row) {
    steps.push_back(step);
    rows.push_back(std::move(row));
  }
  [[nodiscard]] bool empty() const { return rows.empty(); }
  [[nodiscard]] std::size_t max_tasks() const {
    std::size_t m = 0;
    for (const auto& r : rows) m = std::max(m, r.size());
    return m;
  }

  /// CSV with header "step,task_0,...": undefined entries are left empty.
  void write_csv(std::ostream& os) const {
    const std::size_t k = max_tasks();
    os << "step";
    for (std::size_t i = 0; i < k; ++i) os << ",task_" << i;
    os << '\n';
    for (std::size_t t = 0; t < rows.size(); ++t) {
      os << steps[t];
      for (std::size_t i = 0; i < k; ++i) {
        os << ',';
        if (i < rows[t].size()) os << format_value(rows[t][i]);
      }
      os << '\n';
    }
  }

  static std::string format_value(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
  }
};

namespace detail {
inline void require_rows(const AccuracyMatrix& m) {
  require(!m.empty(), ErrorKind::InvalidArgument, "accuracy matrix has no rows");
}
inline double row_mean(const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v;
  return r.empty() ? 0.0 : s / static_cast<double>(r.size());
}
}  // namespace detail

/// Accuracy of argmax predictions on every encountered task's eval set.
inline std::vector<double> evaluate(const nn::Network& net, const std::vector<const std::vector<Example>*>& eval_sets) {
  std::vector<double> row;
  for (const auto* set : eval_sets) {
    require(set && !set->empty(), ErrorKind::InvalidArgument, "empty eval set");
    const Batch b = to_batch(*set, nn::HeadKind::SoftmaxCE);
    const auto pred = nn::predict(net, b.inputs);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < pred.size(); ++n) correct += pred[n] == b.targets.labels[n] ? 1 : 0;
    row.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));
  }
  return row;
}

/// Mean over tasks of the last row.
inline double final_acc(const AccuracyMatrix& m) {
  detail::require_rows(m);
  return detail::row_mean(m.rows.back());
}

/// Average anytime accuracy: time-average of the per-row mean.
inline double aaa(const AccuracyMatrix& m) {
  detail::require_rows(m);
  double s = 0.0;
  for (const auto& r : m.rows) s += detail::row_mean(r);
  return s / static_cast<double>(m.rows.size());
}

/// Worst-case accuracy: time-average of the per-row minimum (see kWcAccFormula).
inline double wc_acc(const AccuracyMatrix& m) {
  detail::require_rows(m);
  double s = 0.0;
  for (const auto& r : m.rows) s += r.empty() ? 0.0 : *std::min_element(r.begin(), r.end());
  return s / static_cast<double>(m.rows.size());
}

/// Forgetting on the first task: best accuracy ever minus final accuracy.
inline double forgetting_task1(const AccuracyMatrix& m) {
  detail::require_rows(m);
  double best = -std::numeric_limits<double>::infinity();
  std::size_t evaluated = 0;
  for (const auto& r : m.rows) {
    if (r.empty()) continue;
    best = std::max(best, r.front());
    ++evaluated;
  }
  require(evaluated >= 2, ErrorKind::InvalidArgument, "task 1 must be evaluated at least twice");
  return best - m.rows.back().front();
}

/// Accuracy of the last task in the final row.
inline double final_task_acc(const AccuracyMatrix& m) {
  detail::require_rows(m);
  return m.rows.back().back();
}

/// Minimum of task `task` accuracy over rows whose encountered-task count is
/// `while_tasks` (e.g. task 0 during task 1 training).
inline double min_acc_while(const AccuracyMatrix& m, std::size_t task, std::size_t while_tasks) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : m.rows)
    if (r.size() == while_tasks && task < r.size()) best = std::min(best, r[task]);
  return best;
}

struct CumulativeLossTrack {
  double lp = 0.0;
  double ls = 0.0;
  std::vector<double> lp_series;
  std::vector<double> ls_series;

  void write_csv(std::ostream& os) const {
    os << "step,L_p,L_s\n";
    for (std::size_t t = 0; t < lp_series.size(); ++t)
      os << t << ',' << AccuracyMatrix::format_value(lp_series[t]) << ','
         << AccuracyMatrix::format_value(ls_series[t]) << '\n';
  }
};

/// L_p += batch loss, L_s += loss on all data seen so far.
inline void track_cumulative(CumulativeLossTrack& track, double batch_loss, double full_history_loss) {
  track.lp += batch_loss;
  track.ls += full_history_loss;
  track.lp_series.push_back(track.lp);
  track.ls_series.push_back(track.ls);
}

struct ProbeConfig {
  int max_epochs = 200;
  double plateau_tolerance = 1e-7;
};

/// Outputs of the second-to-last layer (post-activation), i.e. the features the
/// classifier sees.
inline Matrix penultimate_features(const nn::Network& net, const Matrix& x) {
  require(net.layers.size() >= 2, ErrorKind::InvalidArgument, "probing needs at least two layers");
  const auto cache = nn::forward(net, x);
  const Matrix& aug = cache.inputs_aug.back();
  return aug.leftCols(aug.cols() - 1);
}

/// Multinomial logistic regression by full-batch gradient descent with step
/// 1 / L, L = lambda_max(E[f f^T]) / 2 a bound on the curvature of the mean
/// cross-entropy. Returns the trained linear head as a one-layer network.
inline nn::Network fit_softmax_regression(const Matrix& features, const std::vector<int>& labels, int num_classes,
                                          const ProbeConfig& cfg = {}) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  require(n > 0, ErrorKind::EmptyBatch, "probe has no training data");
  nn::Network head = nn::make_linear(d, num_classes, nn::HeadKind::SoftmaxCE);
  Matrix aug(n, d + 1);
  aug.leftCols(d) = features;
  aug.col(d).setOnes();
  const Matrix second_moment = (aug.transpose() * aug) / static_cast<double>(n);
  // Power iteration for the top eigenvalue.
  Vector v = Vector::Ones(d + 1).normalized();
  double top = 0.0;
  for (int it = 0; it < 100; ++it) {
    const Vector mv = second_moment * v;
    top = mv.norm();
    if (top == 0.0) break;
    v = mv / top;
  }
  const double step = top > 0.0 ? 2.0 / top : 1.0;
  nn::Targets targets;
  targets.labels = labels;
  Rng unused(0);
  double prev = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto cache = nn::forward(head, features);
    const auto lg = nn::loss_and_grad(head, cache, targets, nn::LabelMode::TrueLabels, unused);
    if (prev - lg.loss < cfg.plateau_tolerance * std::max(1.0, std::abs(prev))) break;
    prev = lg.loss;
    nn::apply_update(head, lg.backward.grads, step);
  }
  return head;
}

/// Probed accuracy: a fresh linear classifier fitted on frozen penultimate
/// features of the training data, scored on the eval data.
inline double linear_probe(const nn::Network& frozen, const std::vector<Example>& train, const std::vector<Example>& eval,
                           int num_classes, const ProbeConfig& cfg = {}) {
  const Batch tr = to_batch(train, nn::HeadKind::SoftmaxCE);
  const Batch ev = to_batch(eval, nn::HeadKind::SoftmaxCE);
  const Matrix f_train = penultimate_features(frozen, tr.inputs);
  const Matrix f_eval = penultimate_features(frozen, ev.inputs);
  const auto head = fit_softmax_regression(f_train, tr.targets.labels, num_classes, cfg);
  const auto pred = nn::predict(head, f_eval);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ev.targets.labels[i] ? 1 : 0;
  return pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace ocar::metrics
