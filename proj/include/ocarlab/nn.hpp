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

// Fully connected feed-forward networks with hand-written reverse mode.
//
// Layer parameters are handled in augmented form [W | b] (out x in+1) wherever
// curvature is involved: the layer input a is extended to a_bar = [a, 1] so that
// pre = a_bar * [W | b]^T, and the K-FAC block of the layer is A (x) G with
// A = E[a_bar a_bar^T] and G = E[g g^T].

#include "ocarlab/core.hpp"

#include <cmath>
#include <vector>

namespace ocar::nn {

enum class Activation { ReLU, Identity };
enum class HeadKind { SoftmaxCE, GaussianMSE };
enum class LabelMode { TrueLabels, SampledLabels };

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;

  [[nodiscard]] Eigen::Index in_dim() const { return weight.cols(); }
  [[nodiscard]] Eigen::Index out_dim() const { return weight.rows(); }

  /// [W | b], the matrix the curvature factors act on.
  [[nodiscard]] Matrix augmented() const {
    Matrix out(out_dim(), in_dim() + 1);
    out.leftCols(in_dim()) = weight;
    out.col(in_dim()) = bias;
    return out;
  }
};

struct Network {
  std::vector<Layer> layers;
  HeadKind head = HeadKind::SoftmaxCE;

  [[nodiscard]] Eigen::Index in_dim() const { return layers.front().in_dim(); }
  [[nodiscard]] Eigen::Index out_dim() const { return layers.back().out_dim(); }

  [[nodiscard]] Eigen::Index num_params() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  void validate() const {
    require(!layers.empty(), ErrorKind::InvalidArgument, "network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      require(l.in_dim() >= 1 && l.out_dim() >= 1, ErrorKind::ShapeMismatch, "layer dims must be >= 1");
      require(l.bias.size() == l.out_dim(), ErrorKind::ShapeMismatch, "bias length != out_dim");
      if (i + 1 < layers.size()) {
        require(layers[i + 1].in_dim() == l.out_dim(), ErrorKind::ShapeMismatch,
                "layer " + std::to_string(i + 1) + " in_dim does not match previous out_dim");
      }
    }
    require(layers.back().activation == Activation::Identity, ErrorKind::InvalidArgument,
            "last layer must use the identity activation");
  }
};

/// Per-layer augmented parameter-shaped matrices (out x in+1): gradients,
/// preconditioned directions, and so on.
using LayerMatrices = std::vector<Matrix>;

struct ForwardCache {
  std::vector<Matrix> inputs_aug;       // a_bar per layer, batch x (in+1)
  std::vector<Matrix> pre_activations;  // batch x out
  Matrix outputs;                       // batch x out of the last layer

  [[nodiscard]] Eigen::Index batch_size() const { return outputs.rows(); }
};

struct BackwardResult {
  LayerMatrices grads;  // gradient of the mean loss, per layer (out x in+1)
  /// Gradient of each example's own loss w.r.t. the layer pre-activations; rows
  /// are stacked draw-major (row d * batch + n) when several labels are sampled.
  std::vector<Matrix> output_grads;
  int draws = 1;
};

/// Targets: class indices for SoftmaxCE, row-aligned real vectors for GaussianMSE.
struct Targets {
  std::vector<int> labels;
  Matrix values;

  [[nodiscard]] Eigen::Index size(HeadKind head) const {
    return head == HeadKind::SoftmaxCE ? static_cast<Eigen::Index>(labels.size()) : values.rows();
  }
};

struct LossGrad {
  double loss = 0.0;
  BackwardResult backward;
};

inline Matrix activate(const Matrix& pre, Activation act) {
  if (act == Activation::Identity) return pre;
  return pre.cwiseMax(0.0);
}

/// Builds a network whose layer i maps dims[i] -> dims[i+1]. Hidden layers use
/// ReLU with He-normal weights, the last layer is linear with N(0, 1/in) weights;
/// biases start at zero.
inline Network make_mlp(const std::vector<Eigen::Index>& dims, HeadKind head, Rng& rng) {
  require(dims.size() >= 2, ErrorKind::InvalidArgument, "make_mlp needs at least input and output dims");
  Network net;
  net.head = head;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    Layer l;
    l.activation = last ? Activation::Identity : Activation::ReLU;
    l.weight.resize(dims[i + 1], dims[i]);
    const double stddev = std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(dims[i]));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = stddev * normal(rng);
    l.bias = Vector::Zero(dims[i + 1]);
    net.layers.push_back(std::move(l));
  }
  net.validate();
  return net;
}

/// Single identity-activation layer with all parameters zero (linear regression).
inline Network make_linear(Eigen::Index in_dim, Eigen::Index out_dim, HeadKind head) {
  Network net;
  net.head = head;
  net.layers.push_back(Layer{Matrix::Zero(out_dim, in_dim), Vector::Zero(out_dim), Activation::Identity});
  net.validate();
  return net;
}

inline ForwardCache forward(const Network& net, const Matrix& x) {
  require(x.cols() == net.in_dim(), ErrorKind::ShapeMismatch,
          "input has " + std::to_string(x.cols()) + " columns, network expects " + std::to_string(net.in_dim()));
  ForwardCache cache;
  cache.inputs_aug.reserve(net.layers.size());
  cache.pre_activations.reserve(net.layers.size());
  Matrix a = x;
  for (const auto& layer : net.layers) {
    Matrix aug(a.rows(), a.cols() + 1);
    aug.leftCols(a.cols()) = a;
    aug.col(a.cols()).setOnes();
    Matrix pre = a * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    a = activate(pre, layer.activation);
    cache.inputs_aug.push_back(std::move(aug));
    cache.pre_activations.push_back(std::move(pre));
  }
  cache.outputs = std::move(a);
  return cache;
}

/// Row-wise softmax computed with the max-shift.
inline Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.rows(); ++n) {
    const double m = logits.row(n).maxCoeff();
    p.row(n) = (logits.row(n).array() - m).exp().matrix();
    p.row(n) /= p.row(n).sum();
  }
  return p;
}

/// Mean loss of a batch under the network head (cross-entropy, or half squared
/// error under a unit-variance Gaussian).
inline double head_loss(HeadKind head, const Matrix& outputs, const Targets& targets) {
  const Eigen::Index batch = outputs.rows();
  require(batch > 0, ErrorKind::EmptyBatch, "loss of an empty batch");
  require(targets.size(head) == batch, ErrorKind::ShapeMismatch, "targets do not match batch size");
  double total = 0.0;
  if (head == HeadKind::SoftmaxCE) {
    for (Eigen::Index n = 0; n < batch; ++n) {
      const int y = targets.labels[static_cast<std::size_t>(n)];
      if (y < 0 || y >= outputs.cols()) {
        fail(ErrorKind::InvalidClassIndex, "label " + std::to_string(y) + " with " + std::to_string(outputs.cols()) +
                                               " classifier outputs");
      }
      const double m = outputs.row(n).maxCoeff();
      const double lse = m + std::log((outputs.row(n).array() - m).exp().sum());
      total += lse - outputs(n, y);
    }
  } else {
    require(targets.values.cols() == outputs.cols(), ErrorKind::ShapeMismatch, "regression target width mismatch");
    total = 0.5 * (outputs - targets.values).squaredNorm();
  }
  return total / static_cast<double>(batch);
}

namespace detail {

/// Backpropagates per-example output gradients (stacked `draws` times over the
/// batch) and returns mean-loss parameter gradients.
inline BackwardResult backpropagate(const Network& net, const ForwardCache& cache, Matrix g_out, int draws) {
  const std::size_t n_layers = net.layers.size();
  const Eigen::Index batch = cache.batch_size();
  BackwardResult result;
  result.draws = draws;
  result.grads.resize(n_layers);
  result.output_grads.resize(n_layers);
  const double inv_count = 1.0 / static_cast<double>(batch * draws);

  Matrix g = std::move(g_out);
  for (std::size_t li = n_layers; li-- > 0;) {
    const Layer& layer = net.layers[li];
    const Matrix& a_bar = cache.inputs_aug[li];
    if (draws == 1) {
      result.grads[li] = inv_count * (g.transpose() * a_bar);
    } else {
      Matrix acc = Matrix::Zero(layer.out_dim(), layer.in_dim() + 1);
      for (int d = 0; d < draws; ++d) acc.noalias() += g.middleRows(d * batch, batch).transpose() * a_bar;
      result.grads[li] = inv_count * acc;
    }
    if (li > 0) {
      Matrix g_prev = g * layer.weight;
      const Matrix& pre_prev = cache.pre_activations[li - 1];
      if (net.layers[li - 1].activation == Activation::ReLU) {
        for (int d = 0; d < draws; ++d) {
          auto block = g_prev.middleRows(d * batch, batch);
          block = (pre_prev.array() > 0.0).select(block, 0.0);
        }
      }
      result.output_grads[li] = std::move(g);
      g = std::move(g_prev);
    } else {
      result.output_grads[li] = std::move(g);
    }
  }
  return result;
}

}  // namespace detail

/// Loss and exact reverse-mode gradients of the mean batch loss.
///
/// With LabelMode::SampledLabels the targets are ignored and `draws` labels per
/// example are drawn from the model's own predictive distribution (categorical
/// for SoftmaxCE, N(prediction, I) for GaussianMSE); the resulting output
/// gradients are what the "true" Fisher statistics are built from. The reported
/// loss is then measured against the sampled labels.
inline LossGrad loss_and_grad(const Network& net, const ForwardCache& cache, const Targets& targets, LabelMode mode,
                              Rng& rng, int draws = 1) {
  const Eigen::Index batch = cache.batch_size();
  require(batch > 0, ErrorKind::EmptyBatch, "empty batch");
  require(draws >= 1, ErrorKind::InvalidArgument, "draws must be >= 1");
  const Matrix& out = cache.outputs;
  const Eigen::Index k = out.cols();
  if (mode == LabelMode::TrueLabels) draws = 1;

  LossGrad lg;
  Matrix g(batch * draws, k);
  if (net.head == HeadKind::SoftmaxCE) {
    const Matrix p = softmax(out);
    if (mode == LabelMode::TrueLabels) {
      lg.loss = head_loss(net.head, out, targets);
      g = p;
      for (Eigen::Index n = 0; n < batch; ++n) g(n, targets.labels[static_cast<std::size_t>(n)]) -= 1.0;
    } else {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      double total = 0.0;
      for (int d = 0; d < draws; ++d) {
        for (Eigen::Index n = 0; n < batch; ++n) {
          const double u = unif(rng);
          Eigen::Index y = k - 1;
          double cum = 0.0;
          for (Eigen::Index c = 0; c < k; ++c) {
            cum += p(n, c);
            if (u < cum) {
              y = c;
              break;
            }
          }
          const Eigen::Index row = d * batch + n;
          g.row(row) = p.row(n);
          g(row, y) -= 1.0;
          total += -std::log(std::max(p(n, y), 1e-300));
        }
      }
      lg.loss = total / static_cast<double>(batch * draws);
    }
  } else {
    if (mode == LabelMode::TrueLabels) {
      lg.loss = head_loss(net.head, out, targets);
      g = out - targets.values;
    } else {
      std::normal_distribution<double> normal(0.0, 1.0);
      double total = 0.0;
      for (int d = 0; d < draws; ++d) {
        for (Eigen::Index n = 0; n < batch; ++n) {
          for (Eigen::Index c = 0; c < k; ++c) {
            const double eps = normal(rng);
            g(d * batch + n, c) = -eps;
            total += 0.5 * eps * eps;
          }
        }
      }
      lg.loss = total / static_cast<double>(batch * draws);
    }
  }
  lg.backward = detail::backpropagate(net, cache, std::move(g), draws);
  return lg;
}

/// Grows the classifier to `new_num_classes` outputs. Existing rows are kept
/// bit-exactly; new rows are drawn from N(0, 1/in_dim) with zero bias.
/// Returns whether the classifier grew.
inline bool grow_classifier(Network& net, Eigen::Index new_num_classes, Rng& rng) {
  Layer& last = net.layers.back();
  const Eigen::Index old = last.out_dim();
  if (new_num_classes <= old) return false;
  const Eigen::Index in = last.in_dim();
  Matrix w(new_num_classes, in);
  w.topRows(old) = last.weight;
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  for (Eigen::Index r = old; r < new_num_classes; ++r)
    for (Eigen::Index c = 0; c < in; ++c) w(r, c) = normal(rng);
  Vector b = Vector::Zero(new_num_classes);
  b.head(old) = last.bias;
  last.weight = std::move(w);
  last.bias = std::move(b);
  return true;
}

inline void check_same_shape(const Network& net, const LayerMatrices& direction) {
  require(direction.size() == net.layers.size(), ErrorKind::ShapeMismatch, "direction has wrong layer count");
  for (std::size_t i = 0; i < direction.size(); ++i) {
    const auto& l = net.layers[i];
    require(direction[i].rows() == l.out_dim() && direction[i].cols() == l.in_dim() + 1, ErrorKind::ShapeMismatch,
            "direction for layer " + std::to_string(i) + " is " + shape_str(direction[i].rows(), direction[i].cols()));
  }
}

/// w <- w - step * direction, elementwise, on augmented [W | b] directions.
inline void apply_update(Network& net, const LayerMatrices& direction, double step) {
  check_same_shape(net, direction);
  for (std::size_t i = 0; i < direction.size(); ++i) {
    auto& l = net.layers[i];
    const Eigen::Index in = l.in_dim();
    l.weight -= step * direction[i].leftCols(in);
    l.bias -= step * direction[i].col(in);
  }
}

/// Flat parameter vector: for each layer, W in row-major order followed by b.
inline Vector flatten(const Network& net) {
  Vector out(net.num_params());
  Eigen::Index k = 0;
  for (const auto& l : net.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out[k++] = l.weight(r, c);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out[k++] = l.bias[r];
  }
  return out;
}

inline void unflatten(Network& net, const Vector& params) {
  require(params.size() == net.num_params(), ErrorKind::ShapeMismatch,
          "parameter vector has " + std::to_string(params.size()) + " entries, network needs " +
              std::to_string(net.num_params()));
  Eigen::Index k = 0;
  for (auto& l : net.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = params[k++];
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = params[k++];
  }
}

/// Flattens augmented per-layer matrices in the same order as flatten().
inline Vector flatten(const LayerMatrices& mats) {
  Eigen::Index total = 0;
  for (const auto& m : mats) total += m.size();
  Vector out(total);
  Eigen::Index k = 0;
  for (const auto& m : mats) {
    const Eigen::Index in = m.cols() - 1;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < in; ++c) out[k++] = m(r, c);
    for (Eigen::Index r = 0; r < m.rows(); ++r) out[k++] = m(r, in);
  }
  return out;
}

inline std::vector<int> predict(const Network& net, const Matrix& x) {
  const ForwardCache cache = forward(net, x);
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    Eigen::Index arg = 0;
    cache.outputs.row(n).maxCoeff(&arg);
    out[static_cast<std::size_t>(n)] = static_cast<int>(arg);
  }
  return out;
}

}  // namespace ocar::nn
