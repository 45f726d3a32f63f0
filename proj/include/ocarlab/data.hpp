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

#include "ocarlab/nn.hpp"

#include <vector>

namespace ocar {

/// One stream item. `label` is used by classification heads, `target` by
/// regression heads; `class_id` is -1 when the stream carries no class
/// information (domain-incremental and regression streams).
struct Example {
  Vector input;
  int label = -1;
  Vector target;
  int class_id = -1;
};

/// Row-stacked examples in the form the network consumes.
struct Batch {
  Matrix inputs;
  nn::Targets targets;
  std::vector<int> class_ids;

  [[nodiscard]] Eigen::Index size() const { return inputs.rows(); }
  [[nodiscard]] bool empty() const { return inputs.rows() == 0; }
};

inline Batch to_batch(const std::vector<Example>& examples, nn::HeadKind head) {
  Batch b;
  if (examples.empty()) return b;
  const Eigen::Index n = static_cast<Eigen::Index>(examples.size());
  b.inputs.resize(n, examples.front().input.size());
  if (head == nn::HeadKind::GaussianMSE) b.targets.values.resize(n, examples.front().target.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = examples[static_cast<std::size_t>(i)];
    b.inputs.row(i) = e.input.transpose();
    if (head == nn::HeadKind::SoftmaxCE) {
      b.targets.labels.push_back(e.label);
    } else {
      b.targets.values.row(i) = e.target.transpose();
    }
    b.class_ids.push_back(e.class_id);
  }
  return b;
}

/// Concatenates two batches row-wise (either may be empty).
inline Batch concat(const Batch& first, const Batch& second) {
  if (first.empty()) return second;
  if (second.empty()) return first;
  require(first.inputs.cols() == second.inputs.cols(), ErrorKind::ShapeMismatch, "batch input widths differ");
  Batch out;
  out.inputs.resize(first.size() + second.size(), first.inputs.cols());
  out.inputs << first.inputs, second.inputs;
  out.targets.labels = first.targets.labels;
  out.targets.labels.insert(out.targets.labels.end(), second.targets.labels.begin(), second.targets.labels.end());
  if (first.targets.values.size() > 0 || second.targets.values.size() > 0) {
    out.targets.values.resize(first.size() + second.size(), first.targets.values.cols());
    out.targets.values << first.targets.values, second.targets.values;
  }
  out.class_ids = first.class_ids;
  out.class_ids.insert(out.class_ids.end(), second.class_ids.begin(), second.class_ids.end());
  return out;
}

}  // namespace ocar
