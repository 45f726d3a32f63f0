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

// Nonstationary single-pass task streams.

#include "ocarlab/data.hpp"
#include "ocarlab/idx.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

namespace ocar::streams {

struct TaskSpec {
  int task_id = 0;
  std::vector<Example> train;
  std::vector<Example> eval;
  std::vector<int> class_set;  // class-incremental streams
  double domain_param = 0.0;   // rotation angle in degrees for rotation streams
};

/// A labeled classification dataset; `image_side` is set when rows are square images.
struct LabeledDataset {
  Matrix inputs;
  std::vector<int> labels;
  int image_side = 0;

  [[nodiscard]] Eigen::Index size() const { return inputs.rows(); }
  [[nodiscard]] int num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }
};

// ---------------------------------------------------------------------------
// Linear-regression task sequence

struct LinearStreamConfig {
  int tasks = 10;
  int train_per_task = 1000;
  int eval_per_task = 200;
  int dim = 10;
  double noise_variance = 0.01;
  double min_eigenvalue = 0.1;
  double max_eigenvalue = 10.0;
};

/// Tasks with their own input Gaussian (random rotation, log-uniform spectrum,
/// N(0, I) mean) and their own true weights w ~ N(0, I); y = x^T w + noise.
/// The true weights of task t are returned through `true_weights` when given.
inline std::vector<TaskSpec> gen_linear_stream(std::uint64_t seed, const LinearStreamConfig& cfg = {},
                                               std::vector<Vector>* true_weights = nullptr) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(std::log(cfg.min_eigenvalue), std::log(cfg.max_eigenvalue));
  const double noise_sd = std::sqrt(cfg.noise_variance);
  const Eigen::Index d = cfg.dim;

  std::vector<TaskSpec> tasks;
  if (true_weights) true_weights->clear();
  for (int t = 0; t < cfg.tasks; ++t) {
    Matrix gauss(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) gauss(i, j) = normal(rng);
    const Eigen::HouseholderQR<Matrix> qr(gauss);
    const Matrix q = qr.householderQ();
    Vector root_eig(d);
    for (Eigen::Index i = 0; i < d; ++i) root_eig[i] = std::sqrt(std::exp(unif(rng)));
    // x = mean + Q diag(sqrt(eig)) z  has covariance Q diag(eig) Q^T.
    const Matrix transform = q * root_eig.asDiagonal();
    Vector mean(d);
    for (Eigen::Index i = 0; i < d; ++i) mean[i] = normal(rng);
    Vector w(d);
    for (Eigen::Index i = 0; i < d; ++i) w[i] = normal(rng);
    if (true_weights) true_weights->push_back(w);

    TaskSpec spec;
    spec.task_id = t;
    auto draw = [&] {
      Vector z(d);
      for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
      Example e;
      e.input = mean + transform * z;
      e.target = Vector::Constant(1, e.input.dot(w) + noise_sd * normal(rng));
      return e;
    };
    for (int i = 0; i < cfg.train_per_task; ++i) spec.train.push_back(draw());
    for (int i = 0; i < cfg.eval_per_task; ++i) spec.eval.push_back(draw());
    tasks.push_back(std::move(spec));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Classification datasets

/// Isotropic Gaussian blobs: class means ~ N(0, separation^2 I), unit noise.
inline LabeledDataset make_gaussian_blobs(int n_classes, int per_class, int dim, double separation,
                                          std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> means;
  for (int c = 0; c < n_classes; ++c) {
    Vector m(dim);
    for (int i = 0; i < dim; ++i) m[i] = separation * normal(rng);
    means.push_back(m);
  }
  LabeledDataset ds;
  ds.inputs.resize(static_cast<Eigen::Index>(n_classes) * per_class, dim);
  Eigen::Index row = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (int k = 0; k < per_class; ++k, ++row) {
      for (int i = 0; i < dim; ++i) ds.inputs(row, i) = means[static_cast<std::size_t>(c)][i] + normal(rng);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

/// Loads `<prefix>-images-idx3-ubyte` / `<prefix>-labels-idx1-ubyte` for the
/// prefixes "train" and (when present) "t10k", concatenated, pixels scaled to [0, 1].
inline LabeledDataset load_mnist(const std::filesystem::path& dir) {
  LabeledDataset ds;
  std::vector<std::uint8_t> pixels;
  int rows = 0;
  int cols = 0;
  for (const char* prefix : {"train", "t10k"}) {
    const auto img_path = dir / (std::string(prefix) + "-images-idx3-ubyte");
    const auto lbl_path = dir / (std::string(prefix) + "-labels-idx1-ubyte");
    if (!std::filesystem::exists(img_path)) {
      if (std::string(prefix) == "train") fail(ErrorKind::IoError, "missing " + img_path.string());
      continue;
    }
    const auto img = idx::read_file(img_path);
    const auto lbl = idx::read_file(lbl_path);
    if (img.dims.size() != 3 || lbl.dims.size() != 1 || img.dims[0] != lbl.dims[0]) {
      fail(ErrorKind::IoError, "inconsistent IDX files in " + dir.string());
    }
    if (rows == 0) {
      rows = static_cast<int>(img.dims[1]);
      cols = static_cast<int>(img.dims[2]);
    } else if (rows != static_cast<int>(img.dims[1]) || cols != static_cast<int>(img.dims[2])) {
      fail(ErrorKind::IoError, "image sizes differ between IDX files");
    }
    pixels.insert(pixels.end(), img.data.begin(), img.data.end());
    for (auto l : lbl.data) ds.labels.push_back(l);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(ds.labels.size());
  const Eigen::Index d = static_cast<Eigen::Index>(rows) * cols;
  ds.inputs.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) ds.inputs(i, j) = pixels[static_cast<std::size_t>(i * d + j)] / 255.0;
  ds.image_side = rows == cols ? rows : 0;
  return ds;
}

/// Downsamples square images by averaging `factor` x `factor` pixel blocks.
inline LabeledDataset pool_images(const LabeledDataset& ds, int factor) {
  require(ds.image_side > 0 && ds.image_side % factor == 0, ErrorKind::NotSquareInput,
          "pooling needs square images with side divisible by the factor");
  if (factor == 1) return ds;
  const int side = ds.image_side / factor;
  LabeledDataset out;
  out.labels = ds.labels;
  out.image_side = side;
  out.inputs = Matrix::Zero(ds.size(), static_cast<Eigen::Index>(side) * side);
  const double inv = 1.0 / (factor * factor);
  for (Eigen::Index n = 0; n < ds.size(); ++n)
    for (int r = 0; r < ds.image_side; ++r)
      for (int c = 0; c < ds.image_side; ++c)
        out.inputs(n, (r / factor) * side + c / factor) += inv * ds.inputs(n, r * ds.image_side + c);
  return out;
}

namespace detail {

/// Per-class seeded 90/10 split; returns (train, eval) row indices per class.
inline std::vector<std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>> split_by_class(
    const LabeledDataset& ds, double eval_fraction, Rng& rng) {
  const int k = ds.num_classes();
  std::vector<std::vector<Eigen::Index>> rows(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < ds.size(); ++i) rows[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
  std::vector<std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    auto& r = rows[static_cast<std::size_t>(c)];
    std::shuffle(r.begin(), r.end(), rng);
    const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(r.size())));
    out[static_cast<std::size_t>(c)].second.assign(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(n_eval));
    out[static_cast<std::size_t>(c)].first.assign(r.begin() + static_cast<std::ptrdiff_t>(n_eval), r.end());
  }
  return out;
}

inline Example make_example(const LabeledDataset& ds, Eigen::Index row, bool class_info) {
  Example e;
  e.input = ds.inputs.row(row).transpose();
  e.label = ds.labels[static_cast<std::size_t>(row)];
  e.class_id = class_info ? e.label : -1;
  return e;
}

}  // namespace detail

/// Class-incremental split: classes are assigned in label order to consecutive
/// tasks, each class split 90/10 into train/eval.
inline std::vector<TaskSpec> gen_class_incremental(const LabeledDataset& ds, int n_tasks, int classes_per_task,
                                                   std::uint64_t seed, double eval_fraction = 0.1) {
  require(n_tasks >= 1 && classes_per_task >= 1, ErrorKind::InvalidArgument, "need at least one task and class");
  if (n_tasks * classes_per_task > ds.num_classes()) {
    fail(ErrorKind::InsufficientClasses, std::to_string(n_tasks) + " x " + std::to_string(classes_per_task) +
                                             " classes requested, dataset has " + std::to_string(ds.num_classes()));
  }
  Rng rng(seed);
  const auto split = detail::split_by_class(ds, eval_fraction, rng);
  std::vector<TaskSpec> tasks;
  for (int t = 0; t < n_tasks; ++t) {
    TaskSpec spec;
    spec.task_id = t;
    for (int c = t * classes_per_task; c < (t + 1) * classes_per_task; ++c) {
      spec.class_set.push_back(c);
      for (auto row : split[static_cast<std::size_t>(c)].first) spec.train.push_back(detail::make_example(ds, row, true));
      for (auto row : split[static_cast<std::size_t>(c)].second) spec.eval.push_back(detail::make_example(ds, row, true));
    }
    tasks.push_back(std::move(spec));
  }
  return tasks;
}

/// Nearest-neighbour rotation of a square image about its centre; pixels that
/// map outside the source are zero.
inline Vector rotate_image(const Vector& img, int side, double degrees) {
  require(static_cast<Eigen::Index>(side) * side == img.size(), ErrorKind::NotSquareInput, "image is not square");
  if (degrees == 0.0) return img;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const double centre = (side - 1) / 2.0;
  Vector out = Vector::Zero(img.size());
  for (int r = 0; r < side; ++r) {
    for (int col = 0; col < side; ++col) {
      // Inverse map destination -> source.
      const double y = r - centre;
      const double x = col - centre;
      const double sx = c * x + s * y + centre;
      const double sy = -s * x + c * y + centre;
      const long ir = std::lround(sy);
      const long ic = std::lround(sx);
      if (ir >= 0 && ir < side && ic >= 0 && ic < side) out[r * side + col] = img[ir * side + ic];
    }
  }
  return out;
}

/// Domain-incremental stream: every task holds the whole base dataset rotated by
/// t * max_angle / (n_tasks - 1) degrees, with one shared train/eval split.
inline std::vector<TaskSpec> gen_rotation_stream(const LabeledDataset& base, int n_tasks, double max_angle,
                                                 std::uint64_t seed, double eval_fraction = 0.1) {
  require(base.image_side > 0 && static_cast<Eigen::Index>(base.image_side) * base.image_side == base.inputs.cols(),
          ErrorKind::NotSquareInput, "rotation streams need square images");
  require(n_tasks >= 1, ErrorKind::InvalidArgument, "need at least one task");
  Rng rng(seed);
  const auto split = detail::split_by_class(base, eval_fraction, rng);
  std::vector<TaskSpec> tasks;
  for (int t = 0; t < n_tasks; ++t) {
    TaskSpec spec;
    spec.task_id = t;
    spec.domain_param = n_tasks == 1 ? 0.0 : t * max_angle / (n_tasks - 1);
    for (const auto& [train_rows, eval_rows] : split) {
      for (auto row : train_rows) {
        auto e = detail::make_example(base, row, false);
        e.input = rotate_image(e.input, base.image_side, spec.domain_param);
        spec.train.push_back(std::move(e));
      }
      for (auto row : eval_rows) {
        auto e = detail::make_example(base, row, false);
        e.input = rotate_image(e.input, base.image_side, spec.domain_param);
        spec.eval.push_back(std::move(e));
      }
    }
    tasks.push_back(std::move(spec));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Single-pass iterator

struct StreamBatch {
  std::vector<Example> examples;
  std::int64_t global_step = 0;
  bool is_first_of_task = false;  // diagnostics only
  int last_task = 0;              // task of the last example; diagnostics only
};

/// Yields every training example exactly once: tasks in order, examples
/// shuffled within each task, consecutive chunks of `batch_size` (a batch may
/// straddle a task boundary).
class StreamIterator {
 public:
  StreamIterator(const std::vector<TaskSpec>& tasks, int batch_size, std::uint64_t seed)
      : tasks_(&tasks), batch_size_(batch_size) {
    require(batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1");
    Rng rng(seed);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      std::vector<std::size_t> idx(tasks[t].train.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      for (auto i : idx) order_.emplace_back(t, i);
    }
  }

  [[nodiscard]] std::size_t total_batches() const {
    return (order_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
  }
  [[nodiscard]] std::size_t total_examples() const { return order_.size(); }

  std::optional<StreamBatch> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    StreamBatch b;
    b.global_step = step_++;
    const std::size_t end = std::min(order_.size(), pos_ + static_cast<std::size_t>(batch_size_));
    for (std::size_t k = pos_; k < end; ++k) {
      const auto [t, i] = order_[k];
      if (k == 0 || order_[k - 1].first != t) b.is_first_of_task = true;
      b.examples.push_back((*tasks_)[t].train[i]);
      b.last_task = static_cast<int>(t);
    }
    pos_ = end;
    return b;
  }

 private:
  const std::vector<TaskSpec>* tasks_;
  int batch_size_;
  std::vector<std::pair<std::size_t, std::size_t>> order_;
  std::size_t pos_ = 0;
  std::int64_t step_ = 0;
};

}  // namespace ocar::streams
