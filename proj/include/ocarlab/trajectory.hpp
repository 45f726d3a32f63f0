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

// 2-D projections of a training trajectory: the plane through the initial
// weights w0, the weights after the first task w1 and the final weights wN,
// with an orthonormal basis obtained by Gram-Schmidt on u = w1 - w0 and
// v = wN - w0.

#include "ocarlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <vector>

namespace ocar::trajectory {

struct ProjectionBasis {
  Vector origin;
  Vector u_hat;
  Vector v_hat;
};

inline ProjectionBasis build_basis(const Vector& w0, const Vector& w1, const Vector& wN) {
  require(w0.size() == w1.size() && w0.size() == wN.size(), ErrorKind::ShapeMismatch, "snapshot sizes differ");
  const Vector u = w1 - w0;
  const Vector v = wN - w0;
  const double un = u.norm();
  if (un < 1e-10) fail(ErrorKind::DegenerateDirections, "w1 coincides with w0");
  ProjectionBasis b;
  b.origin = w0;
  b.u_hat = u / un;
  // Two Gram-Schmidt passes keep u_hat . v_hat at rounding level in high dimension.
  Vector r = v - v.dot(b.u_hat) * b.u_hat;
  if (r.norm() < 1e-10) fail(ErrorKind::DegenerateDirections, "wN - w0 is parallel to w1 - w0");
  r -= r.dot(b.u_hat) * b.u_hat;
  b.v_hat = r / r.norm();
  return b;
}

struct Coords {
  double x = 0.0;
  double y = 0.0;
};

inline Coords coords(const Vector& w, const ProjectionBasis& b) {
  require(w.size() == b.origin.size(), ErrorKind::ShapeMismatch, "snapshot size does not match the basis");
  const Vector d = w - b.origin;
  return {d.dot(b.u_hat), d.dot(b.v_hat)};
}

inline Vector point(const ProjectionBasis& b, double x, double y) { return b.origin + x * b.u_hat + y * b.v_hat; }

struct GridSpec {
  double x_min = -1.0;
  double x_max = 1.0;
  double y_min = -1.0;
  double y_max = 1.0;
  int nx = 41;
  int ny = 41;

  [[nodiscard]] double x_at(int i) const { return nx == 1 ? x_min : x_min + (x_max - x_min) * i / (nx - 1); }
  [[nodiscard]] double y_at(int j) const { return ny == 1 ? y_min : y_min + (y_max - y_min) * j / (ny - 1); }
};

/// Grid covering `scale` times the bounding box of the projected points,
/// centred on the box.
inline GridSpec grid_around(const std::vector<Coords>& pts, int resolution = 41, double scale = 1.2) {
  require(!pts.empty(), ErrorKind::InvalidArgument, "no trajectory points");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& p : pts) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  const double hx = std::max(0.5 * (x1 - x0) * scale, 1e-6), hy = std::max(0.5 * (y1 - y0) * scale, 1e-6);
  return {cx - hx, cx + hx, cy - hy, cy + hy, resolution, resolution};
}

struct SurfaceGrid {
  GridSpec spec;
  int tasks = 0;
  /// loss[(j * nx + i) * (tasks + 1) + k]: task k, or k == tasks for the average.
  std::vector<double> loss;

  [[nodiscard]] double at(int i, int j, int k) const {
    return loss[(static_cast<std::size_t>(j) * spec.nx + i) * (tasks + 1) + k];
  }

  void write_csv(std::ostream& os) const {
    os << "x,y";
    for (int k = 0; k < tasks; ++k) os << ",loss_task_" << k;
    os << ",loss_avg\n";
    os << std::setprecision(17);
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i) {
        os << spec.x_at(i) << ',' << spec.y_at(j);
        for (int k = 0; k <= tasks; ++k) os << ',' << at(i, j, k);
        os << '\n';
      }
  }
};

/// Mean eval loss of one task set at the given parameters.
inline double eval_loss(const nn::Network& net, const std::vector<Example>& set) {
  const Batch b = to_batch(set, net.head);
  const auto cache = nn::forward(net, b.inputs);
  return nn::head_loss(net.head, cache.outputs, b.targets);
}

/// Per-task eval losses (plus their average) at w0 + x u_hat + y v_hat for every
/// grid cell, in row-major (y outer) order.
inline SurfaceGrid surface(const ProjectionBasis& basis, const GridSpec& spec,
                           const std::vector<std::vector<Example>>& eval_per_task, const nn::Network& net_template) {
  require(spec.nx >= 2 && spec.ny >= 2, ErrorKind::InvalidArgument, "grid resolution must be >= 2 per axis");
  require(!eval_per_task.empty(), ErrorKind::InvalidArgument, "no eval sets");
  SurfaceGrid grid;
  grid.spec = spec;
  grid.tasks = static_cast<int>(eval_per_task.size());
  grid.loss.resize(static_cast<std::size_t>(spec.nx) * spec.ny * (grid.tasks + 1));
  nn::Network net = net_template;
  for (int j = 0; j < spec.ny; ++j) {
    for (int i = 0; i < spec.nx; ++i) {
      nn::unflatten(net, point(basis, spec.x_at(i), spec.y_at(j)));
      const std::size_t base = (static_cast<std::size_t>(j) * spec.nx + i) * (grid.tasks + 1);
      double sum = 0.0;
      for (int k = 0; k < grid.tasks; ++k) {
        const double l = eval_loss(net, eval_per_task[static_cast<std::size_t>(k)]);
        grid.loss[base + k] = l;
        sum += l;
      }
      grid.loss[base + grid.tasks] = sum / grid.tasks;
    }
  }
  return grid;
}

}  // namespace ocar::trajectory
