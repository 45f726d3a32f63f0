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

#include "ocarlab/idx.hpp"
#include "ocarlab/streams.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

namespace {

using namespace ocar;
using namespace ocar::streams;

TEST(LinearStream, OlsRecoversTrueWeights) {
  std::vector<Vector> truth;
  const auto tasks = gen_linear_stream(11, {}, &truth);
  ASSERT_EQ(tasks.size(), 10u);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& train = tasks[t].train;
    ASSERT_EQ(train.size(), 1000u);
    Matrix x(static_cast<Eigen::Index>(train.size()), 10);
    Vector y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      x.row(i) = train[static_cast<std::size_t>(i)].input.transpose();
      y[i] = train[static_cast<std::size_t>(i)].target[0];
    }
    const Vector w = (x.transpose() * x).ldlt().solve(x.transpose() * y);
    EXPECT_LE((w - truth[t]).cwiseAbs().maxCoeff(), 0.05) << "task " << t;
    // Residual variance matches the configured noise.
    const double resid = (x * w - y).squaredNorm() / static_cast<double>(x.rows());
    EXPECT_NEAR(resid, 0.01, 0.003);
  }
}

TEST(LinearStream, DeterministicPerSeed) {
  const auto a = gen_linear_stream(5), b = gen_linear_stream(5), c = gen_linear_stream(6);
  EXPECT_EQ(a[3].train[17].input, b[3].train[17].input);
  EXPECT_NE(a[3].train[17].input, c[3].train[17].input);
}

TEST(Iterator, SinglePassInTaskOrder) {
  LinearStreamConfig cfg;
  cfg.tasks = 3;
  cfg.train_per_task = 25;
  const auto tasks = gen_linear_stream(1, cfg);
  StreamIterator it(tasks, 10, 2);
  EXPECT_EQ(it.total_batches(), 8u);
  std::multiset<double> targets;
  int batches = 0, last_task = 0, firsts = 0;
  while (auto b = it.next()) {
    EXPECT_EQ(b->global_step, batches);
    EXPECT_GE(b->last_task, last_task);
    last_task = b->last_task;
    if (b->is_first_of_task) ++firsts;
    for (const auto& e : b->examples) targets.insert(e.target[0]);
    ++batches;
  }
  EXPECT_EQ(batches, 8);
  EXPECT_EQ(firsts, 3);
  std::multiset<double> expected;
  for (const auto& t : tasks)
    for (const auto& e : t.train) expected.insert(e.target[0]);
  EXPECT_EQ(targets, expected);
  EXPECT_FALSE(it.next().has_value());
}

TEST(ClassIncremental, DisjointClassesAndSplit) {
  const auto ds = make_gaussian_blobs(10, 50, 4, 3.0, 7);
  const auto tasks = gen_class_incremental(ds, 5, 2, 8);
  ASSERT_EQ(tasks.size(), 5u);
  std::set<int> all;
  for (const auto& t : tasks) {
    std::set<int> train_classes, eval_classes;
    for (const auto& e : t.train) {
      train_classes.insert(e.label);
      EXPECT_EQ(e.class_id, e.label);
    }
    for (const auto& e : t.eval) eval_classes.insert(e.label);
    EXPECT_EQ(train_classes, std::set<int>(t.class_set.begin(), t.class_set.end()));
    EXPECT_EQ(eval_classes, train_classes);
    EXPECT_EQ(t.train.size(), 90u);
    EXPECT_EQ(t.eval.size(), 10u);
    for (int c : train_classes) EXPECT_TRUE(all.insert(c).second);
  }
}

TEST(ClassIncremental, InsufficientClasses) {
  const auto ds = make_gaussian_blobs(6, 10, 2, 3.0, 1);
  try {
    gen_class_incremental(ds, 4, 2, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientClasses);
  }
}

LabeledDataset tiny_images(int n, int side, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabeledDataset ds;
  ds.image_side = side;
  ds.inputs.resize(n, side * side);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < side * side; ++j) ds.inputs(i, j) = u(rng);
    ds.labels.push_back(i % 3);
  }
  return ds;
}

TEST(Rotation, HalfTurnTwiceIsIdentity) {
  for (int side : {4, 5, 28}) {
    const auto ds = tiny_images(2, side, 3);
    const Vector img = ds.inputs.row(0).transpose();
    EXPECT_EQ(rotate_image(rotate_image(img, side, 180.0), side, 180.0), img);
    EXPECT_EQ(rotate_image(img, side, 0.0), img);
    // A half turn reverses the pixel order exactly.
    EXPECT_EQ(rotate_image(img, side, 180.0), img.reverse());
  }
}

TEST(Rotation, QuarterTurnHandCase) {
  // [[1,2],[3,4]] turned by +90 degrees in display coordinates -> [[3,1],[4,2]].
  Vector img(4);
  img << 1, 2, 3, 4;
  Vector expected(4);
  expected << 3, 1, 4, 2;
  const Vector got = rotate_image(img, 2, 90.0);
  EXPECT_EQ(got, expected);
  EXPECT_EQ(rotate_image(rotate_image(got, 2, 90.0), 2, 180.0), img);
}

TEST(Rotation, SharedLabelsAcrossTasks) {
  const auto ds = tiny_images(60, 6, 4);
  const auto tasks = gen_rotation_stream(ds, 4, 90.0, 5);
  ASSERT_EQ(tasks.size(), 4u);
  EXPECT_DOUBLE_EQ(tasks[3].domain_param, 90.0);
  EXPECT_DOUBLE_EQ(tasks[1].domain_param, 30.0);
  std::map<int, int> first;
  for (const auto& e : tasks[0].train) ++first[e.label];
  for (const auto& t : tasks) {
    std::map<int, int> h;
    for (const auto& e : t.train) {
      ++h[e.label];
      EXPECT_EQ(e.class_id, -1);
    }
    EXPECT_EQ(h, first);
    EXPECT_EQ(t.train.size() + t.eval.size(), 60u);
  }
}

TEST(Rotation, RejectsNonSquare) {
  auto ds = make_gaussian_blobs(2, 5, 3, 1.0, 1);
  try {
    gen_rotation_stream(ds, 2, 90.0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotSquareInput);
  }
}

TEST(Pooling, AveragesBlocks) {
  LabeledDataset ds;
  ds.image_side = 4;
  ds.inputs.resize(1, 16);
  for (int j = 0; j < 16; ++j) ds.inputs(0, j) = j;
  ds.labels = {0};
  const auto p = pool_images(ds, 2);
  EXPECT_EQ(p.image_side, 2);
  EXPECT_DOUBLE_EQ(p.inputs(0, 0), (0 + 1 + 4 + 5) / 4.0);
  EXPECT_DOUBLE_EQ(p.inputs(0, 3), (10 + 11 + 14 + 15) / 4.0);
}

TEST(Idx, RoundTripAndMnistLoader) {
  const auto dir = std::filesystem::temp_directory_path() / "ocarlab_idx_test";
  std::filesystem::create_directories(dir);
  idx::Array img{{3, 2, 2}, {0, 255, 10, 20, 1, 2, 3, 4, 9, 8, 7, 6}};
  idx::Array lbl{{3}, {4, 1, 7}};
  idx::write_file(dir / "train-images-idx3-ubyte", img);
  idx::write_file(dir / "train-labels-idx1-ubyte", lbl);
  const auto back = idx::read_file(dir / "train-images-idx3-ubyte");
  EXPECT_EQ(back.dims, img.dims);
  EXPECT_EQ(back.data, img.data);
  const auto ds = load_mnist(dir);
  EXPECT_EQ(ds.size(), 3);
  EXPECT_EQ(ds.image_side, 2);
  EXPECT_DOUBLE_EQ(ds.inputs(0, 1), 1.0);
  EXPECT_EQ(ds.labels, (std::vector<int>{4, 1, 7}));
  std::filesystem::remove_all(dir);
}

TEST(Idx, TruncatedPayload) {
  std::stringstream ss;
  idx::write(ss, idx::Array{{4}, {1, 2, 3, 4}});
  std::string s = ss.str();
  s.pop_back();
  std::istringstream is(s);
  try {
    idx::read(is);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoError);
  }
}

}  // namespace
