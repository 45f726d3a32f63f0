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

#include "ocarlab/replay.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <set>

namespace {

using namespace ocar;

Example item(int id, int cls = -1) {
  Example e;
  e.input = Vector::Constant(1, static_cast<double>(id));
  e.label = id;
  e.class_id = cls;
  return e;
}

int id_of(const Example& e) { return e.label; }

TEST(Reservoir, UnderCapacityKeepsEverythingInOrder) {
  ReplayBuffer buf(10);
  Rng rng(1);
  for (int i = 0; i < 7; ++i) buf.offer(item(i), rng);
  ASSERT_EQ(buf.size(), 7u);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(id_of(buf.items()[static_cast<std::size_t>(i)]), i);
  EXPECT_EQ(buf.seen(), 7u);
}

TEST(Reservoir, NeverExceedsCapacity) {
  ReplayBuffer buf(5);
  Rng rng(2);
  std::vector<Example> batch;
  for (int i = 0; i < 100; ++i) batch.push_back(item(i));
  buf.reservoir_update(batch, rng);
  EXPECT_EQ(buf.size(), 5u);
  EXPECT_EQ(buf.seen(), 100u);
}

TEST(Reservoir, InclusionIsUniform) {
  // After 100 offers into capacity 10 every item is resident w.p. 1/10.
  const int n = 100, reps = 4000;
  std::vector<double> counts(n, 0.0);
  Rng rng(3);
  for (int r = 0; r < reps; ++r) {
    ReplayBuffer buf(10);
    for (int i = 0; i < n; ++i) buf.offer(item(i), rng);
    for (const auto& e : buf.items()) counts[static_cast<std::size_t>(id_of(e))] += 1.0;
  }
  for (double c : counts) EXPECT_NEAR(c / reps, 0.1, 0.03);
  EXPECT_GT(oracle::chi2_pvalue(oracle::chi2_subset_inclusion(counts, reps, 10), n - 1), 1e-3);
}

TEST(Sample, WithoutReplacementIsDistinctAndUniform) {
  ReplayBuffer buf(20);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) buf.offer(item(i), rng);
  std::vector<double> counts(20, 0.0);
  for (int r = 0; r < 5000; ++r) {
    const auto s = buf.sample(5, rng);
    std::set<int> ids;
    for (const auto& e : s) ids.insert(id_of(e));
    EXPECT_EQ(ids.size(), 5u);
    for (int id : ids) counts[static_cast<std::size_t>(id)] += 1.0;
  }
  EXPECT_GT(oracle::chi2_pvalue(oracle::chi2_subset_inclusion(counts, 5000, 5), 19), 1e-3);
}

TEST(Sample, WithReplacementWhenLarger) {
  ReplayBuffer buf(3);
  Rng rng(5);
  for (int i = 0; i < 3; ++i) buf.offer(item(i), rng);
  EXPECT_EQ(buf.sample(10, rng).size(), 10u);
  EXPECT_EQ(buf.sample(0, rng).size(), 0u);
}

TEST(Sample, DeterministicGivenSeed) {
  auto run = [] {
    ReplayBuffer buf(8);
    Rng rng(6);
    for (int i = 0; i < 50; ++i) buf.offer(item(i), rng);
    std::vector<int> ids;
    for (const auto& e : buf.sample(4, rng)) ids.push_back(id_of(e));
    for (const auto& e : buf.items()) ids.push_back(id_of(e));
    return ids;
  };
  EXPECT_EQ(run(), run());
}

TEST(Sample, EmptyBuffer) {
  ReplayBuffer buf(4);
  Rng rng(7);
  try {
    (void)buf.sample(1, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyBuffer);
  }
}

TEST(DistinctClasses, CountsAndMissingInfo) {
  ReplayBuffer buf(10);
  Rng rng(8);
  for (int i = 0; i < 6; ++i) buf.offer(item(i, i % 3), rng);
  EXPECT_EQ(buf.distinct_classes(), 3u);
  ReplayBuffer plain(4);
  plain.offer(item(0), rng);
  try {
    (void)plain.distinct_classes();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoClassInfo);
  }
}

TEST(Dump, OneJsonLinePerItem) {
  ReplayBuffer buf(3);
  Rng rng(9);
  for (int i = 0; i < 3; ++i) buf.offer(item(i, i), rng);
  std::ostringstream os;
  buf.dump_jsonl(os);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["class_id"].get<int>(), n);
    ++n;
  }
  EXPECT_EQ(n, 3);
}

}  // namespace
