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

#include "ocarlab/data.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <numeric>
#include <ostream>
#include <set>
#include <vector>

namespace ocar {

/// Fixed-capacity reservoir (Vitter's Algorithm R): after `seen` offers every
/// offered item is resident with probability min(1, capacity / seen).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] bool empty() const { return items_.empty(); }
  [[nodiscard]] std::uint64_t seen() const { return seen_; }
  [[nodiscard]] const std::vector<Example>& items() const { return items_; }

  /// One reservoir decision for a single stream item.
  void offer(const Example& item, Rng& rng) {
    ++seen_;
    if (items_.size() < capacity_) {
      items_.push_back(item);
      return;
    }
    if (capacity_ == 0) return;
    std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
    const std::uint64_t j = pick(rng);
    if (j < capacity_) items_[static_cast<std::size_t>(j)] = item;
  }

  void reservoir_update(const std::vector<Example>& batch, Rng& rng) {
    for (const auto& e : batch) offer(e, rng);
  }

  /// m items uniformly without replacement, or with replacement when m exceeds
  /// the buffer size.
  [[nodiscard]] std::vector<Example> sample(std::size_t m, Rng& rng) const {
    require(!items_.empty(), ErrorKind::EmptyBuffer, "sample from an empty buffer");
    std::vector<Example> out;
    out.reserve(m);
    if (m > items_.size()) {
      std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
      for (std::size_t i = 0; i < m; ++i) out.push_back(items_[pick(rng)]);
      return out;
    }
    std::vector<std::size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(items_[idx[i]]);
    }
    return out;
  }

  [[nodiscard]] std::size_t distinct_classes() const {
    std::set<int> classes;
    for (const auto& e : items_) {
      require(e.class_id >= 0, ErrorKind::NoClassInfo, "buffer items carry no class information");
      classes.insert(e.class_id);
    }
    return classes.size();
  }

  /// Debug dump, one JSON object per item.
  void dump_jsonl(std::ostream& os) const {
    for (const auto& e : items_) {
      nlohmann::json j;
      j["label"] = e.label;
      j["class_id"] = e.class_id;
      j["input"] = std::vector<double>(e.input.data(), e.input.data() + e.input.size());
      if (e.target.size() > 0) j["target"] = std::vector<double>(e.target.data(), e.target.data() + e.target.size());
      os << j.dump() << '\n';
    }
  }

 private:
  std::size_t capacity_;
  std::vector<Example> items_;
  std::uint64_t seen_ = 0;
};

}  // namespace ocar
