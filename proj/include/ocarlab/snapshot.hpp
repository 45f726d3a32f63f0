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

// Parameter snapshots: `<name>.bin` holds nn::flatten(net) as little-endian
// IEEE-754 doubles, `<name>.json` describes the layer shapes:
//
//   {"head": "softmax_ce", "step": 120, "task": 1,
//    "layers": [{"in": 784, "out": 100, "activation": "relu"}, ...]}

#include "ocarlab/nn.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace ocar::snapshot {

struct Meta {
  std::int64_t step = 0;
  int task = 0;
};

inline nlohmann::json describe(const nn::Network& net, const Meta& meta) {
  nlohmann::json j;
  j["head"] = net.head == nn::HeadKind::SoftmaxCE ? "softmax_ce" : "gaussian_mse";
  j["step"] = meta.step;
  j["task"] = meta.task;
  j["num_params"] = net.num_params();
  for (const auto& l : net.layers) {
    j["layers"].push_back({{"in", l.in_dim()},
                           {"out", l.out_dim()},
                           {"activation", l.activation == nn::Activation::ReLU ? "relu" : "identity"}});
  }
  return j;
}

/// Zero-parameter network with the shapes recorded in a sidecar.
inline nn::Network network_from(const nlohmann::json& j) {
  nn::Network net;
  net.head = j.at("head").get<std::string>() == "softmax_ce" ? nn::HeadKind::SoftmaxCE : nn::HeadKind::GaussianMSE;
  for (const auto& l : j.at("layers")) {
    const auto in = l.at("in").get<Eigen::Index>();
    const auto out = l.at("out").get<Eigen::Index>();
    const auto act = l.at("activation").get<std::string>() == "relu" ? nn::Activation::ReLU : nn::Activation::Identity;
    net.layers.push_back(nn::Layer{Matrix::Zero(out, in), Vector::Zero(out), act});
  }
  net.validate();
  return net;
}

inline void write_le_doubles(std::ostream& os, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(v[i]);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline Vector read_le_doubles(std::istream& is, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) fail(ErrorKind::IoError, "truncated snapshot payload");
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= std::uint64_t{b[k]} << (8 * k);
    v[i] = std::bit_cast<double>(bits);
  }
  return v;
}

/// Writes `<stem>.bin` and `<stem>.json`.
inline void save(const std::filesystem::path& stem, const nn::Network& net, const Meta& meta) {
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) fail(ErrorKind::IoError, "cannot write " + stem.string() + ".bin");
  write_le_doubles(bin, nn::flatten(net));
  std::ofstream side(stem.string() + ".json");
  side << describe(net, meta).dump(2) << '\n';
}

struct Loaded {
  nn::Network net;
  Meta meta;
};

/// Accepts either the stem or the .bin/.json path.
inline Loaded load(std::filesystem::path path) {
  if (path.extension() == ".bin" || path.extension() == ".json") path.replace_extension();
  std::ifstream side(path.string() + ".json");
  if (!side) fail(ErrorKind::IoError, "cannot open " + path.string() + ".json");
  const auto j = nlohmann::json::parse(side);
  Loaded out{network_from(j), {j.value("step", std::int64_t{0}), j.value("task", 0)}};
  std::ifstream bin(path.string() + ".bin", std::ios::binary);
  if (!bin) fail(ErrorKind::IoError, "cannot open " + path.string() + ".bin");
  nn::unflatten(out.net, read_le_doubles(bin, out.net.num_params()));
  return out;
}

}  // namespace ocar::snapshot
