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

// IDX container (the MNIST distribution format): two zero bytes, a type code
// (0x08 = unsigned byte), the number of dimensions, then each dimension as a
// big-endian uint32, then the row-major payload.

#include "ocarlab/core.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace ocar::idx {

struct Array {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  [[nodiscard]] std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }
};

inline std::uint32_t read_be32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::IoError, "truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline Array read(std::istream& is) {
  unsigned char magic[4];
  if (!is.read(reinterpret_cast<char*>(magic), 4)) fail(ErrorKind::IoError, "truncated IDX magic");
  if (magic[0] != 0 || magic[1] != 0) fail(ErrorKind::IoError, "bad IDX magic");
  if (magic[2] != 0x08) fail(ErrorKind::IoError, "only unsigned-byte IDX payloads are supported");
  Array out;
  for (int i = 0; i < magic[3]; ++i) out.dims.push_back(read_be32(is));
  out.data.resize(out.count());
  if (!out.data.empty() && !is.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.data.size()))) {
    fail(ErrorKind::IoError, "truncated IDX payload");
  }
  return out;
}

inline Array read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::IoError, "cannot open " + path.string());
  return read(is);
}

inline void write(std::ostream& os, const Array& a) {
  const unsigned char magic[4] = {0, 0, 0x08, static_cast<unsigned char>(a.dims.size())};
  os.write(reinterpret_cast<const char*>(magic), 4);
  for (auto d : a.dims) write_be32(os, d);
  os.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size()));
}

inline void write_file(const std::filesystem::path& path, const Array& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::IoError, "cannot write " + path.string());
  write(os, a);
}

}  // namespace ocar::idx
