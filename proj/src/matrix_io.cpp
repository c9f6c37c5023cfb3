// Copyright 2026 The IBKit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ibkit/errors.hpp"
#include "ibkit/tensor.hpp"

namespace ibkit {

namespace {

constexpr std::array<char, 8> kMagic = {'I', 'B', 'M', 'A', 'T', '\0', '\0', '\0'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) {
    throw ValueError("IBMAT: truncated stream");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t encoded_size(const Matrix& m) noexcept {
  return kMatrixHeaderBytes + 8 * m.size();
}

void write_matrix(std::ostream& out, const Matrix& m) {
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  for (double v : m.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw ValueError("IBMAT: write failed");
}

Matrix read_matrix(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ValueError("IBMAT: bad magic");
  }
  const std::uint64_t rows = get_u64(in);
  const std::uint64_t cols = get_u64(in);
  if (rows != 0 && cols > (std::uint64_t{1} << 40) / rows) {
    throw ValueError("IBMAT: implausible shape");
  }
  std::vector<double> data(rows * cols);
  for (double& v : data) v = std::bit_cast<double>(get_u64(in));
  return Matrix(rows, cols, std::move(data));
}

void save_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValueError("cannot open '" + path + "' for writing");
  write_matrix(out, m);
}

Matrix load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("cannot open '" + path + "'");
  return read_matrix(in);
}

}  // namespace ibkit
