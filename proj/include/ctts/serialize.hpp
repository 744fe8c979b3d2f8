// Copyright 2026 The ctts Authors
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
//
// Binary tensor container shared by checkpoints, feature files, style-target
// files and mel outputs. Layout per record:
//   u32 LE name length, UTF-8 name bytes,
//   u32 LE rank, u32 LE dims[rank],
//   row-major float32 LE values.
// Records are concatenated with no global header; a JSON sidecar (written by
// the callers) carries provenance.

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctts/errors.hpp"
#include "ctts/rng.hpp"

namespace ctts {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

struct Tensor {
  std::vector<uint32_t> shape;
  std::vector<double> data;  // row-major

  size_t size() const {
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  static Tensor from_matrix(const Mat& m) {
    Tensor t;
    t.shape = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
    t.data.resize(static_cast<size_t>(m.rows()) * m.cols());
    size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) t.data[k++] = m(r, c);
    return t;
  }

  static Tensor from_vector(const std::vector<double>& v) {
    Tensor t;
    t.shape = {static_cast<uint32_t>(v.size())};
    t.data = v;
    return t;
  }

  Mat to_matrix() const {
    if (shape.size() != 2)
      throw ShapeError("tensor is rank " + std::to_string(shape.size()) +
                       ", expected a matrix");
    Mat m(shape[0], shape[1]);
    size_t k = 0;
    for (uint32_t r = 0; r < shape[0]; ++r)
      for (uint32_t c = 0; c < shape[1]; ++c) m(r, c) = data[k++];
    return m;
  }

  std::vector<double> to_vector() const {
    if (shape.size() != 1)
      throw ShapeError("tensor is rank " + std::to_string(shape.size()) +
                       ", expected a vector");
    return data;
  }
};

using TensorMap = std::map<std::string, Tensor>;

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw FormatError("truncated container (u32)");
  return v;
}

}  // namespace detail

inline std::string encode_tensors(const TensorMap& tensors) {
  std::string out;
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    detail::put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (uint32_t d : t.shape) detail::put_u32(out, d);
    if (t.data.size() != t.size())
      throw ShapeError("tensor '" + name + "' data/shape mismatch");
    for (double x : t.data) {
      float f = static_cast<float>(x);
      out.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  return out;
}

// Replaces the target only after the full write succeeded.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void save_tensors(const std::filesystem::path& path,
                         const TensorMap& tensors) {
  write_file_atomic(path, encode_tensors(tensors));
}

inline TensorMap load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  TensorMap out;
  while (true) {
    int c = in.peek();
    if (c == EOF) break;
    uint32_t name_len = detail::get_u32(in);
    if (name_len > (1u << 20)) throw FormatError("implausible name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError("truncated container (name)");
    uint32_t rank = detail::get_u32(in);
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank));
    Tensor t;
    t.shape.resize(rank);
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      t.shape[i] = detail::get_u32(in);
      n *= t.shape[i];
    }
    t.data.resize(n);
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(n * 4));
    if (!in) throw FormatError("truncated container (data of '" + name + "')");
    for (size_t i = 0; i < n; ++i) t.data[i] = buf[i];
    out[name] = std::move(t);
  }
  return out;
}

inline uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64_bytes(buf, static_cast<size_t>(in.gcount()), h);
    if (!in) break;
  }
  return h;
}

}  // namespace ctts
