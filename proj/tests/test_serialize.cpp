// Copyright 2026 The ctts Authors
// Tensor container round trips and RNG determinism.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "ctts/rng.hpp"
#include "ctts/serialize.hpp"
#include "test_util.hpp"

using namespace ctts;
namespace fs = std::filesystem;

TEST_CASE("tensor container round trip") {
  Rng rng(41);
  Mat m = ctts_test::random_mat(rng, 7, 5);
  TensorMap tm;
  tm["weights"] = Tensor::from_matrix(m);
  tm["offsets"] = Tensor::from_vector({1.5, -2.25, 3.0});

  fs::path p = fs::temp_directory_path() / "ctts_container_test.bin";
  save_tensors(p, tm);
  TensorMap back = load_tensors(p);
  REQUIRE(back.size() == 2);
  Mat m2 = back["weights"].to_matrix();
  REQUIRE(m2.rows() == 7);
  // float32 storage: exact for values that fit a float
  CHECK((m.cast<float>().cast<double>() - m2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back["offsets"].to_vector() == std::vector<double>{1.5, -2.25, 3.0});
  fs::remove(p);
}

TEST_CASE("save is deterministic byte-for-byte") {
  TensorMap tm;
  tm["a"] = Tensor::from_vector({0.25, 0.5});
  tm["b"] = Tensor::from_vector({1.0});
  std::string one = encode_tensors(tm);
  std::string two = encode_tensors(tm);
  CHECK(one == two);
}

TEST_CASE("truncated container is rejected") {
  TensorMap tm;
  tm["x"] = Tensor::from_vector({1.0, 2.0, 3.0});
  std::string bytes = encode_tensors(tm);
  fs::path p = fs::temp_directory_path() / "ctts_trunc_test.bin";
  write_file_atomic(p, bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_tensors(p), FormatError);
  fs::remove(p);
}

TEST_CASE("float32 round trip through double is exact") {
  // double -> float32 -> double -> float32 yields identical bytes
  std::vector<double> vals = {0.1, -3.14159, 1e-8, 12345.678};
  TensorMap tm;
  tm["v"] = Tensor::from_vector(vals);
  std::string first = encode_tensors(tm);

  fs::path p = fs::temp_directory_path() / "ctts_f32_test.bin";
  write_file_atomic(p, first);
  TensorMap loaded = load_tensors(p);
  std::string second = encode_tensors(loaded);
  CHECK(first == second);
  fs::remove(p);
}

TEST_CASE("rng streams are deterministic and tag-separated") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());

  Rng c = Rng::tagged(7, "alpha");
  Rng d = Rng::tagged(7, "beta");
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ = differ || (c.uniform() != d.uniform());
  CHECK(differ);

  // normal() through Box-Muller is reproducible
  Rng e(11), f(11);
  for (int i = 0; i < 50; ++i) REQUIRE(e.normal() == f.normal());
}

TEST_CASE("fnv1a64 matches reference vectors") {
  // reference: FNV-1a 64-bit of empty string and "a"
  CHECK(fnv1a64_bytes("", 0) == 0xcbf29ce484222325ull);
  CHECK(fnv1a64_bytes("a", 1) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  // embedded NULs are hashed, not treated as terminators
  std::string with_nul("a\0b", 3);
  CHECK(fnv1a64(with_nul) != fnv1a64("a"));
}
