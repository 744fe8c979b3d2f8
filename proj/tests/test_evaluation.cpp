// Copyright 2026 The ctts Authors
// DTW against brute-force path enumeration; metric closed forms.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ctts/dtw.hpp"
#include "ctts/metrics.hpp"
#include "test_util.hpp"

using namespace ctts;
using ctts_test::random_mat;

namespace {

// Brute-force oracle: enumerate every monotone path from (0,0) to
// (ta-1, tb-1) with steps {(1,0),(0,1),(1,1)} and take the cheapest.
double brute_force_dtw(const Mat& a, const Mat& b) {
  const int ta = static_cast<int>(a.rows());
  const int tb = static_cast<int>(b.rows());
  Mat local(ta, tb);
  for (int i = 0; i < ta; ++i)
    for (int j = 0; j < tb; ++j) local(i, j) = (a.row(i) - b.row(j)).norm();

  double best = std::numeric_limits<double>::infinity();
  std::function<void(int, int, double)> walk = [&](int i, int j, double acc) {
    acc += local(i, j);
    if (i == ta - 1 && j == tb - 1) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < ta && j + 1 < tb) walk(i + 1, j + 1, acc);
    if (i + 1 < ta) walk(i + 1, j, acc);
    if (j + 1 < tb) walk(i, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

Mat col(const std::vector<double>& v) {
  Mat m(static_cast<Eigen::Index>(v.size()), 1);
  for (size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

}  // namespace

TEST_CASE("dtw on identical sequences is the zero-cost diagonal") {
  Rng rng(21);
  Mat a = random_mat(rng, 6, 4);
  auto r = dtw(a, a);
  CHECK(r.total_cost == 0.0);
  REQUIRE(r.path.pairs.size() == 6);
  for (int i = 0; i < 6; ++i)
    CHECK(r.path.pairs[static_cast<size_t>(i)] == std::pair<int, int>{i, i});
}

TEST_CASE("dtw stretches a single frame over a run") {
  auto r = dtw(col({1.0}), col({1.0, 1.0, 1.0}));
  CHECK(r.total_cost == 0.0);
  REQUIRE(r.path.pairs.size() == 3);
  CHECK(r.path.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(r.path.pairs[1] == std::pair<int, int>{0, 1});
  CHECK(r.path.pairs[2] == std::pair<int, int>{0, 2});
}

TEST_CASE("dtw matches brute-force enumeration on random scalar cases") {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    int ta = 1 + static_cast<int>(rng.index(6));
    int tb = 1 + static_cast<int>(rng.index(6));
    Mat a = random_mat(rng, ta, 1, 2.0);
    Mat b = random_mat(rng, tb, 1, 2.0);
    auto r = dtw(a, b);
    double bf = brute_force_dtw(a, b);
    INFO("trial " << trial << " ta=" << ta << " tb=" << tb);
    CHECK(r.total_cost == Catch::Approx(bf).epsilon(1e-12));
    CHECK(path_is_valid(r.path, ta, tb));
    // cost symmetry under euclidean distance
    CHECK(dtw(b, a).total_cost == Catch::Approx(r.total_cost).epsilon(1e-12));
  }
}

TEST_CASE("dtw rejects empty input") {
  CHECK_THROWS_AS(dtw(Mat(0, 1), col({1.0})), ValidationError);
}

TEST_CASE("f0 rmse closed forms") {
  AlignmentPath diag;
  for (int i = 0; i < 5; ++i) diag.pairs.emplace_back(i, i);

  SECTION("identical sequences give zero") {
    std::vector<double> f{100, 110, 0, 120, 130};
    auto r = f0_rmse(f, f, diag);
    CHECK(r.rmse == 0.0);
    CHECK_FALSE(r.no_voiced_overlap);
  }
  SECTION("constant offset on all-voiced sequences equals the offset") {
    std::vector<double> gt{100, 110, 120, 130, 140};
    std::vector<double> pred;
    for (double g : gt) pred.push_back(g + 10.0);
    auto r = f0_rmse(pred, gt, diag);
    CHECK(std::abs(r.rmse - 10.0) < 1e-9);
  }
  SECTION("mixed voicing masks unvoiced pairs") {
    // voiced overlap at 0, 2, 4 -> diffs 3, 4, 5
    std::vector<double> pred{103, 0, 104, 50, 105};
    std::vector<double> gt{100, 110, 100, 0, 100};
    auto r = f0_rmse(pred, gt, diag);
    double expect = std::sqrt((9.0 + 16.0 + 25.0) / 3.0);
    CHECK(r.rmse == Catch::Approx(expect).epsilon(1e-12));
  }
  SECTION("no voiced overlap flags the report") {
    std::vector<double> pred{0, 0, 0, 0, 0};
    std::vector<double> gt{100, 110, 100, 90, 100};
    auto r = f0_rmse(pred, gt, diag);
    CHECK(r.rmse == 0.0);
    CHECK(r.no_voiced_overlap);
  }
  SECTION("length mismatch with path") {
    std::vector<double> four{1, 2, 3, 4};
    std::vector<double> five{1, 2, 3, 4, 5};
    CHECK_THROWS_AS(f0_rmse(four, five, diag), ShapeError);
  }
}

TEST_CASE("energy rmse closed forms") {
  AlignmentPath diag;
  for (int i = 0; i < 4; ++i) diag.pairs.emplace_back(i, i);
  std::vector<double> gt{1.0, 2.0, 3.0, 4.0};

  CHECK(energy_rmse(gt, gt, diag) == 0.0);

  std::vector<double> off;
  for (double g : gt) off.push_back(g + 0.5);
  CHECK(std::abs(energy_rmse(off, gt, diag) - 0.5) < 1e-9);

  // random 4-frame case, hand-computed
  std::vector<double> pred{1.3, 1.6, 3.2, 4.9};
  double expect = std::sqrt((0.09 + 0.16 + 0.04 + 0.81) / 4.0);
  CHECK(energy_rmse(pred, gt, diag) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("duration mse in log domain") {
  CHECK(duration_mse({3, 1, 4}, {3, 1, 4}) == 0.0);

  // one phoneme: pred = e-1, gt = 0 -> (log e - log 1)^2 = 1
  CHECK(duration_mse({std::exp(1.0) - 1.0}, {0.0}) ==
        Catch::Approx(1.0).epsilon(1e-12));

  // random M=4, hand-computed
  std::vector<double> pred{2, 0, 5, 7};
  std::vector<double> gt{3, 1, 5, 4};
  double expect = (std::pow(std::log(3) - std::log(4), 2) +
                   std::pow(std::log(1) - std::log(2), 2) + 0.0 +
                   std::pow(std::log(8) - std::log(5), 2)) /
                  4.0;
  CHECK(duration_mse(pred, gt) == Catch::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(duration_mse({1, 2}, {1, 2, 3}), ShapeError);

  // raw-domain variant
  CHECK(duration_mse_raw(pred, gt) ==
        Catch::Approx((1.0 + 1.0 + 0.0 + 9.0) / 4.0).epsilon(1e-12));
}

TEST_CASE("mcd closed forms and oracle") {
  SECTION("identical mels give exactly zero") {
    Rng rng(23);
    Mat mel = random_mat(rng, 4, 80);
    CHECK(mcd(mel, mel) == 0.0);
  }
  SECTION("unit cepstral distance gives (10/ln10)*sqrt(2)") {
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(13);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(13);
    b(4) = 1.0;
    double expect = (10.0 / std::log(10.0)) * std::sqrt(2.0);
    CHECK(std::abs(mcd_from_cepstra_pair(a, b) - expect) < 1e-9);
  }
  SECTION("single-frame mel pair built from a unit cepstral direction") {
    // construct mel difference as the inverse DCT of a unit cepstral vector;
    // linearity of the transform makes the cepstral distance exactly 1
    const int C = 80;
    Mat dct(13, C);
    const double s = std::sqrt(2.0 / C);
    for (int k = 1; k <= 13; ++k)
      for (int n = 0; n < C; ++n)
        dct(k - 1, n) = s * std::cos(M_PI * (2.0 * n + 1.0) * k / (2.0 * C));
    // orthonormal rows: dct * dct^T = I, so dct^T maps unit cepstra back
    Eigen::RowVectorXd unit = Eigen::RowVectorXd::Zero(13);
    unit(2) = 1.0;
    Mat base = Mat::Constant(1, C, 0.25);
    Mat shifted = base + unit * dct;
    double expect = (10.0 / std::log(10.0)) * std::sqrt(2.0);
    CHECK(mcd(shifted, base) == Catch::Approx(expect).epsilon(1e-9));
  }
  SECTION("random 3x80 vs 4x80 equals brute-force path enumeration") {
    Rng rng(24);
    Mat a = random_mat(rng, 3, 80);
    Mat b = random_mat(rng, 4, 80);
    Mat ca = mel_to_cepstra(a), cb = mel_to_cepstra(b);
    // enumerate all monotone paths over the cepstra and average the pair
    // distortion along the cheapest-cost alignment chosen by the same
    // objective the implementation optimizes (euclidean cepstral distance)
    auto r = dtw(ca, cb);
    CHECK(brute_force_dtw(ca, cb) == Catch::Approx(r.total_cost).epsilon(1e-12));
    double sum = 0.0;
    for (auto [i, j] : r.path.pairs)
      sum += mcd_from_cepstra_pair(ca.row(i), cb.row(j));
    CHECK(mcd(a, b) == Catch::Approx(sum / r.path.pairs.size()).epsilon(1e-12));
  }
  SECTION("channel mismatch raises shape error") {
    CHECK_THROWS_AS(mcd(Mat::Zero(2, 80), Mat::Zero(2, 40)), ShapeError);
  }
}

TEST_CASE("dtw tie-break prefers the diagonal predecessor") {
  // all-equal sequences make every predecessor tie; the path must be the
  // pure diagonal rather than an L-shaped walk
  Mat a = Mat::Ones(4, 1);
  Mat b = Mat::Ones(4, 1);
  auto r = dtw(a, b);
  REQUIRE(r.path.pairs.size() == 4);
  for (int i = 0; i < 4; ++i)
    CHECK(r.path.pairs[static_cast<size_t>(i)] == std::pair<int, int>{i, i});
}
