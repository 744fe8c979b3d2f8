// Copyright 2026 The ctts Authors
// Length regulator, variance adaptor, loss arithmetic, style sensitivity.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ctts/acoustic_model.hpp"
#include "test_util.hpp"

using namespace ctts;
using ctts_test::fd_check;
using ctts_test::fd_ok;
using ctts_test::random_mat;
namespace a = ctts::ad;

namespace {

AcousticConfig tiny_config() {
  AcousticConfig cfg;
  cfg.vocab_size = 12;
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.conv_filter = 32;
  cfg.max_frames = 256;
  return cfg;
}

VarianceTargets make_targets(const std::vector<int>& dur) {
  VarianceTargets t;
  t.duration = dur;
  for (size_t i = 0; i < dur.size(); ++i) {
    t.pitch.push_back(0.2 * static_cast<double>(i) - 0.3);
    t.energy.push_back(0.1 * static_cast<double>(i) + 0.05);
  }
  return t;
}

}  // namespace

TEST_CASE("length_regulate repeats rows by duration") {
  Mat f(3, 2);
  f << 1, 2, 3, 4, 5, 6;

  SECTION("unit durations are the identity") {
    CHECK(length_regulate(f, {1, 1, 1}) == f);
  }
  SECTION("zero drops, larger duplicates") {
    Mat out = length_regulate(f.topRows(2), {0, 2});
    REQUIRE(out.rows() == 2);
    CHECK(out.row(0) == f.row(1));
    CHECK(out.row(1) == f.row(1));
  }
  SECTION("random case equals naive repetition") {
    Rng rng(61);
    Mat feats = random_mat(rng, 5, 7);
    std::vector<int> dur = {2, 0, 3, 1, 4};
    Mat out = length_regulate(feats, dur);
    // brute-force oracle: per-row push_back
    std::vector<Eigen::RowVectorXd> rows;
    for (size_t m = 0; m < dur.size(); ++m)
      for (int k = 0; k < dur[m]; ++k)
        rows.push_back(feats.row(static_cast<Eigen::Index>(m)));
    REQUIRE(out.rows() == static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i)
      CHECK(out.row(static_cast<Eigen::Index>(i)) == rows[i]);
  }
  SECTION("total multiset and length preserved") {
    Rng rng(62);
    Mat feats = random_mat(rng, 4, 3);
    std::vector<int> dur = {3, 1, 0, 2};
    Mat out = length_regulate(feats, dur);
    CHECK(out.rows() == 6);
    CHECK(out.sum() == Catch::Approx(3 * feats.row(0).sum() +
                                     feats.row(1).sum() +
                                     2 * feats.row(3).sum()));
  }
  SECTION("degenerate total raises") {
    CHECK_THROWS_AS(length_regulate(f, {0, 0, 0}), DegenerateOutputError);
    CHECK_THROWS_AS(length_regulate(f, {1, -1, 1}), ValidationError);
    CHECK_THROWS_AS(length_regulate(f, {1, 1}), ShapeError);
  }
}

TEST_CASE("durations_from_log rounds half-up with a floor") {
  // log1p domain: exp(y) - 1
  std::vector<double> y = {std::log(1.0 + 2.49), std::log(1.0 + 2.5),
                           std::log(1.0 + 0.4)};
  auto d = durations_from_log(y);
  CHECK(d == std::vector<int>{2, 3, 0});
  // all rounding to zero bumps the largest logit to one frame
  auto d2 = durations_from_log({std::log(1.2), std::log(1.4), std::log(1.1)});
  CHECK(d2 == std::vector<int>{0, 1, 0});
}

TEST_CASE("synthesize: teacher durations pin the frame count") {
  Rng rng(63);
  AcousticParams params;
  params.init(rng, tiny_config());
  PhonemeSequence ph{{1, 5, 3}};
  StyleEmbedding style{Mat::Zero(1, kStyleDim)};

  auto targets = make_targets({2, 3, 1});
  auto out = synthesize(params, ph, style, &targets);
  CHECK(out.mel.frames.rows() == 6);
  CHECK(out.mel.frames.cols() == kMelChannels);
  CHECK(out.predicted.pitch.size() == 3);

  auto targets2 = make_targets({4, 4, 4});
  CHECK(synthesize(params, ph, style, &targets2).mel.frames.rows() == 12);
}

TEST_CASE("synthesize inference mode emits consistent expansions") {
  Rng rng(64);
  AcousticParams params;
  params.init(rng, tiny_config());
  PhonemeSequence ph{{0, 1, 2, 3}};
  StyleEmbedding style{random_mat(rng, 1, kStyleDim, 0.3)};

  auto out = synthesize(params, ph, style);
  int total = 0;
  for (int d : out.predicted.duration) {
    CHECK(d >= 0);
    total += d;
  }
  CHECK(total >= 1);
  CHECK(out.mel.frames.rows() == total);
  CHECK(out.frame_f0.size() == static_cast<size_t>(total));
  CHECK(out.frame_energy.size() == static_cast<size_t>(total));
}

TEST_CASE("style vector changes the variance predictions") {
  Rng rng(65);
  AcousticParams params;
  params.init(rng, tiny_config());
  PhonemeSequence ph{{2, 7, 4}};
  auto targets = make_targets({2, 2, 2});

  auto run = [&](const Mat& style_row) {
    a::Tape t;
    nn::ParamBinder pb{&t, false};
    auto bound = bind(pb, params);
    auto fwd = acoustic_forward(t, bound, params, ph,
                                t.constant(style_row), &targets, nullptr);
    return t.val(fwd.duration_log);
  };
  Mat zero_logits = run(Mat::Zero(1, kStyleDim));
  Mat style_logits = run(random_mat(rng, 1, kStyleDim, 0.5));
  CHECK((zero_logits - style_logits).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("style broadcast alone yields position-uniform predictions") {
  Rng rng(66);
  AcousticParams params;
  params.init(rng, tiny_config());
  // feed the variance predictor a pure style broadcast (uniform rows)
  Mat style = random_mat(rng, 1, kStyleDim, 0.5);
  Mat uniform(5, kStyleDim);
  for (int i = 0; i < 5; ++i) uniform.row(i) = style.row(0);

  a::Tape t;
  nn::ParamBinder pb{&t, false};
  auto bound = bind(pb, params);
  a::Var pred = variance_predict(t, bound.duration_pred,
                                 t.constant(uniform), 0.0, nullptr);
  const Mat& y = t.val(pred);
  for (int i = 1; i < 5; ++i)
    CHECK(y(i, 0) == Catch::Approx(y(0, 0)).epsilon(1e-12));
}

TEST_CASE("error paths: vocab, style shape, teacher lengths") {
  Rng rng(67);
  AcousticParams params;
  params.init(rng, tiny_config());
  StyleEmbedding style{Mat::Zero(1, kStyleDim)};
  auto targets = make_targets({1, 1});

  CHECK_THROWS_AS(synthesize(params, PhonemeSequence{{99}}, style),
                  ValidationError);
  CHECK_THROWS_AS(synthesize(params, PhonemeSequence{{}}, style),
                  EmptyInputError);

  a::Tape t;
  nn::ParamBinder pb{&t, false};
  auto bound = bind(pb, params);
  CHECK_THROWS_AS(acoustic_forward(t, bound, params, PhonemeSequence{{1, 2}},
                                   t.constant(Mat::Zero(1, 128)), nullptr,
                                   nullptr),
                  ShapeError);
  CHECK_THROWS_AS(acoustic_forward(t, bound, params, PhonemeSequence{{1}},
                                   t.constant(Mat::Zero(1, kStyleDim)),
                                   &targets, nullptr),
                  ShapeError);
}

TEST_CASE("compute_losses closed forms") {
  Rng rng(68);
  Mat mel = random_mat(rng, 6, kMelChannels);
  auto targets = make_targets({2, 3, 1});

  SECTION("identical inputs give zero everywhere") {
    auto l = compute_losses(mel, mel, targets, targets);
    CHECK(l.mel_mae == 0.0);
    CHECK(l.duration_mse == 0.0);
    CHECK(l.pitch_mse == 0.0);
    CHECK(l.energy_mse == 0.0);
    CHECK(l.total() == 0.0);
  }
  SECTION("constant mel offset of 1 gives MAE 1") {
    Mat off = mel.array() + 1.0;
    auto l = compute_losses(off, mel, targets, targets);
    CHECK(l.mel_mae == Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("random 2-phoneme case matches hand arithmetic") {
    VarianceTargets pred, gt;
    pred.duration = {3, 1};
    gt.duration = {2, 2};
    pred.pitch = {1.5, -0.5};
    gt.pitch = {1.0, 0.0};
    pred.energy = {0.2, 0.8};
    gt.energy = {0.5, 0.6};
    Mat pm = Mat::Constant(4, kMelChannels, 0.25);
    Mat gm = Mat::Constant(4, kMelChannels, 0.55);
    auto l = compute_losses(pm, gm, pred, gt);
    CHECK(l.mel_mae == Catch::Approx(0.3).epsilon(1e-12));
    double dmse = (std::pow(std::log(4) - std::log(3), 2) +
                   std::pow(std::log(2) - std::log(3), 2)) / 2.0;
    CHECK(l.duration_mse == Catch::Approx(dmse).epsilon(1e-12));
    CHECK(l.pitch_mse == Catch::Approx((0.25 + 0.25) / 2.0).epsilon(1e-12));
    CHECK(l.energy_mse == Catch::Approx((0.09 + 0.04) / 2.0).epsilon(1e-12));
    CHECK(l.total() == Catch::Approx(l.mel_mae + dmse + 0.25 +
                                     0.065).epsilon(1e-12));
  }
  SECTION("frame mismatch raises") {
    CHECK_THROWS_AS(
        compute_losses(Mat::Zero(5, 80), Mat::Zero(6, 80), targets, targets),
        ShapeError);
  }
}

TEST_CASE("gradient of total loss w.r.t. the style embedding") {
  Rng rng(69);
  AcousticParams params;
  params.init(rng, tiny_config());
  PhonemeSequence ph{{1, 6}};
  auto targets = make_targets({2, 1});
  Mat gt_mel = random_mat(rng, 3, kMelChannels);

  std::vector<Mat> ps = {random_mat(rng, 1, kStyleDim, 0.3)};
  auto rep = fd_check(ps, [&](a::Tape& t, std::vector<a::Var>& v) {
    nn::ParamBinder pb{&t, false};
    auto bound = bind(pb, params);
    auto fwd = acoustic_forward(t, bound, params, ph, v[0], &targets, nullptr);
    a::Var loss = a::mae(t, fwd.mel, t.constant(gt_mel));
    Mat dur_target(2, 1);
    dur_target << std::log1p(2.0), std::log1p(1.0);
    loss = a::add(t, loss, a::mse(t, fwd.duration_log,
                                  t.constant(dur_target)));
    Mat pitch_target(2, 1), energy_target(2, 1);
    pitch_target << targets.pitch[0], targets.pitch[1];
    energy_target << targets.energy[0], targets.energy[1];
    loss = a::add(t, loss, a::mse(t, fwd.pitch, t.constant(pitch_target)));
    loss = a::add(t, loss, a::mse(t, fwd.energy, t.constant(energy_target)));
    return loss;
  }, 1e-3, 16);
  INFO(rep.worst_at);
  CHECK(fd_ok(rep));
  CHECK(rep.checked == 16);
}
