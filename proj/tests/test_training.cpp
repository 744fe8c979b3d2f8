// Copyright 2026 The ctts Authors
// Optimizer schedule, stage configs, freeze discipline, target extraction,
// miniature training smokes.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "ctts/toy_corpus.hpp"
#include "ctts/training.hpp"
#include "test_util.hpp"

using namespace ctts;
namespace fs = std::filesystem;

namespace {

ToyCorpus small_corpus(uint64_t seed = 101, int docs = 1, int sents = 4) {
  ToyCorpusConfig cfg;
  cfg.seed = seed;
  cfg.n_documents = docs;
  cfg.sentences_per_doc = sents;
  return generate_toy_corpus(cfg);
}

nlohmann::json stage1_json(int steps) {
  return {{"stage", "JOINT_TEACHER"},
          {"trainable", {"reference_encoder", "acoustic_model"}},
          {"frozen", nlohmann::json::array()},
          {"losses", {"mel_mae", "duration_mse", "pitch_mse", "energy_mse"}},
          {"steps", steps},
          {"batch_size", 2},
          {"learning_rate_schedule", {{"peak_lr", 1e-3}, {"warmup_steps", 20}}},
          {"seed", 5}};
}

nlohmann::json stage2_json(int steps) {
  return {{"stage", "DISTILL_STUDENT"},
          {"trainable", {"context_encoder"}},
          {"frozen", {"reference_encoder", "acoustic_model"}},
          {"losses", {"distill_mse"}},
          {"steps", steps},
          {"batch_size", 2},
          {"learning_rate_schedule", {{"peak_lr", 5e-4}, {"warmup_steps", 10}}},
          {"seed", 6},
          {"l_context", 2},
          {"ablation", true}};
}

nlohmann::json stage3_json(int steps) {
  return {{"stage", "JOINT_FINETUNE"},
          {"trainable", {"context_encoder", "acoustic_model"}},
          {"frozen", {"reference_encoder"}},
          {"losses", {"mel_mae", "duration_mse", "pitch_mse", "energy_mse"}},
          {"steps", steps},
          {"batch_size", 2},
          {"learning_rate_schedule", {{"peak_lr", 1e-4}, {"warmup_steps", 10}}},
          {"seed", 7},
          {"l_context", 2}};
}

AcousticConfig tiny_acoustic(const Dataset& d) {
  AcousticConfig cfg;
  cfg.vocab_size = d.vocab.size();
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.conv_filter = 48;
  cfg.max_frames = 512;
  return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule peaks at the warm-up boundary") {
  LrSchedule s{2e-3, 4000};
  double prev = 0.0;
  for (int step = 1; step <= 4000; ++step) {
    double lr = s.at(step);
    REQUIRE(lr >= prev);  // non-decreasing through warm-up
    prev = lr;
  }
  CHECK(s.at(4000) == Catch::Approx(2e-3).epsilon(1e-12));
  prev = s.at(4000);
  for (int step = 4001; step <= 8000; step += 7) {
    double lr = s.at(step);
    REQUIRE(lr <= prev);  // non-increasing afterwards
    prev = lr;
  }
}

TEST_CASE("stage config invariants are enforced") {
  CHECK_NOTHROW(TrainingStageConfig::from_json(stage1_json(10)));
  CHECK_NOTHROW(TrainingStageConfig::from_json(stage2_json(10)));
  CHECK_NOTHROW(TrainingStageConfig::from_json(stage3_json(10)));

  auto bad = stage1_json(10);
  bad["frozen"] = {"acoustic_model"};  // trainable AND frozen
  CHECK_THROWS_AS(TrainingStageConfig::from_json(bad), ValidationError);

  auto bad2 = stage1_json(10);
  bad2["trainable"] = {"reference_encoder"};
  CHECK_THROWS_AS(TrainingStageConfig::from_json(bad2), ValidationError);

  auto bad3 = stage2_json(10);
  bad3["losses"] = {"mel_mae"};
  CHECK_THROWS_AS(TrainingStageConfig::from_json(bad3), ValidationError);

  auto bad4 = stage1_json(10);
  bad4["batch_size"] = 0;
  CHECK_THROWS_AS(TrainingStageConfig::from_json(bad4), ValidationError);
}

TEST_CASE("adam applies global gradient clipping deterministically") {
  nn::ParamTensor p{"w", Mat::Zero(2, 2)};
  AdamConfig cfg;
  cfg.schedule = {1.0, 1};
  cfg.grad_clip = 1.0;
  Adam adam(cfg);
  Mat g(2, 2);
  g << 30, 40, 0, 0;  // norm 50 -> scaled by 1/50
  adam.step({{&p, g}});
  // after clipping both entries move by lr * sign-ish amounts; just pin
  // determinism and direction
  CHECK(p.value(0, 0) < 0.0);
  CHECK(p.value(0, 1) < 0.0);
  CHECK(p.value(1, 0) == 0.0);

  nn::ParamTensor q{"w", Mat::Zero(2, 2)};
  Adam adam2(cfg);
  adam2.step({{&q, g}});
  CHECK(q.value == p.value);
}

TEST_CASE("zero-step stage leaves checkpoints at initialization") {
  auto corpus = small_corpus(103);
  Dataset data = to_dataset(corpus);
  fs::path out = fs::temp_directory_path() / "ctts_stage1_zero";
  fs::remove_all(out);

  Rng rng(9);
  ReferenceEncoderParams ref;
  ref.init(rng);
  AcousticParams am;
  am.init(rng, tiny_acoustic(data));
  auto cfg = TrainingStageConfig::from_json(stage1_json(0));

  // fit_variance_stats runs inside; compare against a copy with the same fit
  ReferenceEncoderParams ref_copy = ref;
  AcousticParams am_copy = am;
  fit_variance_stats(data, am_copy);

  run_stage1(data, ref, am, cfg, out);
  CHECK(nn::hash_params(ref.all_params()) ==
        nn::hash_params(ref_copy.all_params()));
  CHECK(nn::hash_params(am.all_params()) ==
        nn::hash_params(am_copy.all_params()));
  // checkpoint round trip reproduces the same bytes
  ReferenceEncoderParams ref_loaded;
  ref_loaded.init(rng);
  load_checkpoint(out / "reference_encoder.ckpt", ref_loaded.all_params(),
                  "reference_encoder", kReferenceEncoderFingerprint);
  CHECK(nn::hash_params(ref_loaded.all_params()) ==
        nn::hash_params(ref.all_params()));
  fs::remove_all(out);
}

TEST_CASE("miniature stage pipeline: losses drop, freezes hold") {
  auto corpus = small_corpus(104, 1, 5);
  Dataset data = to_dataset(corpus);
  fs::path base = fs::temp_directory_path() / "ctts_mini_pipeline";
  fs::remove_all(base);

  Rng rng(11);
  ReferenceEncoderParams ref;
  ref.init(rng);
  AcousticParams am;
  am.init(rng, tiny_acoustic(data));

  // ---- stage 1 (short) ----
  auto cfg1 = TrainingStageConfig::from_json(stage1_json(12));
  auto out1 = run_stage1(data, ref, am, cfg1, base / "stage1");
  CHECK(out1.steps_run == 12);
  CHECK(fs::exists(base / "stage1/loss_log.csv"));
  CHECK(fs::exists(base / "stage1/audit.json"));
  auto at1 = LossLog::at_step(base / "stage1/loss_log.csv", 1);
  auto at12 = LossLog::at_step(base / "stage1/loss_log.csv", 12);
  CHECK(at1.count("total") == 1);
  CHECK(at12.at("total") < at1.at("total"));  // tiny smoke: heading down

  // ---- targets ----
  auto targets = extract_targets(data, ref);
  CHECK(targets.size() == data.utterances.size());
  for (const auto& [id, t] : targets) {
    Mat m = t.to_matrix();
    CHECK(m.cwiseAbs().maxCoeff() < 1.0);
  }
  // repeat extraction is bit-identical
  auto targets2 = extract_targets(data, ref);
  CHECK(encode_tensors(targets) == encode_tensors(targets2));
  // order independence: shuffled utterance list, same values
  Dataset shuffled = data;
  std::swap(shuffled.utterances[0], shuffled.utterances[3]);
  shuffled.by_id.clear();
  for (size_t i = 0; i < shuffled.utterances.size(); ++i)
    shuffled.by_id[shuffled.utterances[i].id()] = i;
  auto targets3 = extract_targets(shuffled, ref);
  CHECK(encode_tensors(targets3) == encode_tensors(targets));

  // ---- stage 2 (short, with ablation) ----
  ContextEncoderParams student;
  student.init(rng);
  PlainEncoderParams plain;
  plain.init(rng);
  StubProvider provider(corpus.stub_seed);
  auto cfg2 = TrainingStageConfig::from_json(stage2_json(25));

  uint64_t ref_hash = nn::hash_params(ref.all_params());
  uint64_t am_hash = nn::hash_params(am.all_params());
  std::vector<FrozenModule> frozen = {
      {"reference_encoder", kReferenceEncoderFingerprint, ref.all_params()},
      {"acoustic_model", kAcousticFingerprint, am.all_params()}};
  auto res2 = run_stage2(data, provider, targets, student, &plain, cfg2,
                         base / "stage2", frozen);
  CHECK(res2.hierarchical.steps_run == 25);
  CHECK(res2.hierarchical.final_full_loss <
        res2.hierarchical.initial_full_loss);
  CHECK(res2.ran_ablation);
  CHECK(fs::exists(base / "stage2/ablation.json"));
  // freeze discipline in memory
  CHECK(nn::hash_params(ref.all_params()) == ref_hash);
  CHECK(nn::hash_params(am.all_params()) == am_hash);
  // frozen modules re-serialized byte-identically
  CHECK(hash_file(base / "stage1/reference_encoder.ckpt") ==
        hash_file(base / "stage2/reference_encoder.ckpt"));
  CHECK(hash_file(base / "stage1/acoustic_model.ckpt") ==
        hash_file(base / "stage2/acoustic_model.ckpt"));

  // ---- stage 3 (short) ----
  auto cfg3 = TrainingStageConfig::from_json(stage3_json(8));
  std::vector<FrozenModule> frozen3 = {
      {"reference_encoder", kReferenceEncoderFingerprint, ref.all_params()}};
  auto out3 = run_stage3(data, provider, student, am, cfg3, base / "stage3",
                         frozen3);
  CHECK(out3.steps_run == 8);
  CHECK(nn::hash_params(ref.all_params()) == ref_hash);
  CHECK(hash_file(base / "stage1/reference_encoder.ckpt") ==
        hash_file(base / "stage3/reference_encoder.ckpt"));
  // acoustic model DID change in stage 3
  CHECK(nn::hash_params(am.all_params()) != am_hash);

  fs::remove_all(base);
}

TEST_CASE("fixed seed reproduces the loss trajectory") {
  auto corpus = small_corpus(105, 1, 3);
  Dataset data = to_dataset(corpus);
  fs::path a = fs::temp_directory_path() / "ctts_repro_a";
  fs::path b = fs::temp_directory_path() / "ctts_repro_b";
  fs::remove_all(a);
  fs::remove_all(b);

  auto run = [&](const fs::path& out) {
    Rng rng(21);
    ReferenceEncoderParams ref;
    ref.init(rng);
    AcousticParams am;
    am.init(rng, tiny_acoustic(data));
    auto cfg = TrainingStageConfig::from_json(stage1_json(6));
    run_stage1(data, ref, am, cfg, out);
  };
  run(a);
  run(b);
  CHECK(hash_file(a / "loss_log.csv") == hash_file(b / "loss_log.csv"));
  CHECK(hash_file(a / "reference_encoder.ckpt") ==
        hash_file(b / "reference_encoder.ckpt"));
  CHECK(hash_file(a / "acoustic_model.ckpt") ==
        hash_file(b / "acoustic_model.ckpt"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("utterance without a target is a data error") {
  auto corpus = small_corpus(106, 1, 3);
  Dataset data = to_dataset(corpus);
  Rng rng(31);
  ContextEncoderParams student;
  student.init(rng);
  StubProvider provider(corpus.stub_seed);
  TensorMap empty_targets;
  auto cfg = TrainingStageConfig::from_json(stage2_json(2));
  CHECK_THROWS_AS(run_stage2(data, provider, empty_targets, student, nullptr,
                             cfg, fs::temp_directory_path() / "ctts_s2_err"),
                  DataError);
}

TEST_CASE("checkpoint loader rejects wrong module or fingerprint") {
  Rng rng(41);
  ContextEncoderParams student;
  student.init(rng);
  fs::path p = fs::temp_directory_path() / "ctts_ckpt_check.ckpt";
  save_checkpoint(p, student.all_params(), "context_encoder",
                  kContextEncoderFingerprint, 1, 2);
  ContextEncoderParams other;
  other.init(rng);
  CHECK_NOTHROW(load_checkpoint(p, other.all_params(), "context_encoder",
                                kContextEncoderFingerprint));
  CHECK_THROWS_AS(load_checkpoint(p, other.all_params(), "context_encoder",
                                  "different-fingerprint"),
                  FormatError);
  CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "missing.ckpt",
                                  other.all_params(), "context_encoder",
                                  kContextEncoderFingerprint),
                  MissingPrerequisiteError);
  fs::remove(p);
  fs::remove(p.string() + ".json");
}
