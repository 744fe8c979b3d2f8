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
// Three-step knowledge-distillation schedule:
//   1. JOINT_TEACHER   - reference encoder + acoustic model, TTS losses
//   2. DISTILL_STUDENT - context encoder only, regression onto frozen-teacher
//                        style targets
//   3. JOINT_FINETUNE  - context encoder + acoustic model, TTS losses, lower
//                        learning rate; reference encoder unused
// Plus the Adam/warm-up optimizer, loss logging, checkpoints with JSON
// sidecars, and byte-level freeze audits.

#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctts/acoustic_model.hpp"
#include "ctts/context_encoder.hpp"
#include "ctts/manifest.hpp"
#include "ctts/reference_encoder.hpp"
#include "ctts/serialize.hpp"

namespace ctts {

namespace fs = std::filesystem;

// ---- optimizer ---------------------------------------------------------------

struct LrSchedule {
  double peak_lr = 1e-3;
  int warmup_steps = 4000;

  // linear warm-up to the peak, inverse-sqrt decay afterwards; peak at
  // step == warmup_steps
  double at(int step) const {
    if (step < 1) return 0.0;
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return peak_lr * std::min(s / w, std::sqrt(w / s));
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  LrSchedule schedule;
  double grad_clip = 1.0;  // global norm; <= 0 disables
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  int step_count() const { return step_; }

  // one update over (tensor, gradient) pairs; gradients may be empty
  void step(const std::vector<std::pair<nn::ParamTensor*, Mat>>& grads) {
    ++step_;
    const double lr = cfg_.schedule.at(step_);

    double norm_sq = 0.0;
    for (const auto& [p, g] : grads)
      if (g.size() > 0) norm_sq += g.squaredNorm();
    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
      const double norm = std::sqrt(norm_sq);
      if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }

    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
    for (const auto& [p, g] : grads) {
      if (!p->trainable || g.size() == 0) continue;
      auto& [m, v] = moments_[p->name];
      if (m.size() == 0) {
        m = Mat::Zero(p->value.rows(), p->value.cols());
        v = Mat::Zero(p->value.rows(), p->value.cols());
      }
      Mat gc = g * clip_scale;
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gc;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gc.cwiseProduct(gc);
      Mat mhat = m / bc1;
      Mat vhat = v / bc2;
      p->value.array() -=
          lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  int step_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments_;
};

// ---- stage configuration -------------------------------------------------------

enum class TrainingStage { kJointTeacher, kDistillStudent, kJointFinetune };

inline const char* stage_name(TrainingStage s) {
  switch (s) {
    case TrainingStage::kJointTeacher: return "JOINT_TEACHER";
    case TrainingStage::kDistillStudent: return "DISTILL_STUDENT";
    case TrainingStage::kJointFinetune: return "JOINT_FINETUNE";
  }
  return "?";
}

struct ProviderConfig {
  std::string kind = "stub";  // stub | precomputed
  uint64_t seed = 0;          // stub
  std::string path;           // precomputed, relative to the data dir
};

struct TrainingStageConfig {
  TrainingStage stage = TrainingStage::kJointTeacher;
  std::set<std::string> trainable, frozen, losses;
  int steps = 0;
  int batch_size = 1;
  LrSchedule schedule;
  double grad_clip = 1.0;
  uint64_t seed = 1;
  int l_context = 2;
  int max_sentences = 16;
  ProviderConfig provider;
  std::string distill_loss = "mse";  // mse | l1
  bool ablation = false;
  std::map<std::string, std::string> paths;  // prerequisite artifacts
  nlohmann::json raw;  // original document, hashed into sidecars

  static TrainingStageConfig from_json(const nlohmann::json& j) {
    TrainingStageConfig c;
    c.raw = j;
    const std::string s = j.at("stage").get<std::string>();
    if (s == "JOINT_TEACHER" || s == "1")
      c.stage = TrainingStage::kJointTeacher;
    else if (s == "DISTILL_STUDENT" || s == "2")
      c.stage = TrainingStage::kDistillStudent;
    else if (s == "JOINT_FINETUNE" || s == "3")
      c.stage = TrainingStage::kJointFinetune;
    else
      throw ValidationError("unknown training stage '" + s + "'");
    for (const auto& m : j.at("trainable")) c.trainable.insert(m.get<std::string>());
    for (const auto& m : j.at("frozen")) c.frozen.insert(m.get<std::string>());
    for (const auto& m : j.at("losses")) c.losses.insert(m.get<std::string>());
    c.steps = j.at("steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    const auto& lrs = j.at("learning_rate_schedule");
    c.schedule.peak_lr = lrs.at("peak_lr").get<double>();
    c.schedule.warmup_steps = lrs.at("warmup_steps").get<int>();
    c.grad_clip = j.value("grad_clip", 1.0);
    c.seed = j.value("seed", uint64_t{1});
    c.l_context = j.value("l_context", 2);
    c.max_sentences = j.value("max_sentences", 16);
    if (j.contains("provider")) {
      c.provider.kind = j["provider"].value("kind", "stub");
      c.provider.seed = j["provider"].value("seed", uint64_t{0});
      c.provider.path = j["provider"].value("path", "");
    }
    c.distill_loss = j.value("distill_loss", "mse");
    c.ablation = j.value("ablation", false);
    if (j.contains("paths"))
      c.paths = j["paths"].get<std::map<std::string, std::string>>();
    c.validate();
    return c;
  }

  void validate() const {
    for (const auto& m : trainable)
      if (frozen.count(m))
        throw ValidationError("module '" + m + "' is both trainable and frozen");
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (schedule.peak_lr <= 0) throw ValidationError("peak_lr must be > 0");
    if (schedule.warmup_steps < 1)
      throw ValidationError("warmup_steps must be >= 1");

    const std::set<std::string> tts_losses = {"mel_mae", "duration_mse",
                                              "pitch_mse", "energy_mse"};
    switch (stage) {
      case TrainingStage::kJointTeacher:
        if (trainable != std::set<std::string>{"acoustic_model",
                                               "reference_encoder"})
          throw ValidationError(
              "JOINT_TEACHER must train exactly {reference_encoder, "
              "acoustic_model}");
        if (losses != tts_losses)
          throw ValidationError("JOINT_TEACHER uses the four TTS losses");
        break;
      case TrainingStage::kDistillStudent:
        if (trainable != std::set<std::string>{"context_encoder"})
          throw ValidationError(
              "DISTILL_STUDENT must train exactly {context_encoder}");
        if (losses != std::set<std::string>{"distill_" + distill_loss})
          throw ValidationError(
              "DISTILL_STUDENT uses the distillation loss only");
        break;
      case TrainingStage::kJointFinetune:
        if (trainable != std::set<std::string>{"acoustic_model",
                                               "context_encoder"})
          throw ValidationError(
              "JOINT_FINETUNE must train exactly {context_encoder, "
              "acoustic_model}");
        if (losses != tts_losses)
          throw ValidationError("JOINT_FINETUNE uses the four TTS losses");
        break;
    }
  }
};

inline uint64_t config_hash(const nlohmann::json& j) {
  return fnv1a64(j.dump());
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// ---- loss logging ----------------------------------------------------------------

struct LossLog {
  struct Row {
    int step;
    std::string name;
    double value;
  };
  std::vector<Row> rows;

  void append(int step, const std::string& name, double value) {
    rows.push_back({step, name, value});
  }

  void save(const fs::path& path) const {
    std::string out = "step,loss-name,value\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.value);
      out += std::to_string(r.step) + "," + r.name + "," + buf + "\n";
    }
    write_file_atomic(path, out);
  }

  // loss-name -> value rows recorded at one step of a saved log
  static std::map<std::string, double> at_step(const fs::path& path,
                                               int step) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open loss log " + path.string());
    std::map<std::string, double> out;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const size_t c1 = line.find(',');
      const size_t c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) continue;
      if (std::stoi(line.substr(0, c1)) != step) continue;
      out[line.substr(c1 + 1, c2 - c1 - 1)] = std::stod(line.substr(c2 + 1));
    }
    return out;
  }
};

// ---- checkpoints -----------------------------------------------------------------

inline void save_checkpoint(const fs::path& path,
                            const std::vector<nn::ParamTensor*>& params,
                            const std::string& module,
                            const std::string& fingerprint, uint64_t seed,
                            uint64_t cfg_hash,
                            nlohmann::json extra = nlohmann::json::object()) {
  save_tensors(path, nn::to_tensor_map(params));
  nlohmann::json sidecar = {{"format", "ctts-checkpoint-v1"},
                            {"module", module},
                            {"fingerprint", fingerprint},
                            {"seed", seed},
                            {"config_hash", hex64(cfg_hash)}};
  for (auto& [k, v] : extra.items()) sidecar[k] = v;
  write_file_atomic(path.string() + ".json", sidecar.dump(2) + "\n");
}

inline void load_checkpoint(const fs::path& path,
                            const std::vector<nn::ParamTensor*>& params,
                            const std::string& module,
                            const std::string& fingerprint) {
  if (!fs::exists(path))
    throw MissingPrerequisiteError("checkpoint " + path.string() +
                                   " does not exist");
  const fs::path sidecar_path = path.string() + ".json";
  if (fs::exists(sidecar_path)) {
    std::ifstream in(sidecar_path);
    nlohmann::json sidecar;
    in >> sidecar;
    if (sidecar.value("module", module) != module)
      throw FormatError("checkpoint " + path.string() + " holds module '" +
                        sidecar.value("module", "?") + "', expected '" +
                        module + "'");
    if (sidecar.value("fingerprint", fingerprint) != fingerprint)
      throw FormatError("checkpoint " + path.string() +
                        " has a different architecture fingerprint");
  }
  nn::from_tensor_map(load_tensors(path), params);
}

// ---- shared runner plumbing --------------------------------------------------------

struct StageOutcome {
  std::map<std::string, double> first_losses, last_losses;
  // full-corpus distillation MSE before/after (stage 2 only)
  double initial_full_loss = 0.0;
  double final_full_loss = 0.0;
  int steps_run = 0;
};

namespace detail_train {

class BatchSampler {
 public:
  BatchSampler(size_t n, uint64_t seed, const char* tag)
      : n_(n), rng_(Rng::tagged(seed, tag)) {
    refill();
  }

  std::vector<size_t> next(int batch_size) {
    std::vector<size_t> out;
    for (int i = 0; i < batch_size; ++i) {
      if (cursor_ == order_.size()) refill();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void refill() {
    order_.resize(n_);
    for (size_t i = 0; i < n_; ++i) order_[i] = i;
    rng_.shuffle(order_);
    cursor_ = 0;
  }
  size_t n_;
  Rng rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

inline void check_finite_or_dump(
    const std::map<std::string, double>& losses, int step,
    const std::vector<std::string>& batch_ids, const fs::path& out_dir) {
  bool bad = false;
  for (const auto& [name, v] : losses) bad = bad || !std::isfinite(v);
  if (!bad) return;
  nlohmann::json dump = {{"step", step},
                         {"utterances", batch_ids},
                         {"losses", losses}};
  write_file_atomic(out_dir / "nan_dump.json", dump.dump(2) + "\n");
  throw NumericalError("non-finite loss at step " + std::to_string(step) +
                       "; batch dumped to " +
                       (out_dir / "nan_dump.json").string());
}

inline VarianceTargets normalized_targets(const VarianceTargets& t,
                                          const AcousticParams& am) {
  VarianceTargets out = t;
  for (auto& p : out.pitch) p = (p - am.pitch_mean()) / am.pitch_std();
  for (auto& e : out.energy) e = (e - am.energy_mean()) / am.energy_std();
  return out;
}

// per-utterance TTS loss nodes on the tape (training mode, teacher forcing)
struct TtsLossVars {
  ad::Var mel_mae, duration_mse, pitch_mse, energy_mse;
};

inline TtsLossVars tts_losses(ad::Tape& t, const AcousticBound& ab,
                              const AcousticParams& am, const Utterance& u,
                              ad::Var style, Rng* dropout_rng) {
  VarianceTargets norm = normalized_targets(u.targets, am);
  auto fwd = acoustic_forward(t, ab, am, u.phonemes, style, &norm, dropout_rng);
  TtsLossVars out;
  out.mel_mae = ad::mae(t, fwd.mel, t.constant(u.mel));
  const size_t m = u.targets.duration.size();
  Mat dur_t(static_cast<Eigen::Index>(m), 1),
      pit_t(static_cast<Eigen::Index>(m), 1),
      ene_t(static_cast<Eigen::Index>(m), 1);
  for (size_t i = 0; i < m; ++i) {
    dur_t(static_cast<Eigen::Index>(i), 0) =
        std::log1p(static_cast<double>(u.targets.duration[i]));
    pit_t(static_cast<Eigen::Index>(i), 0) = norm.pitch[i];
    ene_t(static_cast<Eigen::Index>(i), 0) = norm.energy[i];
  }
  out.duration_mse = ad::mse(t, fwd.duration_log, t.constant(dur_t));
  out.pitch_mse = ad::mse(t, fwd.pitch, t.constant(pit_t));
  out.energy_mse = ad::mse(t, fwd.energy, t.constant(ene_t));
  return out;
}

inline std::map<std::string, uint64_t> hash_modules(
    const std::vector<std::pair<std::string, std::vector<nn::ParamTensor*>>>&
        modules) {
  std::map<std::string, uint64_t> out;
  for (const auto& [name, params] : modules) out[name] = nn::hash_params(params);
  return out;
}

inline void write_audit(
    const fs::path& out_dir,
    const std::map<std::string, uint64_t>& before,
    const std::map<std::string, uint64_t>& after) {
  nlohmann::json j;
  for (const auto& [name, h] : before) {
    j[name] = {{"hash_before", hex64(h)},
               {"hash_after", hex64(after.at(name))},
               {"unchanged", before.at(name) == after.at(name)}};
  }
  write_file_atomic(out_dir / "audit.json", j.dump(2) + "\n");
}

}  // namespace detail_train

// ---- corpus statistics --------------------------------------------------------------

// pitch stats over voiced phoneme targets, energy over all; stored in the
// acoustic checkpoint so inference can de-normalize
inline void fit_variance_stats(const Dataset& data, AcousticParams& am) {
  std::vector<double> pitches, energies;
  for (const auto& u : data.utterances) {
    for (double p : u.targets.pitch)
      if (p > 0.0) pitches.push_back(p);
    for (double e : u.targets.energy) energies.push_back(e);
  }
  auto fit = [](const std::vector<double>& v) {
    if (v.empty()) return std::pair<double, double>{0.0, 1.0};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    return std::pair<double, double>{mean, std::max(std::sqrt(var), 1e-6)};
  };
  auto [pm, ps] = fit(pitches);
  am.pitch_stats.value(0, 0) = pm;
  am.pitch_stats.value(0, 1) = ps;
  auto [em, es] = fit(energies);
  am.energy_stats.value(0, 0) = em;
  am.energy_stats.value(0, 1) = es;
}

// ---- stage 1: joint teacher -----------------------------------------------------------

inline StageOutcome run_stage1(const Dataset& data,
                               ReferenceEncoderParams& ref,
                               AcousticParams& acoustic,
                               const TrainingStageConfig& cfg,
                               const fs::path& out_dir) {
  if (data.utterances.empty()) throw DataError("stage 1: empty dataset");
  fs::create_directories(out_dir);
  fit_variance_stats(data, acoustic);

  auto modules = std::vector<std::pair<std::string, std::vector<nn::ParamTensor*>>>{
      {"reference_encoder", ref.all_params()},
      {"acoustic_model", acoustic.all_params()}};
  auto hashes_before = detail_train::hash_modules(modules);

  Adam adam({0.9, 0.98, 1e-9, cfg.schedule, cfg.grad_clip});
  detail_train::BatchSampler sampler(data.utterances.size(), cfg.seed,
                                     "stage1.batches");
  Rng dropout_rng = Rng::tagged(cfg.seed, "stage1.dropout");
  LossLog log;
  StageOutcome outcome;

  for (int step = 1; step <= cfg.steps; ++step) {
    auto batch = sampler.next(cfg.batch_size);
    ad::Tape t;
    nn::ParamBinder pb{&t, true};
    auto rb = bind(pb, ref);
    auto ab = bind(pb, acoustic);

    std::vector<std::string> ids;
    ad::Var mel_l, dur_l, pit_l, ene_l;
    for (size_t bi : batch) {
      const Utterance& u = data.utterances[bi];
      ids.push_back(u.id());
      ad::Var style = reference_encode(t, rb, ref, u.mel, true);
      auto l = detail_train::tts_losses(t, ab, acoustic, u, style,
                                        &dropout_rng);
      mel_l = mel_l.valid() ? ad::add(t, mel_l, l.mel_mae) : l.mel_mae;
      dur_l = dur_l.valid() ? ad::add(t, dur_l, l.duration_mse) : l.duration_mse;
      pit_l = pit_l.valid() ? ad::add(t, pit_l, l.pitch_mse) : l.pitch_mse;
      ene_l = ene_l.valid() ? ad::add(t, ene_l, l.energy_mse) : l.energy_mse;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    mel_l = ad::scale(t, mel_l, inv_b);
    dur_l = ad::scale(t, dur_l, inv_b);
    pit_l = ad::scale(t, pit_l, inv_b);
    ene_l = ad::scale(t, ene_l, inv_b);
    ad::Var total =
        ad::add(t, ad::add(t, mel_l, dur_l), ad::add(t, pit_l, ene_l));
    t.backward(total);

    std::map<std::string, double> losses = {
        {"mel_mae", t.val(mel_l)(0, 0)},
        {"duration_mse", t.val(dur_l)(0, 0)},
        {"pitch_mse", t.val(pit_l)(0, 0)},
        {"energy_mse", t.val(ene_l)(0, 0)},
        {"total", t.val(total)(0, 0)}};
    detail_train::check_finite_or_dump(losses, step, ids, out_dir);
    for (const auto& [name, v] : losses) log.append(step, name, v);
    if (step == 1) outcome.first_losses = losses;
    outcome.last_losses = losses;

    std::vector<std::pair<nn::ParamTensor*, Mat>> grads;
    for (auto& [p, v] : pb.bound) grads.emplace_back(p, t.grad(v));
    adam.step(grads);
    outcome.steps_run = step;
  }

  log.save(out_dir / "loss_log.csv");
  const uint64_t ch = config_hash(cfg.raw);
  save_checkpoint(out_dir / "reference_encoder.ckpt", ref.all_params(),
                  "reference_encoder", kReferenceEncoderFingerprint, cfg.seed,
                  ch);
  save_checkpoint(out_dir / "acoustic_model.ckpt", acoustic.all_params(),
                  "acoustic_model", kAcousticFingerprint, cfg.seed, ch,
                  {{"vocab_size", acoustic.cfg.vocab_size}});
  detail_train::write_audit(out_dir, hashes_before,
                            detail_train::hash_modules(modules));
  return outcome;
}

// ---- target extraction ------------------------------------------------------------------

// Frozen teacher, running BN statistics; one [1 x 256] tensor per utterance.
inline TensorMap extract_targets(const Dataset& data,
                                 ReferenceEncoderParams& ref) {
  TensorMap out;
  for (const auto& u : data.utterances) {
    if (u.mel.rows() == 0) throw DataError("utterance " + u.id() + " has no mel");
    StyleEmbedding s = reference_encode(ref, u.mel);
    out[u.id()] = Tensor::from_matrix(s.values);
  }
  return out;
}

// ---- stage 2: distillation -----------------------------------------------------------------

// Embeds every utterance's window once up front.
inline std::vector<ContextWindow> embed_all_windows(
    const Dataset& data, const EmbeddingProvider& provider, int l_context) {
  std::vector<ContextWindow> out;
  out.reserve(data.utterances.size());
  for (const auto& u : data.utterances)
    out.push_back(embed_window(data.window_for(u, l_context), provider));
  return out;
}

namespace detail_train {

// Shared distillation loop for the hierarchical and plain students.
// bind_fn:    (Tape&, ParamBinder&) -> Bound
// forward_fn: (Tape&, const Bound&, const ContextWindow&) -> Var [1 x 256]
template <typename BindFn, typename ForwardFn>
StageOutcome distill_loop(const Dataset& data,
                          const std::vector<ContextWindow>& windows,
                          const TensorMap& targets,
                          const TrainingStageConfig& cfg,
                          const fs::path& out_dir, const std::string& log_name,
                          const char* sampler_tag, BindFn bind_fn,
                          ForwardFn forward_fn) {
  for (const auto& u : data.utterances)
    if (!targets.count(u.id()))
      throw DataError("no style target for utterance " + u.id());

  const bool use_l1 = cfg.distill_loss == "l1";
  const std::string loss_name = "distill_" + cfg.distill_loss;

  auto full_loss = [&]() {
    double acc = 0.0;
    for (size_t i = 0; i < data.utterances.size(); ++i) {
      ad::Tape t;
      nn::ParamBinder pb{&t, false};
      auto bound = bind_fn(t, pb);
      ad::Var pred = forward_fn(t, bound, windows[i]);
      Mat target = targets.at(data.utterances[i].id()).to_matrix();
      acc += use_l1 ? (t.val(pred) - target).cwiseAbs().mean()
                    : (t.val(pred) - target).array().square().mean();
    }
    return acc / static_cast<double>(data.utterances.size());
  };

  StageOutcome outcome;
  outcome.initial_full_loss = full_loss();

  Adam adam({0.9, 0.98, 1e-9, cfg.schedule, cfg.grad_clip});
  BatchSampler sampler(data.utterances.size(), cfg.seed, sampler_tag);
  LossLog log;
  for (int step = 1; step <= cfg.steps; ++step) {
    auto batch = sampler.next(cfg.batch_size);
    ad::Tape t;
    nn::ParamBinder pb{&t, true};
    auto bound = bind_fn(t, pb);
    std::vector<std::string> ids;
    ad::Var loss;
    for (size_t bi : batch) {
      const Utterance& u = data.utterances[bi];
      ids.push_back(u.id());
      ad::Var pred = forward_fn(t, bound, windows[bi]);
      ad::Var target = t.constant(targets.at(u.id()).to_matrix());
      ad::Var l = use_l1 ? ad::mae(t, pred, target) : ad::mse(t, pred, target);
      loss = loss.valid() ? ad::add(t, loss, l) : l;
    }
    loss = ad::scale(t, loss, 1.0 / static_cast<double>(batch.size()));
    t.backward(loss);

    std::map<std::string, double> losses = {{loss_name, t.val(loss)(0, 0)}};
    check_finite_or_dump(losses, step, ids, out_dir);
    log.append(step, loss_name, losses[loss_name]);
    if (step == 1) outcome.first_losses = losses;
    outcome.last_losses = losses;

    std::vector<std::pair<nn::ParamTensor*, Mat>> grads;
    for (auto& [p, v] : pb.bound) grads.emplace_back(p, t.grad(v));
    adam.step(grads);
    outcome.steps_run = step;
  }
  outcome.final_full_loss = full_loss();
  log.save(out_dir / log_name);
  return outcome;
}

}  // namespace detail_train

// Frozen modules re-serialized by a stage for the byte-level freeze audit.
struct FrozenModule {
  std::string name;
  std::string fingerprint;
  std::vector<nn::ParamTensor*> params;
  nlohmann::json extra = nlohmann::json::object();
};

struct Stage2Result {
  StageOutcome hierarchical;
  StageOutcome plain;  // only when cfg.ablation
  bool ran_ablation = false;
};

inline Stage2Result run_stage2(const Dataset& data,
                               const EmbeddingProvider& provider,
                               const TensorMap& targets,
                               ContextEncoderParams& student,
                               PlainEncoderParams* plain_student,
                               const TrainingStageConfig& cfg,
                               const fs::path& out_dir,
                               const std::vector<FrozenModule>& frozen = {}) {
  if (data.utterances.empty()) throw DataError("stage 2: empty dataset");
  fs::create_directories(out_dir);
  auto windows = embed_all_windows(data, provider, cfg.l_context);

  std::vector<std::pair<std::string, std::vector<nn::ParamTensor*>>> audited;
  audited.emplace_back("context_encoder", student.all_params());
  for (const auto& f : frozen) audited.emplace_back(f.name, f.params);
  auto hashes_before = detail_train::hash_modules(audited);

  Stage2Result result;
  result.hierarchical = detail_train::distill_loop(
      data, windows, targets, cfg, out_dir, "loss_log.csv", "stage2.batches",
      [&](ad::Tape& t, nn::ParamBinder& pb) { return bind(pb, student); },
      [&](ad::Tape& t, const ContextEncoderBound& b, const ContextWindow& w) {
        return predict_style(t, b, student.positional_encoding, w);
      });

  if (cfg.ablation && plain_student != nullptr) {
    result.ran_ablation = true;
    result.plain = detail_train::distill_loop(
        data, windows, targets, cfg, out_dir, "loss_log_plain.csv",
        "stage2.batches",  // identical sampling for a fair comparison
        [&](ad::Tape& t, nn::ParamBinder& pb) {
          return bind(pb, *plain_student);
        },
        [&](ad::Tape& t, const PlainEncoderBound& b, const ContextWindow& w) {
          return plain_encode(t, b, w);
        });
    nlohmann::json ablation = {
        {"hierarchical",
         {{"initial_full_loss", result.hierarchical.initial_full_loss},
          {"final_full_loss", result.hierarchical.final_full_loss}}},
        {"plain",
         {{"initial_full_loss", result.plain.initial_full_loss},
          {"final_full_loss", result.plain.final_full_loss}}},
        {"loss", "distill_" + cfg.distill_loss},
        {"steps", cfg.steps}};
    write_file_atomic(out_dir / "ablation.json", ablation.dump(2) + "\n");
  }

  const uint64_t ch = config_hash(cfg.raw);
  save_checkpoint(out_dir / "context_encoder.ckpt", student.all_params(),
                  "context_encoder", kContextEncoderFingerprint, cfg.seed, ch,
                  {{"l_context", student.half_width},
                   {"max_sentences", student.max_sentences}});
  if (result.ran_ablation)
    save_checkpoint(out_dir / "plain_encoder.ckpt",
                    plain_student->all_params(), "plain_encoder",
                    "plainenc-v1 gru256 final-state", cfg.seed, ch);
  for (const auto& f : frozen)
    save_checkpoint(out_dir / (f.name + ".ckpt"), f.params, f.name,
                    f.fingerprint, cfg.seed, ch, f.extra);
  detail_train::write_audit(out_dir, hashes_before,
                            detail_train::hash_modules(audited));
  return result;
}

// ---- stage 3: joint fine-tuning ---------------------------------------------------------

inline StageOutcome run_stage3(const Dataset& data,
                               const EmbeddingProvider& provider,
                               ContextEncoderParams& student,
                               AcousticParams& acoustic,
                               const TrainingStageConfig& cfg,
                               const fs::path& out_dir,
                               const std::vector<FrozenModule>& frozen = {}) {
  if (data.utterances.empty()) throw DataError("stage 3: empty dataset");
  fs::create_directories(out_dir);
  auto windows = embed_all_windows(data, provider, cfg.l_context);

  std::vector<std::pair<std::string, std::vector<nn::ParamTensor*>>> audited;
  audited.emplace_back("context_encoder", student.all_params());
  audited.emplace_back("acoustic_model", acoustic.all_params());
  for (const auto& f : frozen) audited.emplace_back(f.name, f.params);
  auto hashes_before = detail_train::hash_modules(audited);

  Adam adam({0.9, 0.98, 1e-9, cfg.schedule, cfg.grad_clip});
  detail_train::BatchSampler sampler(data.utterances.size(), cfg.seed,
                                     "stage3.batches");
  Rng dropout_rng = Rng::tagged(cfg.seed, "stage3.dropout");
  LossLog log;
  StageOutcome outcome;

  for (int step = 1; step <= cfg.steps; ++step) {
    auto batch = sampler.next(cfg.batch_size);
    ad::Tape t;
    nn::ParamBinder pb{&t, true};
    auto sb = bind(pb, student);
    auto ab = bind(pb, acoustic);

    std::vector<std::string> ids;
    ad::Var mel_l, dur_l, pit_l, ene_l;
    for (size_t bi : batch) {
      const Utterance& u = data.utterances[bi];
      ids.push_back(u.id());
      ad::Var style =
          predict_style(t, sb, student.positional_encoding, windows[bi]);
      auto l = detail_train::tts_losses(t, ab, acoustic, u, style,
                                        &dropout_rng);
      mel_l = mel_l.valid() ? ad::add(t, mel_l, l.mel_mae) : l.mel_mae;
      dur_l = dur_l.valid() ? ad::add(t, dur_l, l.duration_mse) : l.duration_mse;
      pit_l = pit_l.valid() ? ad::add(t, pit_l, l.pitch_mse) : l.pitch_mse;
      ene_l = ene_l.valid() ? ad::add(t, ene_l, l.energy_mse) : l.energy_mse;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    mel_l = ad::scale(t, mel_l, inv_b);
    dur_l = ad::scale(t, dur_l, inv_b);
    pit_l = ad::scale(t, pit_l, inv_b);
    ene_l = ad::scale(t, ene_l, inv_b);
    ad::Var total =
        ad::add(t, ad::add(t, mel_l, dur_l), ad::add(t, pit_l, ene_l));
    t.backward(total);

    std::map<std::string, double> losses = {
        {"mel_mae", t.val(mel_l)(0, 0)},
        {"duration_mse", t.val(dur_l)(0, 0)},
        {"pitch_mse", t.val(pit_l)(0, 0)},
        {"energy_mse", t.val(ene_l)(0, 0)},
        {"total", t.val(total)(0, 0)}};
    detail_train::check_finite_or_dump(losses, step, ids, out_dir);
    for (const auto& [name, v] : losses) log.append(step, name, v);
    if (step == 1) outcome.first_losses = losses;
    outcome.last_losses = losses;

    std::vector<std::pair<nn::ParamTensor*, Mat>> grads;
    for (auto& [p, v] : pb.bound) grads.emplace_back(p, t.grad(v));
    adam.step(grads);
    outcome.steps_run = step;
  }

  log.save(out_dir / "loss_log.csv");
  const uint64_t ch = config_hash(cfg.raw);
  save_checkpoint(out_dir / "context_encoder.ckpt", student.all_params(),
                  "context_encoder", kContextEncoderFingerprint, cfg.seed, ch,
                  {{"l_context", student.half_width},
                   {"max_sentences", student.max_sentences}});
  save_checkpoint(out_dir / "acoustic_model.ckpt", acoustic.all_params(),
                  "acoustic_model", kAcousticFingerprint, cfg.seed, ch,
                  {{"vocab_size", acoustic.cfg.vocab_size}});
  for (const auto& f : frozen)
    save_checkpoint(out_dir / (f.name + ".ckpt"), f.params, f.name,
                    f.fingerprint, cfg.seed, ch, f.extra);
  detail_train::write_audit(out_dir, hashes_before,
                            detail_train::hash_modules(audited));
  return outcome;
}

}  // namespace ctts
