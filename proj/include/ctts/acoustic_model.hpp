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
// Non-autoregressive phoneme-to-mel acoustic model. The style embedding is
// replicated to phoneme level and added to the encoder output before the
// variance predictors; duration, pitch and energy are predicted at phoneme
// level and the length regulator expands to frame level only afterwards.
// Variance wiring follows the cumulative convention: pitch embedding feeds
// the energy predictor.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ctts/autodiff.hpp"
#include "ctts/nn.hpp"
#include "ctts/reference_encoder.hpp"
#include "ctts/style.hpp"

namespace ctts {

inline constexpr const char* kAcousticFingerprint =
    "am-v1 fft4+4(h256,heads2,filter1024,k3+k1-zeropad) "
    "varpred(conv3x2-replpad,drop0.5,cumulative dur->pitch->energy) "
    "lr-after-variance dur-log1p-roundhalfup style-add-encoder-only "
    "pitch-energy-standardized";

struct PhonemeSequence {
  std::vector<int> ids;  // phoneme / prosody-tag ids

  size_t size() const { return ids.size(); }
};

struct VarianceTargets {
  std::vector<int> duration;     // frames per phoneme, >= 0
  std::vector<double> pitch;     // Hz, phoneme-averaged; 0 = unvoiced
  std::vector<double> energy;    // phoneme-averaged magnitude
};

struct AcousticConfig {
  int vocab_size = 0;
  int hidden = kStyleDim;  // 256; must match the style dim for injection
  int encoder_blocks = 4;
  int decoder_blocks = 4;
  int heads = 2;
  int conv_filter = 1024;
  double variance_dropout = 0.5;
  int max_frames = 4096;
  int mel_channels = kMelChannels;
};

// ---- variance predictor ------------------------------------------------------

// conv1d(k3, replicate) -> ReLU -> LN -> dropout -> conv1d -> ReLU -> LN ->
// dropout -> linear(256 -> 1). Replicate padding keeps predictions uniform
// across positions when the input rows are uniform (style broadcast).
struct VariancePredictorParams {
  nn::ParamTensor conv1_w, conv1_b, conv2_w, conv2_b;
  nn::LayerNormParams ln1, ln2;
  nn::LinearParams proj;

  void init(Rng& rng, const std::string& prefix, int dim) {
    conv1_w = {prefix + ".conv1.w", nn::xavier_uniform(rng, dim * 3, dim)};
    conv1_b = {prefix + ".conv1.b", Mat::Zero(1, dim)};
    conv2_w = {prefix + ".conv2.w", nn::xavier_uniform(rng, dim * 3, dim)};
    conv2_b = {prefix + ".conv2.b", Mat::Zero(1, dim)};
    ln1.init(prefix + ".ln1", dim);
    ln2.init(prefix + ".ln2", dim);
    proj.init(rng, prefix + ".proj", dim, 1);
  }
  void collect(std::vector<nn::ParamTensor*>& out) {
    out.push_back(&conv1_w);
    out.push_back(&conv1_b);
    out.push_back(&conv2_w);
    out.push_back(&conv2_b);
    ln1.collect(out);
    ln2.collect(out);
    proj.collect(out);
  }
};

struct VariancePredictorBound {
  ad::Var conv1_w, conv1_b, conv2_w, conv2_b;
  nn::LayerNormBound ln1, ln2;
  nn::LinearBound proj;
};

inline VariancePredictorBound bind(nn::ParamBinder& pb,
                                   VariancePredictorParams& p) {
  return {pb(p.conv1_w), pb(p.conv1_b), pb(p.conv2_w), pb(p.conv2_b),
          bind(pb, p.ln1), bind(pb, p.ln2), bind(pb, p.proj)};
}

inline ad::Var variance_predict(ad::Tape& t, const VariancePredictorBound& vp,
                                ad::Var x, double dropout_p, Rng* rng) {
  ad::Var h = ad::relu(t, ad::conv1d(t, x, vp.conv1_w, vp.conv1_b, 3,
                                     ad::Pad1d::kReplicate));
  h = nn::dropout(t, nn::layer_norm(t, vp.ln1, h), dropout_p, rng);
  h = ad::relu(t, ad::conv1d(t, h, vp.conv2_w, vp.conv2_b, 3,
                             ad::Pad1d::kReplicate));
  h = nn::dropout(t, nn::layer_norm(t, vp.ln2, h), dropout_p, rng);
  return nn::linear(t, vp.proj, h);  // [M x 1]
}

// ---- parameters ---------------------------------------------------------------

struct AcousticParams {
  AcousticConfig cfg;
  nn::ParamTensor embedding;  // [vocab x 256]
  std::vector<nn::FftBlockParams> encoder, decoder;
  VariancePredictorParams duration_pred, pitch_pred, energy_pred;
  nn::ParamTensor pitch_embed_w, pitch_embed_b;    // conv1d 1 -> 256, k3
  nn::ParamTensor energy_embed_w, energy_embed_b;
  nn::LinearParams mel_proj;  // 256 -> 80
  // corpus statistics for pitch/energy standardization, filled in stage 1
  nn::ParamTensor pitch_stats;   // [1 x 2] mean, std
  nn::ParamTensor energy_stats;  // [1 x 2]
  Mat positional_encoding;       // [max_frames x 256], fixed

  void init(Rng& rng, const AcousticConfig& config) {
    cfg = config;
    if (cfg.vocab_size <= 0)
      throw ValidationError("acoustic model needs a positive vocab size");
    embedding = {"acoustic.embedding",
                 nn::normal_init(rng, cfg.vocab_size, cfg.hidden)};
    encoder.resize(static_cast<size_t>(cfg.encoder_blocks));
    for (int i = 0; i < cfg.encoder_blocks; ++i)
      encoder[static_cast<size_t>(i)].init(
          rng, "acoustic.encoder" + std::to_string(i), cfg.hidden,
          cfg.conv_filter, cfg.heads);
    decoder.resize(static_cast<size_t>(cfg.decoder_blocks));
    for (int i = 0; i < cfg.decoder_blocks; ++i)
      decoder[static_cast<size_t>(i)].init(
          rng, "acoustic.decoder" + std::to_string(i), cfg.hidden,
          cfg.conv_filter, cfg.heads);
    duration_pred.init(rng, "acoustic.duration_pred", cfg.hidden);
    pitch_pred.init(rng, "acoustic.pitch_pred", cfg.hidden);
    energy_pred.init(rng, "acoustic.energy_pred", cfg.hidden);
    pitch_embed_w = {"acoustic.pitch_embed.w",
                     nn::xavier_uniform(rng, 3, cfg.hidden)};
    pitch_embed_b = {"acoustic.pitch_embed.b", Mat::Zero(1, cfg.hidden)};
    energy_embed_w = {"acoustic.energy_embed.w",
                      nn::xavier_uniform(rng, 3, cfg.hidden)};
    energy_embed_b = {"acoustic.energy_embed.b", Mat::Zero(1, cfg.hidden)};
    mel_proj.init(rng, "acoustic.mel_proj", cfg.hidden, cfg.mel_channels);
    Mat ps(1, 2);
    ps << 0.0, 1.0;
    pitch_stats = {"acoustic.pitch_stats", ps, false};
    energy_stats = {"acoustic.energy_stats", ps, false};
    positional_encoding =
        nn::sinusoidal_positional_encoding(cfg.max_frames, cfg.hidden);
  }

  std::vector<nn::ParamTensor*> all_params() {
    std::vector<nn::ParamTensor*> out;
    out.push_back(&embedding);
    for (auto& b : encoder) b.collect(out);
    for (auto& b : decoder) b.collect(out);
    duration_pred.collect(out);
    pitch_pred.collect(out);
    energy_pred.collect(out);
    out.push_back(&pitch_embed_w);
    out.push_back(&pitch_embed_b);
    out.push_back(&energy_embed_w);
    out.push_back(&energy_embed_b);
    mel_proj.collect(out);
    out.push_back(&pitch_stats);
    out.push_back(&energy_stats);
    return out;
  }

  double pitch_mean() const { return pitch_stats.value(0, 0); }
  double pitch_std() const { return pitch_stats.value(0, 1); }
  double energy_mean() const { return energy_stats.value(0, 0); }
  double energy_std() const { return energy_stats.value(0, 1); }
};

struct AcousticBound {
  ad::Var embedding;
  std::vector<nn::FftBlockBound> encoder, decoder;
  VariancePredictorBound duration_pred, pitch_pred, energy_pred;
  ad::Var pitch_embed_w, pitch_embed_b, energy_embed_w, energy_embed_b;
  nn::LinearBound mel_proj;
};

inline AcousticBound bind(nn::ParamBinder& pb, AcousticParams& p) {
  AcousticBound out;
  out.embedding = pb(p.embedding);
  for (auto& b : p.encoder) out.encoder.push_back(bind(pb, b));
  for (auto& b : p.decoder) out.decoder.push_back(bind(pb, b));
  out.duration_pred = bind(pb, p.duration_pred);
  out.pitch_pred = bind(pb, p.pitch_pred);
  out.energy_pred = bind(pb, p.energy_pred);
  out.pitch_embed_w = pb(p.pitch_embed_w);
  out.pitch_embed_b = pb(p.pitch_embed_b);
  out.energy_embed_w = pb(p.energy_embed_w);
  out.energy_embed_b = pb(p.energy_embed_b);
  out.mel_proj = bind(pb, p.mel_proj);
  return out;
}

// ---- length regulation ---------------------------------------------------------

inline std::vector<int> expansion_map(const std::vector<int>& durations) {
  std::vector<int> idx;
  for (size_t m = 0; m < durations.size(); ++m) {
    if (durations[m] < 0)
      throw ValidationError("negative duration at phoneme " +
                            std::to_string(m));
    for (int k = 0; k < durations[m]; ++k) idx.push_back(static_cast<int>(m));
  }
  if (idx.empty())
    throw DegenerateOutputError("all durations are zero (total length 0)");
  return idx;
}

// Row m repeated durations[m] times, order preserved.
inline Mat length_regulate(const Mat& features,
                           const std::vector<int>& durations) {
  if (features.rows() != static_cast<Eigen::Index>(durations.size()))
    throw ShapeError("length_regulate: " + std::to_string(features.rows()) +
                     " rows vs " + std::to_string(durations.size()) +
                     " durations");
  const std::vector<int> idx = expansion_map(durations);
  Mat out(static_cast<Eigen::Index>(idx.size()), features.cols());
  for (size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = features.row(idx[i]);
  return out;
}

// round-half-up of exp(log1p-domain prediction) - 1, floored at 0; if the
// total collapses to 0 the largest-logit phoneme is given one frame
inline std::vector<int> durations_from_log(const std::vector<double>& dur_log) {
  std::vector<int> out(dur_log.size());
  int total = 0;
  size_t argmax = 0;
  for (size_t i = 0; i < dur_log.size(); ++i) {
    double d = std::exp(dur_log[i]) - 1.0;
    out[i] = std::max(0, static_cast<int>(std::floor(d + 0.5)));
    total += out[i];
    if (dur_log[i] > dur_log[argmax]) argmax = i;
  }
  if (total == 0 && !out.empty()) out[argmax] = 1;
  return out;
}

// ---- forward -------------------------------------------------------------------

struct AcousticForward {
  ad::Var mel;          // [T x 80]
  ad::Var duration_log; // [M x 1], log(1+d) domain
  ad::Var pitch;        // [M x 1], standardized scale
  ad::Var energy;       // [M x 1], standardized scale
  std::vector<int> durations_used;  // expansion that produced T
};

// teacher == nullptr -> inference (predicted variances drive the expansion
// and embeddings); otherwise ground-truth values do, with pitch/energy
// already standardized by the caller.
inline AcousticForward acoustic_forward(ad::Tape& t, const AcousticBound& am,
                                        const AcousticParams& params,
                                        const PhonemeSequence& phonemes,
                                        ad::Var style,
                                        const VarianceTargets* teacher,
                                        Rng* dropout_rng) {
  const auto& cfg = params.cfg;
  const size_t m = phonemes.size();
  if (m == 0) throw EmptyInputError("phoneme sequence is empty");
  for (int id : phonemes.ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw ValidationError("phoneme id " + std::to_string(id) +
                            " outside vocabulary of " +
                            std::to_string(cfg.vocab_size));
  if (t.val(style).rows() != 1 || t.val(style).cols() != cfg.hidden)
    throw ShapeError("style embedding must be 1 x " +
                     std::to_string(cfg.hidden));
  if (teacher != nullptr &&
      (teacher->duration.size() != m || teacher->pitch.size() != m ||
       teacher->energy.size() != m))
    throw ShapeError("teacher variance lengths do not match phoneme count");

  // phoneme encoder
  ad::Var x = ad::gather_rows(t, am.embedding, phonemes.ids);
  x = ad::add(t, x, t.constant(params.positional_encoding.topRows(
                        static_cast<Eigen::Index>(m))));
  for (const auto& blk : am.encoder) x = nn::fft_block(t, blk, x);

  // style replicated to phoneme level and added before the variance adaptor
  ad::Var e_styled = ad::add_row_broadcast(t, x, style);

  AcousticForward out;
  out.duration_log = variance_predict(t, am.duration_pred, e_styled,
                                      cfg.variance_dropout, dropout_rng);
  out.pitch = variance_predict(t, am.pitch_pred, e_styled,
                               cfg.variance_dropout, dropout_rng);

  auto to_col = [&t, m](const std::vector<double>& v) {
    Mat c(static_cast<Eigen::Index>(m), 1);
    for (size_t i = 0; i < v.size(); ++i)
      c(static_cast<Eigen::Index>(i), 0) = v[i];
    return t.constant(std::move(c));
  };

  ad::Var pitch_source = out.pitch;
  if (teacher != nullptr) pitch_source = to_col(teacher->pitch);
  ad::Var with_pitch =
      ad::add(t, e_styled,
              ad::conv1d(t, pitch_source, am.pitch_embed_w, am.pitch_embed_b,
                         3, ad::Pad1d::kReplicate));

  out.energy = variance_predict(t, am.energy_pred, with_pitch,
                                cfg.variance_dropout, dropout_rng);
  ad::Var energy_source = out.energy;
  if (teacher != nullptr) energy_source = to_col(teacher->energy);
  ad::Var adapted =
      ad::add(t, with_pitch,
              ad::conv1d(t, energy_source, am.energy_embed_w,
                         am.energy_embed_b, 3, ad::Pad1d::kReplicate));

  // only now expand to frame level
  if (teacher != nullptr) {
    out.durations_used = teacher->duration;
  } else {
    const Mat& dl = t.val(out.duration_log);
    std::vector<double> dur_log(dl.data(), dl.data() + dl.size());
    out.durations_used = durations_from_log(dur_log);
  }
  std::vector<int> frame_idx = expansion_map(out.durations_used);
  if (static_cast<int>(frame_idx.size()) > cfg.max_frames)
    throw CapacityError("expansion to " + std::to_string(frame_idx.size()) +
                        " frames exceeds the positional table");

  ad::Var d = ad::gather_rows(t, adapted, frame_idx);
  d = ad::add(t, d, t.constant(params.positional_encoding.topRows(
                        static_cast<Eigen::Index>(frame_idx.size()))));
  for (const auto& blk : am.decoder) d = nn::fft_block(t, blk, d);
  out.mel = nn::linear(t, am.mel_proj, d);
  return out;
}

// ---- inference wrapper -----------------------------------------------------------

struct SynthesisResult {
  MelSpectrogram mel;
  VarianceTargets predicted;           // durations in frames, pitch/energy in
                                       // corpus units (Hz / magnitude)
  std::vector<double> frame_f0;        // phoneme pitch expanded by durations
  std::vector<double> frame_energy;
};

inline constexpr double kVoicingFloorHz = 20.0;  // below this, report unvoiced

inline SynthesisResult synthesize(AcousticParams& params,
                                  const PhonemeSequence& phonemes,
                                  const StyleEmbedding& style,
                                  const VarianceTargets* teacher = nullptr) {
  ad::Tape t;
  nn::ParamBinder pb{&t, false};
  auto bound = bind(pb, params);
  ad::Var style_var = t.constant(style.values);
  VarianceTargets teach_n;
  const VarianceTargets* teach_ptr = nullptr;
  if (teacher != nullptr) {
    teach_n = *teacher;
    for (auto& p : teach_n.pitch)
      p = (p - params.pitch_mean()) / params.pitch_std();
    for (auto& e : teach_n.energy)
      e = (e - params.energy_mean()) / params.energy_std();
    teach_ptr = &teach_n;
  }
  auto fwd = acoustic_forward(t, bound, params, phonemes, style_var, teach_ptr,
                              nullptr);

  SynthesisResult out;
  out.mel.frames = t.val(fwd.mel);
  out.predicted.duration = teacher != nullptr
                               ? [&] {
                                   const Mat& dl = t.val(fwd.duration_log);
                                   std::vector<double> v(dl.data(),
                                                         dl.data() + dl.size());
                                   return durations_from_log(v);
                                 }()
                               : fwd.durations_used;
  const Mat& pn = t.val(fwd.pitch);
  const Mat& en = t.val(fwd.energy);
  for (Eigen::Index i = 0; i < pn.rows(); ++i) {
    double hz = pn(i, 0) * params.pitch_std() + params.pitch_mean();
    if (hz < kVoicingFloorHz) hz = 0.0;
    out.predicted.pitch.push_back(hz);
    out.predicted.energy.push_back(en(i, 0) * params.energy_std() +
                                   params.energy_mean());
  }
  for (size_t i = 0; i < fwd.durations_used.size(); ++i)
    for (int k = 0; k < fwd.durations_used[i]; ++k) {
      out.frame_f0.push_back(out.predicted.pitch[i]);
      out.frame_energy.push_back(out.predicted.energy[i]);
    }
  return out;
}

// ---- losses --------------------------------------------------------------------

struct LossBundle {
  double mel_mae = 0.0;
  double duration_mse = 0.0;  // log(1+d) domain
  double pitch_mse = 0.0;
  double energy_mse = 0.0;

  double total() const {
    return mel_mae + duration_mse + pitch_mse + energy_mse;
  }
};

// Pure arithmetic on whatever scale the caller supplies: mel mean absolute
// error, duration MSE in log(1+d), pitch/energy MSE at phoneme level.
inline LossBundle compute_losses(const Mat& pred_mel, const Mat& gt_mel,
                                 const VarianceTargets& pred,
                                 const VarianceTargets& gt) {
  if (pred_mel.rows() != gt_mel.rows() || pred_mel.cols() != gt_mel.cols())
    throw ShapeError("compute_losses: mel shapes differ (" +
                     std::to_string(pred_mel.rows()) + " vs " +
                     std::to_string(gt_mel.rows()) + " frames)");
  if (pred.duration.size() != gt.duration.size() ||
      pred.pitch.size() != gt.pitch.size() ||
      pred.energy.size() != gt.energy.size())
    throw ShapeError("compute_losses: variance lengths differ");
  LossBundle out;
  out.mel_mae = (pred_mel - gt_mel).cwiseAbs().mean();
  double dsum = 0.0, psum = 0.0, esum = 0.0;
  const size_t m = pred.duration.size();
  for (size_t i = 0; i < m; ++i) {
    double d = std::log1p(static_cast<double>(pred.duration[i])) -
               std::log1p(static_cast<double>(gt.duration[i]));
    dsum += d * d;
    double p = pred.pitch[i] - gt.pitch[i];
    psum += p * p;
    double e = pred.energy[i] - gt.energy[i];
    esum += e * e;
  }
  out.duration_mse = dsum / static_cast<double>(m);
  out.pitch_mse = psum / static_cast<double>(m);
  out.energy_mse = esum / static_cast<double>(m);
  return out;
}

}  // namespace ctts
