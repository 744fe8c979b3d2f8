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
// Reference encoder: mel-spectrogram -> 256-dim style embedding. Six 3x3
// stride-2 conv layers (channels 32,32,64,64,128,128) with batch norm and
// ReLU, a unidirectional GRU over the flattened channel x frequency features,
// and a Tanh-bounded fully-connected output. The distillation teacher.

#pragma once

#include <array>
#include <string>
#include <vector>

#include "ctts/autodiff.hpp"
#include "ctts/nn.hpp"
#include "ctts/style.hpp"

namespace ctts {

inline constexpr const char* kReferenceEncoderFingerprint =
    "refenc-v1 conv3x3s2x6(32,32,64,64,128,128) bn(conv-bn-relu,track0.1) "
    "gru128(chan-major-flatten) fc256 tanh pad-T64";

inline constexpr int kMelChannels = 80;
inline constexpr int kMinRefFrames = 64;  // safe floor for six halvings

struct MelSpectrogram {
  Mat frames;  // [T x 80], log-mel
  int sample_rate = 24000;
  int hop = 240;
  int frame_size = 1200;
};

struct ConvBnLayerParams {
  nn::ParamTensor w;      // [(Cin*9) x Cout]
  nn::ParamTensor b;      // [1 x Cout]
  nn::ParamTensor gamma;  // [1 x Cout]
  nn::ParamTensor beta;   // [1 x Cout]
  nn::ParamTensor running_mean;  // [1 x Cout], not trained
  nn::ParamTensor running_var;   // [1 x Cout], not trained
  int cin = 0, cout = 0;

  void init(Rng& rng, const std::string& prefix, int in, int out) {
    cin = in;
    cout = out;
    w = {prefix + ".w", nn::xavier_uniform(rng, in * 9, out)};
    b = {prefix + ".b", Mat::Zero(1, out)};
    gamma = {prefix + ".gamma", Mat::Ones(1, out)};
    beta = {prefix + ".beta", Mat::Zero(1, out)};
    running_mean = {prefix + ".running_mean", Mat::Zero(1, out), false};
    running_var = {prefix + ".running_var", Mat::Ones(1, out), false};
  }
  void collect(std::vector<nn::ParamTensor*>& out) {
    out.push_back(&w);
    out.push_back(&b);
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&running_mean);
    out.push_back(&running_var);
  }
};

struct ConvBnLayerBound {
  ad::Var w, b, gamma, beta;
};

inline ConvBnLayerBound bind(nn::ParamBinder& pb, ConvBnLayerParams& p) {
  return {pb(p.w), pb(p.b), pb(p.gamma), pb(p.beta)};
}

struct ReferenceEncoderParams {
  static constexpr std::array<int, 6> kChannels = {32, 32, 64, 64, 128, 128};
  std::array<ConvBnLayerParams, 6> conv;
  nn::GruParams gru;     // input = 128 channels x 2 freq = 256, hidden 128
  nn::LinearParams fc;   // 128 -> 256
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void init(Rng& rng) {
    int cin = 1;
    for (size_t i = 0; i < conv.size(); ++i) {
      conv[i].init(rng, "reference_encoder.conv" + std::to_string(i), cin,
                   kChannels[i]);
      cin = kChannels[i];
    }
    gru.init(rng, "reference_encoder.gru", 256, 128);
    fc.init(rng, "reference_encoder.fc", 128, kStyleDim);
  }

  std::vector<nn::ParamTensor*> all_params() {
    std::vector<nn::ParamTensor*> out;
    for (auto& c : conv) c.collect(out);
    gru.collect(out);
    fc.collect(out);
    return out;
  }
};

struct ReferenceEncoderBound {
  std::array<ConvBnLayerBound, 6> conv;
  nn::GruBound gru;
  nn::LinearBound fc;
};

inline ReferenceEncoderBound bind(nn::ParamBinder& pb,
                                  ReferenceEncoderParams& p) {
  ReferenceEncoderBound out;
  for (size_t i = 0; i < p.conv.size(); ++i) out.conv[i] = bind(pb, p.conv[i]);
  out.gru = bind(pb, p.gru);
  out.fc = bind(pb, p.fc);
  return out;
}

// Forward pass. `training` selects batch statistics (and updates the running
// averages held in `params`); frozen/inference mode uses the stored running
// statistics only.
inline ad::Var reference_encode(ad::Tape& t, const ReferenceEncoderBound& enc,
                                ReferenceEncoderParams& params, const Mat& mel,
                                bool training) {
  if (mel.cols() != kMelChannels)
    throw ShapeError("mel has " + std::to_string(mel.cols()) +
                     " channels, expected 80");
  if (mel.rows() < 1) throw EmptyInputError("mel has no frames");

  // right-pad short inputs with zeros to the safe minimum
  Mat padded;
  if (mel.rows() < kMinRefFrames) {
    padded = Mat::Zero(kMinRefFrames, kMelChannels);
    padded.topRows(mel.rows()) = mel;
  } else {
    padded = mel;
  }

  ad::Var x = t.constant(std::move(padded));
  int cin = 1;
  int freq = kMelChannels;
  for (size_t i = 0; i < enc.conv.size(); ++i) {
    const int cout = ReferenceEncoderParams::kChannels[i];
    x = ad::conv2d_s2(t, x, enc.conv[i].w, enc.conv[i].b, cin, freq);
    freq = (freq + 1) / 2;
    Mat batch_mean, batch_var;
    x = ad::batch_norm(t, x, enc.conv[i].gamma, enc.conv[i].beta, cout, freq,
                       params.bn_eps, training,
                       params.conv[i].running_mean.value,
                       params.conv[i].running_var.value, &batch_mean,
                       &batch_var);
    if (training) {
      const double m = params.bn_momentum;
      params.conv[i].running_mean.value =
          (1.0 - m) * params.conv[i].running_mean.value + m * batch_mean;
      params.conv[i].running_var.value =
          (1.0 - m) * params.conv[i].running_var.value + m * batch_var;
    }
    x = ad::relu(t, x);
    cin = cout;
  }
  // x: [T6 x (128*freq)] with freq = 2 for 80 mel channels
  ad::Var h = nn::gru_forward(t, enc.gru, x).final_state;
  return ad::tanh_(t, nn::linear(t, enc.fc, h));
}

// Convenience non-tape wrapper (inference mode, running statistics).
inline StyleEmbedding reference_encode(ReferenceEncoderParams& params,
                                       const Mat& mel) {
  ad::Tape t;
  nn::ParamBinder pb{&t, false};
  auto bound = bind(pb, params);
  ad::Var out = reference_encode(t, bound, params, mel, false);
  return StyleEmbedding::from_row(t.val(out));
}

}  // namespace ctts
