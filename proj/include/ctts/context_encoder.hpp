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
// Hierarchical context encoder: two stacked attention networks predict the
// utterance style embedding from the context window. Each level runs a
// bidirectional GRU followed by scaled dot-product attention with a learned
// query; the sentence level additionally adds a sinusoidal positional
// encoding to the GRU outputs. A plain single-GRU encoder is kept as the
// ablation baseline.

#pragma once

#include <string>
#include <vector>

#include "ctts/autodiff.hpp"
#include "ctts/context_window.hpp"
#include "ctts/nn.hpp"
#include "ctts/style.hpp"

namespace ctts {

inline constexpr const char* kContextEncoderFingerprint =
    "ctxenc-v1 bigru128x2 attn(kv256 q-learned sqrt-dq=16) "
    "pe-sin-sentence-level gru-single-bias";

// attention diagnostics for one level (dumped to JSON by the plot command)
struct AttentionTrace {
  std::vector<double> weights;
  std::vector<double> logits;
};

// ---- parameter blocks -------------------------------------------------------

struct AttentionLevelParams {
  nn::BiGruParams bigru;       // input 768 or 256, hidden 128 per direction
  nn::ParamTensor w_k, w_v;    // [256 x 256]
  nn::ParamTensor query;       // [1 x 256]

  void init(Rng& rng, const std::string& prefix, int input_dim) {
    bigru.init(rng, prefix + ".bigru", input_dim, kStyleDim / 2);
    w_k = {prefix + ".w_k", nn::xavier_uniform(rng, kStyleDim, kStyleDim)};
    w_v = {prefix + ".w_v", nn::xavier_uniform(rng, kStyleDim, kStyleDim)};
    query = {prefix + ".query", nn::uniform_init(rng, 1, kStyleDim, 0.1)};
  }
  void collect(std::vector<nn::ParamTensor*>& out) {
    bigru.collect(out);
    out.push_back(&w_k);
    out.push_back(&w_v);
    out.push_back(&query);
  }
};

struct AttentionLevelBound {
  nn::BiGruBound bigru;
  ad::Var w_k, w_v, query;
};

inline AttentionLevelBound bind(nn::ParamBinder& pb, AttentionLevelParams& p) {
  return {bind(pb, p.bigru), pb(p.w_k), pb(p.w_v), pb(p.query)};
}

struct ContextEncoderParams {
  AttentionLevelParams phrase_level;    // input 768
  AttentionLevelParams sentence_level;  // input 256
  Mat positional_encoding;              // [max_sentences x 256], fixed
  int max_sentences = 16;
  int half_width = 2;  // L, recorded in the checkpoint sidecar

  void init(Rng& rng, int l_context = 2, int max_sent = 16) {
    half_width = l_context;
    max_sentences = max_sent;
    phrase_level.init(rng, "context_encoder.phrase", kPhraseEmbeddingDim);
    sentence_level.init(rng, "context_encoder.sentence", kStyleDim);
    positional_encoding =
        nn::sinusoidal_positional_encoding(max_sentences, kStyleDim);
  }

  std::vector<nn::ParamTensor*> all_params() {
    std::vector<nn::ParamTensor*> out;
    phrase_level.collect(out);
    sentence_level.collect(out);
    return out;
  }
};

struct ContextEncoderBound {
  AttentionLevelBound phrase_level, sentence_level;
};

inline ContextEncoderBound bind(nn::ParamBinder& pb, ContextEncoderParams& p) {
  return {bind(pb, p.phrase_level), bind(pb, p.sentence_level)};
}

// ---- attention core ---------------------------------------------------------

// K = H W_k, V = H W_v, w = softmax(q K^T / sqrt(256)), out = w V.
inline ad::Var query_attention(ad::Tape& t, const AttentionLevelBound& lvl,
                               ad::Var h, AttentionTrace* trace) {
  ad::Var k = ad::matmul(t, h, lvl.w_k);
  ad::Var v = ad::matmul(t, h, lvl.w_v);
  ad::Var logits = ad::scale(t, ad::matmul_nt(t, lvl.query, k),
                             1.0 / std::sqrt(static_cast<double>(kStyleDim)));
  ad::Var weights = ad::softmax_rows(t, logits);
  if (trace != nullptr) {
    trace->logits.assign(t.val(logits).data(),
                         t.val(logits).data() + t.val(logits).size());
    trace->weights.assign(t.val(weights).data(),
                          t.val(weights).data() + t.val(weights).size());
  }
  return ad::matmul(t, weights, v);
}

// Phrase embeddings of one sentence [N x 768] -> sentence embedding [1 x 256].
inline ad::Var inter_phrase_encode(ad::Tape& t, const AttentionLevelBound& lvl,
                                   ad::Var phrases,
                                   AttentionTrace* trace = nullptr) {
  if (t.val(phrases).rows() < 1)
    throw EmptyInputError("inter_phrase_encode: no phrases");
  if (t.val(phrases).cols() != kPhraseEmbeddingDim)
    throw ShapeError("inter_phrase_encode: phrase dim must be 768");
  ad::Var h = nn::bigru_forward(t, lvl.bigru, phrases);
  return query_attention(t, lvl, h, trace);
}

// Sentence embeddings [n x 256] -> style embedding [1 x 256]. Positional
// encoding row p is added to the BiGRU output at position p.
inline ad::Var inter_sentence_encode(ad::Tape& t,
                                     const AttentionLevelBound& lvl,
                                     const Mat& positional_encoding,
                                     ad::Var sentence_embs,
                                     AttentionTrace* trace = nullptr) {
  const Eigen::Index n = t.val(sentence_embs).rows();
  if (n < 1) throw EmptyInputError("inter_sentence_encode: no sentences");
  if (n > positional_encoding.rows())
    throw CapacityError(std::to_string(n) +
                        " sentences exceed the positional table of " +
                        std::to_string(positional_encoding.rows()));
  if (t.val(sentence_embs).cols() != kStyleDim)
    throw ShapeError("inter_sentence_encode: sentence dim must be 256");
  ad::Var h = nn::bigru_forward(t, lvl.bigru, sentence_embs);
  h = ad::add(t, h, t.constant(positional_encoding.topRows(n)));
  return query_attention(t, lvl, h, trace);
}

struct PredictStyleTrace {
  std::vector<AttentionTrace> phrase_levels;  // one per sentence
  AttentionTrace sentence_level;
};

// Full hierarchical pass over an embedded window. Sentence position index is
// the 0-based offset from the earliest included sentence.
inline ad::Var predict_style(ad::Tape& t, const ContextEncoderBound& enc,
                             const Mat& positional_encoding,
                             const ContextWindow& window,
                             PredictStyleTrace* trace = nullptr) {
  if (!window.embedded())
    throw ValidationError("window around " + window.center.id() +
                          " has no phrase embeddings");
  std::vector<ad::Var> sentence_rows;
  sentence_rows.reserve(window.phrase_embeddings.size());
  if (trace != nullptr)
    trace->phrase_levels.resize(window.phrase_embeddings.size());
  for (size_t i = 0; i < window.phrase_embeddings.size(); ++i) {
    ad::Var phrases = t.constant(window.phrase_embeddings[i].embeddings);
    AttentionTrace* tr =
        trace != nullptr ? &trace->phrase_levels[i] : nullptr;
    sentence_rows.push_back(inter_phrase_encode(t, enc.phrase_level, phrases, tr));
  }
  ad::Var stacked = ad::concat_rows(t, sentence_rows);
  return inter_sentence_encode(t, enc.sentence_level, positional_encoding,
                               stacked,
                               trace != nullptr ? &trace->sentence_level : nullptr);
}

// Convenience non-tape wrapper.
inline StyleEmbedding predict_style(ContextEncoderParams& params,
                                    const ContextWindow& window,
                                    PredictStyleTrace* trace = nullptr) {
  ad::Tape t;
  nn::ParamBinder pb{&t, false};
  auto bound = bind(pb, params);
  ad::Var out =
      predict_style(t, bound, params.positional_encoding, window, trace);
  return StyleEmbedding::from_row(t.val(out));
}

// ---- plain baseline (no inter-sentence structure) ---------------------------

struct PlainEncoderParams {
  nn::GruParams gru;  // input 768, hidden 256

  void init(Rng& rng) {
    gru.init(rng, "plain_encoder.gru", kPhraseEmbeddingDim, kStyleDim);
  }
  std::vector<nn::ParamTensor*> all_params() {
    std::vector<nn::ParamTensor*> out;
    gru.collect(out);
    return out;
  }
};

struct PlainEncoderBound {
  nn::GruBound gru;
};

inline PlainEncoderBound bind(nn::ParamBinder& pb, PlainEncoderParams& p) {
  return {bind(pb, p.gru)};
}

// All phrase embeddings concatenated in window order through one GRU; the
// final hidden state is the style embedding.
inline ad::Var plain_encode(ad::Tape& t, const PlainEncoderBound& enc,
                            const ContextWindow& window) {
  if (!window.embedded())
    throw ValidationError("window around " + window.center.id() +
                          " has no phrase embeddings");
  size_t total = 0;
  for (const auto& pe : window.phrase_embeddings)
    total += static_cast<size_t>(pe.embeddings.rows());
  if (total == 0) throw EmptyInputError("plain_encode: no phrases in window");
  Mat flat(static_cast<Eigen::Index>(total), kPhraseEmbeddingDim);
  Eigen::Index r = 0;
  for (const auto& pe : window.phrase_embeddings) {
    flat.middleRows(r, pe.embeddings.rows()) = pe.embeddings;
    r += pe.embeddings.rows();
  }
  return nn::gru_forward(t, enc.gru, t.constant(std::move(flat))).final_state;
}

inline StyleEmbedding plain_encode(PlainEncoderParams& params,
                                   const ContextWindow& window) {
  ad::Tape t;
  nn::ParamBinder pb{&t, false};
  auto bound = bind(pb, params);
  return StyleEmbedding::from_row(t.val(plain_encode(t, bound, window)));
}

}  // namespace ctts
