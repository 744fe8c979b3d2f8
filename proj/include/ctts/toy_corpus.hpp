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
// Synthetic corpus generator. Each sentence carries a 3-dim latent style
// (pitch offset, speed factor, energy scale) that is a linear function of the
// mean stub embedding of its context window, so context genuinely predicts
// style. Features are procedurally generated mel-like log-spectra plus
// frame-level F0/energy and phoneme durations whose sum equals the frame
// count by construction. Everything is a deterministic function of the seed.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ctts/context_window.hpp"
#include "ctts/manifest.hpp"
#include "ctts/rng.hpp"

namespace ctts {

struct ToyCorpusConfig {
  uint64_t seed = 1;
  int n_documents = 8;
  int sentences_per_doc = 12;
  int l_context = 2;  // window used to derive the latent styles
};

struct ToyCorpus {
  ToyCorpusConfig cfg;
  Vocabulary vocab;
  Manifest manifest;                  // feature paths filled, root unset
  std::vector<Utterance> utterances;  // features in memory
  // diagnostics for the corpus oracle tests
  std::vector<std::array<double, 3>> latent_styles;  // pitch, speed, energy
  Mat context_features;  // [n_utterances x 768], style inputs
  uint64_t stub_seed = 0;
};

namespace toy {

inline const std::vector<std::string>& vowels() {
  static const std::vector<std::string> v = {"a", "e", "i", "o", "u"};
  return v;
}

inline const std::vector<std::string>& consonants() {
  static const std::vector<std::string> c = {"k", "t", "s", "m", "n",
                                             "r", "p", "g", "d", "b"};
  return c;
}

inline bool is_voiced(const std::string& sym) {
  for (const auto& v : vowels())
    if (sym == v) return true;
  return false;
}

inline Vocabulary make_vocab() {
  std::vector<std::string> syms;
  for (const auto& v : vowels()) syms.push_back(v);
  for (const auto& c : consonants()) syms.push_back(c);
  syms.push_back("#1");  // word-boundary prosody tag
  syms.push_back("sp");  // trailing pause
  return Vocabulary::from_symbols(std::move(syms));
}

// 40 CV(C)V-style words, seeded.
inline std::vector<std::string> make_lexicon(uint64_t seed) {
  Rng rng = Rng::tagged(seed, "toy.lexicon");
  std::vector<std::string> words;
  while (words.size() < 40) {
    std::string w = consonants()[rng.index(consonants().size())] +
                    vowels()[rng.index(vowels().size())];
    if (rng.uniform() < 0.5)
      w += consonants()[rng.index(consonants().size())];
    if (rng.uniform() < 0.3) w += vowels()[rng.index(vowels().size())];
    bool dup = false;
    for (const auto& x : words) dup = dup || (x == w);
    if (!dup) words.push_back(w);
  }
  return words;
}

// word -> phoneme symbols: one symbol per character
inline std::vector<std::string> word_phonemes(const std::string& word) {
  std::vector<std::string> out;
  for (char c : word) out.emplace_back(1, c);
  return out;
}

// smooth positive 80-channel template per phoneme symbol
inline Vec phoneme_template(uint64_t seed, const std::string& sym) {
  uint64_t h = fnv1a64(sym, fnv1a64("toy.template", fnv1a64_bytes(&seed, 8)));
  Vec t(kMelChannels);
  double c1 = 8.0 + 60.0 * u64_to_unit_double(splitmix64(h));
  double c2 = 8.0 + 60.0 * u64_to_unit_double(splitmix64(h));
  double w1 = 3.0 + 9.0 * u64_to_unit_double(splitmix64(h));
  double w2 = 3.0 + 9.0 * u64_to_unit_double(splitmix64(h));
  double a1 = 0.5 + 0.5 * u64_to_unit_double(splitmix64(h));
  double a2 = 0.3 + 0.4 * u64_to_unit_double(splitmix64(h));
  for (int c = 0; c < kMelChannels; ++c) {
    double d1 = (c - c1) / w1, d2 = (c - c2) / w2;
    t(c) = 0.1 + a1 * std::exp(-0.5 * d1 * d1) + a2 * std::exp(-0.5 * d2 * d2);
  }
  return t;
}

}  // namespace toy

inline ToyCorpus generate_toy_corpus(const ToyCorpusConfig& cfg) {
  if (cfg.n_documents < 1)
    throw ValidationError("toy corpus needs at least one document");
  if (cfg.sentences_per_doc < 1)
    throw ValidationError("toy corpus needs at least one sentence per doc");

  ToyCorpus corpus;
  corpus.cfg = cfg;
  corpus.vocab = toy::make_vocab();
  corpus.stub_seed = fnv1a64("toy.stub", fnv1a64_bytes(&cfg.seed, 8));
  const auto lexicon = toy::make_lexicon(cfg.seed);

  // ---- text ----
  Rng text_rng = Rng::tagged(cfg.seed, "toy.text");
  struct SentencePlan {
    std::string doc_id;
    int index = 0;
    std::vector<std::string> words;
  };
  std::vector<SentencePlan> plans;
  for (int d = 0; d < cfg.n_documents; ++d) {
    for (int s = 0; s < cfg.sentences_per_doc; ++s) {
      SentencePlan p;
      p.doc_id = "doc" + std::to_string(d);
      p.index = s;
      int n_words = 2 + static_cast<int>(text_rng.index(3));  // 2..4
      for (int w = 0; w < n_words; ++w)
        p.words.push_back(lexicon[text_rng.index(lexicon.size())]);
      plans.push_back(std::move(p));
    }
  }

  // ---- sentence records ----
  std::vector<Sentence> sentences;
  for (const auto& p : plans) {
    Sentence s;
    s.document_id = p.doc_id;
    s.index_in_document = p.index;
    for (size_t w = 0; w < p.words.size(); ++w) {
      size_t start = s.text.size();
      s.text += p.words[w];
      s.phrase_spans.emplace_back(start, s.text.size());
      if (w + 1 < p.words.size()) s.text += ' ';
    }
    sentences.push_back(std::move(s));
  }

  // ---- latent styles: linear in mean window stub embeddings ----
  // per-sentence feature = mean stub embedding of its own words
  Mat sent_feat(static_cast<Eigen::Index>(sentences.size()),
                kPhraseEmbeddingDim);
  for (size_t i = 0; i < sentences.size(); ++i) {
    Mat rows = stub_embed(corpus.stub_seed, sentences[i].phrases());
    sent_feat.row(static_cast<Eigen::Index>(i)) = rows.colwise().mean();
  }
  // context feature = mean over the (clamped) window
  std::map<std::string, std::vector<size_t>> doc_rows;
  for (size_t i = 0; i < sentences.size(); ++i)
    doc_rows[sentences[i].document_id].push_back(i);
  corpus.context_features =
      Mat(static_cast<Eigen::Index>(sentences.size()), kPhraseEmbeddingDim);
  for (const auto& [doc, rows] : doc_rows) {
    const int n = static_cast<int>(rows.size());
    for (int i = 0; i < n; ++i) {
      int lo = std::max(0, i - cfg.l_context);
      int hi = std::min(n - 1, i + cfg.l_context);
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(kPhraseEmbeddingDim);
      for (int j = lo; j <= hi; ++j)
        acc += sent_feat.row(static_cast<Eigen::Index>(rows[static_cast<size_t>(j)]));
      corpus.context_features.row(
          static_cast<Eigen::Index>(rows[static_cast<size_t>(i)])) =
          acc / static_cast<double>(hi - lo + 1);
    }
  }

  Rng map_rng = Rng::tagged(cfg.seed, "toy.style-map");
  Mat style_map(3, kPhraseEmbeddingDim);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < kPhraseEmbeddingDim; ++c)
      style_map(r, c) = map_rng.uniform(-1.0, 1.0);
  Mat raw = corpus.context_features * style_map.transpose();  // [n x 3]
  corpus.latent_styles.resize(sentences.size());
  for (int k = 0; k < 3; ++k) {
    double mean = raw.col(k).mean();
    double var = (raw.col(k).array() - mean).square().mean();
    double sd = std::sqrt(var);
    for (size_t i = 0; i < sentences.size(); ++i) {
      double v = sd > 1e-12
                     ? 0.4 * (raw(static_cast<Eigen::Index>(i), k) - mean) / sd
                     : 0.0;
      corpus.latent_styles[i][static_cast<size_t>(k)] =
          std::clamp(v, -1.0, 1.0);
    }
  }

  // ---- features ----
  Rng feat_rng = Rng::tagged(cfg.seed, "toy.features");
  for (size_t i = 0; i < sentences.size(); ++i) {
    const auto& plan = plans[i];
    const auto& latent = corpus.latent_styles[i];
    const double pitch_style = latent[0];
    const double speed_style = latent[1];
    const double energy_style = latent[2];

    Utterance u;
    u.record.document_id = plan.doc_id;
    u.record.index_in_document = plan.index;
    u.record.text = sentences[i].text;
    u.record.phrase_spans = sentences[i].phrase_spans;

    // phoneme sequence with prosody tags
    for (size_t w = 0; w < plan.words.size(); ++w) {
      for (const auto& ph : toy::word_phonemes(plan.words[w]))
        u.record.phoneme_sequence.push_back(ph);
      if (w + 1 < plan.words.size()) u.record.phoneme_sequence.push_back("#1");
    }
    u.record.phoneme_sequence.push_back("sp");
    for (const auto& sym : u.record.phoneme_sequence)
      u.phonemes.ids.push_back(corpus.vocab.id(sym));

    // durations: speed scales the phone base; tags stay short
    const double speed = 1.0 / (1.0 + 0.35 * speed_style);
    for (const auto& sym : u.record.phoneme_sequence) {
      int d;
      if (sym == "#1" || sym == "sp") {
        d = 1 + static_cast<int>(feat_rng.index(2));
      } else {
        int base = 2 + static_cast<int>(feat_rng.index(3));  // 2..4
        d = std::max(1, static_cast<int>(std::lround(base * speed)));
      }
      u.targets.duration.push_back(d);
    }
    int total = 0;
    for (int d : u.targets.duration) total += d;

    // frame-level F0 and energy
    const double f0_base = 120.0 * (1.0 + 0.25 * pitch_style);
    const double phase = 2.0 * M_PI * feat_rng.uniform();
    const double e_base = 0.8 * (1.0 + 0.5 * energy_style);
    u.f0.resize(static_cast<size_t>(total));
    u.energy.resize(static_cast<size_t>(total));
    u.mel = Mat(total, kMelChannels);
    int t = 0;
    for (size_t m = 0; m < u.record.phoneme_sequence.size(); ++m) {
      const std::string& sym = u.record.phoneme_sequence[m];
      const int d = u.targets.duration[m];
      const bool voiced = toy::is_voiced(sym);
      const Vec tmpl = toy::phoneme_template(cfg.seed, sym);
      for (int k = 0; k < d; ++k, ++t) {
        const double rel = static_cast<double>(t) / std::max(1, total - 1);
        double f0 = 0.0;
        if (voiced)
          f0 = f0_base * (1.0 + 0.06 * std::sin(2.0 * M_PI * rel + phase));
        const double env = 0.8 + 0.4 * std::sin(M_PI * (k + 0.5) / d);
        const double energy = e_base * env;
        u.f0[static_cast<size_t>(t)] = f0;
        u.energy[static_cast<size_t>(t)] = energy;
        // pitch-dependent bump over the channel axis when voiced
        double c0 = 0.0;
        if (voiced) c0 = std::clamp((f0 - 60.0) / 1.5, 0.0, 79.0);
        for (int c = 0; c < kMelChannels; ++c) {
          double bump = 0.0;
          if (voiced) {
            double dc = (c - c0) / 2.5;
            bump = 0.5 * std::exp(-0.5 * dc * dc);
          }
          u.mel(t, c) = std::log(0.02 + energy * tmpl(c) * (1.0 + bump));
        }
      }
    }
    derive_phoneme_level_targets(u);

    const std::string stem = plan.doc_id + "_" +
                             std::to_string(plan.index);
    u.record.audio_feature_paths = {
        {"mel", "features/" + stem + ".mel.bin"},
        {"f0", "features/" + stem + ".f0.bin"},
        {"energy", "features/" + stem + ".energy.bin"},
        {"duration", "features/" + stem + ".duration.bin"}};

    corpus.manifest.utterances.push_back(u.record);
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

// Materializes the corpus: manifest.jsonl, vocab.json, features/, and the
// stub phrase-embedding file (so the precomputed-provider path is exercised).
inline void write_toy_corpus(const ToyCorpus& corpus,
                             const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  for (const auto& u : corpus.utterances) {
    TensorMap mel{{"mel", Tensor::from_matrix(u.mel)}};
    save_tensors(dir / u.record.audio_feature_paths.at("mel"), mel);
    TensorMap f0{{"f0", Tensor::from_vector(u.f0)}};
    save_tensors(dir / u.record.audio_feature_paths.at("f0"), f0);
    TensorMap en{{"energy", Tensor::from_vector(u.energy)}};
    save_tensors(dir / u.record.audio_feature_paths.at("energy"), en);
    std::vector<double> dur;
    for (int d : u.targets.duration) dur.push_back(d);
    TensorMap du{{"duration", Tensor::from_vector(dur)}};
    save_tensors(dir / u.record.audio_feature_paths.at("duration"), du);
  }
  corpus.manifest.save(dir / "manifest.jsonl");
  corpus.vocab.save(dir / "vocab.json");

  std::vector<std::pair<std::string, Mat>> records;
  for (const auto& rec : corpus.manifest.utterances) {
    Sentence s = rec.sentence();
    records.emplace_back(s.id(), stub_embed(corpus.stub_seed, s.phrases()));
  }
  write_embedding_file(dir / "embeddings.bin", records);
}

// In-memory dataset, no disk round trip (tests, generators).
inline Dataset to_dataset(const ToyCorpus& corpus) {
  Dataset d;
  d.manifest = corpus.manifest;
  d.vocab = corpus.vocab;
  d.utterances = corpus.utterances;
  for (size_t i = 0; i < d.utterances.size(); ++i)
    d.by_id[d.utterances[i].id()] = i;
  d.documents = d.manifest.documents();
  return d;
}

}  // namespace ctts
