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
// Dataset manifest (JSON-lines) and feature loading. One manifest object per
// utterance: document_id, index_in_document, text, phrase_spans,
// phoneme_sequence, audio_feature_paths. Feature files are tensor containers
// holding one named tensor each (mel / f0 / energy / duration).

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctts/acoustic_model.hpp"
#include "ctts/context_window.hpp"
#include "ctts/errors.hpp"
#include "ctts/serialize.hpp"

namespace ctts {

struct UtteranceRecord {
  std::string document_id;
  int index_in_document = 0;
  std::string text;
  std::vector<std::pair<size_t, size_t>> phrase_spans;
  std::vector<std::string> phoneme_sequence;  // symbols incl. prosody tags
  std::map<std::string, std::string> audio_feature_paths;

  std::string id() const {
    return document_id + "#" + std::to_string(index_in_document);
  }

  Sentence sentence() const {
    Sentence s;
    s.document_id = document_id;
    s.index_in_document = index_in_document;
    s.text = text;
    s.phrase_spans = phrase_spans;
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json spans = nlohmann::json::array();
    for (auto [b, e] : phrase_spans) spans.push_back({b, e});
    return {{"document_id", document_id},
            {"index_in_document", index_in_document},
            {"text", text},
            {"phrase_spans", spans},
            {"phoneme_sequence", phoneme_sequence},
            {"audio_feature_paths", audio_feature_paths}};
  }

  static UtteranceRecord from_json(const nlohmann::json& j) {
    UtteranceRecord r;
    r.document_id = j.at("document_id").get<std::string>();
    r.index_in_document = j.at("index_in_document").get<int>();
    r.text = j.at("text").get<std::string>();
    for (const auto& s : j.at("phrase_spans"))
      r.phrase_spans.emplace_back(s.at(0).get<size_t>(), s.at(1).get<size_t>());
    r.phoneme_sequence =
        j.at("phoneme_sequence").get<std::vector<std::string>>();
    r.audio_feature_paths =
        j.at("audio_feature_paths").get<std::map<std::string, std::string>>();
    return r;
  }
};

struct Manifest {
  std::filesystem::path root;  // directory the feature paths are relative to
  std::vector<UtteranceRecord> utterances;

  static Manifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    Manifest m;
    m.root = path.parent_path();
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        m.utterances.push_back(
            UtteranceRecord::from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest line " + std::to_string(line_no) + ": " +
                          e.what());
      }
    }
    return m;
  }

  void save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& u : utterances) out += u.to_json().dump() + "\n";
    write_file_atomic(path, out);
  }

  // sentences per document, ordered by index
  std::map<std::string, std::vector<Sentence>> documents() const {
    std::map<std::string, std::vector<Sentence>> out;
    for (const auto& u : utterances)
      out[u.document_id].push_back(u.sentence());
    for (auto& [id, doc] : out)
      std::sort(doc.begin(), doc.end(), [](const auto& a, const auto& b) {
        return a.index_in_document < b.index_in_document;
      });
    return out;
  }

  std::vector<Sentence> all_sentences() const {
    std::vector<Sentence> out;
    for (const auto& u : utterances) out.push_back(u.sentence());
    return out;
  }
};

struct Vocabulary {
  std::vector<std::string> symbols;
  std::map<std::string, int> index;

  static Vocabulary from_symbols(std::vector<std::string> syms) {
    Vocabulary v;
    v.symbols = std::move(syms);
    for (size_t i = 0; i < v.symbols.size(); ++i)
      v.index[v.symbols[i]] = static_cast<int>(i);
    return v;
  }

  int id(const std::string& symbol) const {
    auto it = index.find(symbol);
    if (it == index.end())
      throw ValidationError("phoneme symbol '" + symbol +
                            "' not in vocabulary");
    return it->second;
  }

  int size() const { return static_cast<int>(symbols.size()); }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j = {{"symbols", symbols}};
    write_file_atomic(path, j.dump(2) + "\n");
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary " + path.string());
    nlohmann::json j;
    in >> j;
    return from_symbols(j.at("symbols").get<std::vector<std::string>>());
  }
};

// One fully loaded training example.
struct Utterance {
  UtteranceRecord record;
  PhonemeSequence phonemes;           // ids
  Mat mel;                            // [T x 80]
  std::vector<double> f0;             // frame level, 0 = unvoiced
  std::vector<double> energy;         // frame level
  VarianceTargets targets;            // phoneme level

  std::string id() const { return record.id(); }
};

// Phoneme-level pitch: mean F0 over voiced frames of the phoneme (0 if all
// unvoiced). Energy: mean over the phoneme's frames.
inline void derive_phoneme_level_targets(Utterance& u) {
  u.targets.pitch.assign(u.targets.duration.size(), 0.0);
  u.targets.energy.assign(u.targets.duration.size(), 0.0);
  size_t t = 0;
  for (size_t m = 0; m < u.targets.duration.size(); ++m) {
    const int d = u.targets.duration[m];
    double pitch_sum = 0.0;
    int voiced = 0;
    double energy_sum = 0.0;
    for (int k = 0; k < d; ++k) {
      const double f = u.f0[t + static_cast<size_t>(k)];
      if (f > 0.0) {
        pitch_sum += f;
        ++voiced;
      }
      energy_sum += u.energy[t + static_cast<size_t>(k)];
    }
    if (voiced > 0) u.targets.pitch[m] = pitch_sum / voiced;
    if (d > 0) u.targets.energy[m] = energy_sum / d;
    t += static_cast<size_t>(d);
  }
}

// Collects every problem instead of stopping at the first.
inline std::vector<std::string> validate_record(
    const UtteranceRecord& rec, const Vocabulary& vocab,
    const std::filesystem::path& root, bool check_features = true) {
  std::vector<std::string> problems;
  const std::string uid = rec.id();
  if (rec.text.empty()) problems.push_back(uid + ": empty text");
  if (rec.phrase_spans.empty()) problems.push_back(uid + ": no phrase spans");
  size_t prev_end = 0;
  for (size_t i = 0; i < rec.phrase_spans.size(); ++i) {
    auto [b, e] = rec.phrase_spans[i];
    if (b >= e || e > rec.text.size())
      problems.push_back(uid + ": phrase span " + std::to_string(i) +
                         " out of range");
    else if (b < prev_end)
      problems.push_back(uid + ": phrase span " + std::to_string(i) +
                         " overlaps the previous one");
    prev_end = e;
  }
  if (rec.phoneme_sequence.empty())
    problems.push_back(uid + ": empty phoneme sequence");
  for (const auto& sym : rec.phoneme_sequence)
    if (!vocab.index.count(sym))
      problems.push_back(uid + ": unknown phoneme '" + sym + "'");
  if (!check_features) return problems;

  for (const char* key : {"mel", "f0", "energy", "duration"})
    if (!rec.audio_feature_paths.count(key))
      problems.push_back(uid + ": missing feature path '" + std::string(key) +
                         "'");
  if (!problems.empty()) return problems;

  try {
    TensorMap mel_t = load_tensors(root / rec.audio_feature_paths.at("mel"));
    TensorMap f0_t = load_tensors(root / rec.audio_feature_paths.at("f0"));
    TensorMap en_t = load_tensors(root / rec.audio_feature_paths.at("energy"));
    TensorMap du_t =
        load_tensors(root / rec.audio_feature_paths.at("duration"));
    Mat mel = mel_t.at("mel").to_matrix();
    auto f0 = f0_t.at("f0").to_vector();
    auto en = en_t.at("energy").to_vector();
    auto du = du_t.at("duration").to_vector();
    if (mel.cols() != kMelChannels)
      problems.push_back(uid + ": mel has " + std::to_string(mel.cols()) +
                         " channels, expected 80");
    if (f0.size() != static_cast<size_t>(mel.rows()))
      problems.push_back(uid + ": f0 length != mel frames");
    if (en.size() != static_cast<size_t>(mel.rows()))
      problems.push_back(uid + ": energy length != mel frames");
    if (du.size() != rec.phoneme_sequence.size())
      problems.push_back(uid + ": duration count != phoneme count");
    double total = 0;
    for (double d : du) total += d;
    if (static_cast<Eigen::Index>(total) != mel.rows())
      problems.push_back(uid + ": durations sum to " +
                         std::to_string(static_cast<long>(total)) + " but mel has " +
                         std::to_string(mel.rows()) + " frames");
  } catch (const Error& e) {
    problems.push_back(uid + ": " + e.what());
  }
  return problems;
}

struct Dataset {
  Manifest manifest;
  Vocabulary vocab;
  std::vector<Utterance> utterances;
  std::map<std::string, std::vector<Sentence>> documents;
  std::map<std::string, size_t> by_id;

  static Dataset load(const std::filesystem::path& manifest_path,
                      const std::filesystem::path& vocab_path) {
    Dataset d;
    d.manifest = Manifest::load(manifest_path);
    d.vocab = Vocabulary::load(vocab_path);

    std::vector<std::string> problems;
    for (const auto& rec : d.manifest.utterances) {
      auto p = validate_record(rec, d.vocab, d.manifest.root);
      problems.insert(problems.end(), p.begin(), p.end());
    }
    if (!problems.empty()) {
      std::string msg = "manifest validation failed:";
      for (const auto& p : problems) msg += "\n  " + p;
      throw ValidationError(msg);
    }

    for (const auto& rec : d.manifest.utterances) {
      Utterance u;
      u.record = rec;
      for (const auto& sym : rec.phoneme_sequence)
        u.phonemes.ids.push_back(d.vocab.id(sym));
      const auto& root = d.manifest.root;
      u.mel = load_tensors(root / rec.audio_feature_paths.at("mel"))
                  .at("mel")
                  .to_matrix();
      u.f0 = load_tensors(root / rec.audio_feature_paths.at("f0"))
                 .at("f0")
                 .to_vector();
      u.energy = load_tensors(root / rec.audio_feature_paths.at("energy"))
                     .at("energy")
                     .to_vector();
      auto du = load_tensors(root / rec.audio_feature_paths.at("duration"))
                    .at("duration")
                    .to_vector();
      for (double x : du) u.targets.duration.push_back(static_cast<int>(x));
      derive_phoneme_level_targets(u);
      d.by_id[u.id()] = d.utterances.size();
      d.utterances.push_back(std::move(u));
    }
    d.documents = d.manifest.documents();
    return d;
  }

  const Utterance& by_utterance_id(const std::string& uid) const {
    auto it = by_id.find(uid);
    if (it == by_id.end()) throw DataError("unknown utterance " + uid);
    return utterances[it->second];
  }

  // window around an utterance, by document position
  ContextWindow window_for(const Utterance& u, int half_width) const {
    const auto& doc = documents.at(u.record.document_id);
    int pos = -1;
    for (size_t i = 0; i < doc.size(); ++i)
      if (doc[i].index_in_document == u.record.index_in_document)
        pos = static_cast<int>(i);
    if (pos < 0)
      throw DataError("utterance " + u.id() + " not found in its document");
    return build_window(doc, pos, half_width);
  }
};

}  // namespace ctts
