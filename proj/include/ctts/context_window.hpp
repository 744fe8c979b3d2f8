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
// Context windows: the current sentence plus up to L past and L future
// sentences of the same document, with per-sentence phrase-embedding
// sequences from a pluggable provider (deterministic stub or a file of
// precomputed language-model outputs).

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctts/errors.hpp"
#include "ctts/rng.hpp"
#include "ctts/serialize.hpp"

namespace ctts {

inline constexpr int kPhraseEmbeddingDim = 768;

struct Sentence {
  std::string document_id;
  int index_in_document = 0;
  std::string text;
  std::vector<std::pair<size_t, size_t>> phrase_spans;  // [start, end) bytes

  size_t phrase_count() const { return phrase_spans.size(); }

  std::string id() const {
    return document_id + "#" + std::to_string(index_in_document);
  }

  std::string phrase(size_t i) const {
    const auto& [b, e] = phrase_spans.at(i);
    if (e > text.size() || b > e)
      throw ValidationError("phrase span out of range in sentence " + id());
    return text.substr(b, e - b);
  }

  std::vector<std::string> phrases() const {
    std::vector<std::string> out;
    out.reserve(phrase_spans.size());
    for (size_t i = 0; i < phrase_spans.size(); ++i) out.push_back(phrase(i));
    return out;
  }
};

struct PhraseEmbeddingSequence {
  std::string sentence_id;
  Mat embeddings;  // [phrase_count x 768]
};

struct ContextWindow {
  Sentence center;
  std::vector<Sentence> past;    // document order, oldest first
  std::vector<Sentence> future;  // document order
  int half_width = 2;            // L
  // one entry per included sentence, in window order (past, center, future);
  // empty until embed_window ran
  std::vector<PhraseEmbeddingSequence> phrase_embeddings;

  std::vector<const Sentence*> ordered() const {
    std::vector<const Sentence*> out;
    out.reserve(past.size() + 1 + future.size());
    for (const auto& s : past) out.push_back(&s);
    out.push_back(&center);
    for (const auto& s : future) out.push_back(&s);
    return out;
  }

  size_t sentence_count() const { return past.size() + 1 + future.size(); }

  size_t total_phrases() const {
    size_t n = 0;
    for (const Sentence* s : ordered()) n += s->phrase_count();
    return n;
  }

  bool embedded() const {
    return phrase_embeddings.size() == sentence_count();
  }
};

// All window sentences joined into one text (single-space joiner, no
// separator tokens).
inline std::string window_text(const ContextWindow& w) {
  std::string out;
  for (const Sentence* s : w.ordered()) {
    if (!out.empty()) out += ' ';
    out += s->text;
  }
  return out;
}

// Clamps at document boundaries; no padding sentences are fabricated.
inline ContextWindow build_window(const std::vector<Sentence>& document,
                                  int center_index, int half_width) {
  if (center_index < 0 ||
      center_index >= static_cast<int>(document.size()))
    throw IndexError("center_index " + std::to_string(center_index) +
                     " outside document of " +
                     std::to_string(document.size()) + " sentences");
  if (half_width < 0) throw ValidationError("window half-width must be >= 0");
  ContextWindow w;
  w.half_width = half_width;
  w.center = document[static_cast<size_t>(center_index)];
  const int lo = std::max(0, center_index - half_width);
  const int hi = std::min(static_cast<int>(document.size()) - 1,
                          center_index + half_width);
  for (int i = lo; i < center_index; ++i)
    w.past.push_back(document[static_cast<size_t>(i)]);
  for (int i = center_index + 1; i <= hi; ++i)
    w.future.push_back(document[static_cast<size_t>(i)]);
  return w;
}

// ---- providers --------------------------------------------------------------

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // One [total_phrases x 768] block for the whole window, rows grouped by
  // sentence in window order.
  virtual Mat embed(const ContextWindow& w) const = 0;
};

// Deterministic test double for the pretrained language model: each phrase
// maps to a 768-dim vector derived from a seeded hash of the phrase string.
// Identical across runs and platforms.
inline Mat stub_embed(uint64_t seed, const std::vector<std::string>& phrases) {
  if (phrases.empty()) throw ValidationError("stub_embed: empty segmentation");
  Mat out(static_cast<Eigen::Index>(phrases.size()), kPhraseEmbeddingDim);
  const uint64_t seed_h = fnv1a64_bytes(&seed, sizeof(seed));
  for (size_t i = 0; i < phrases.size(); ++i) {
    if (phrases[i].empty())
      throw ValidationError("stub_embed: empty phrase at position " +
                            std::to_string(i));
    uint64_t state = fnv1a64(phrases[i], seed_h);
    for (int d = 0; d < kPhraseEmbeddingDim; ++d)
      out(static_cast<Eigen::Index>(i), d) =
          2.0 * u64_to_unit_double(splitmix64(state)) - 1.0;
  }
  return out;
}

class StubProvider : public EmbeddingProvider {
 public:
  explicit StubProvider(uint64_t seed) : seed_(seed) {}

  Mat embed(const ContextWindow& w) const override {
    std::vector<std::string> phrases;
    phrases.reserve(w.total_phrases());
    for (const Sentence* s : w.ordered())
      for (auto& p : s->phrases()) phrases.push_back(std::move(p));
    return stub_embed(seed_, phrases);
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
};

// Splits the provider's flat output back into per-sentence matrices by
// phrase counts and attaches them to the window.
inline ContextWindow embed_window(ContextWindow window,
                                  const EmbeddingProvider& provider) {
  const Mat all = provider.embed(window);
  const size_t expected = window.total_phrases();
  if (static_cast<size_t>(all.rows()) != expected)
    throw ShapeError("provider returned " + std::to_string(all.rows()) +
                     " rows for " + std::to_string(expected) +
                     " phrases in window around " + window.center.id());
  if (all.cols() != kPhraseEmbeddingDim)
    throw ShapeError("provider embedding dim " + std::to_string(all.cols()) +
                     " != " + std::to_string(kPhraseEmbeddingDim));
  window.phrase_embeddings.clear();
  Eigen::Index row = 0;
  for (const Sentence* s : window.ordered()) {
    const auto n = static_cast<Eigen::Index>(s->phrase_count());
    window.phrase_embeddings.push_back(
        {s->id(), all.middleRows(row, n)});
    row += n;
  }
  return window;
}

// ---- precomputed embedding file ---------------------------------------------
//
// Record layout: u32 LE id length, id bytes, u32 LE row count, u32 LE dim
// (768), row-major float32 LE rows. A JSON sidecar lists record order.

inline void write_embedding_file(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, Mat>>& records) {
  std::string bytes;
  nlohmann::json order = nlohmann::json::array();
  for (const auto& [id, m] : records) {
    if (m.cols() != kPhraseEmbeddingDim)
      throw ShapeError("embedding record " + id + " has dim " +
                       std::to_string(m.cols()));
    detail::put_u32(bytes, static_cast<uint32_t>(id.size()));
    bytes.append(id);
    detail::put_u32(bytes, static_cast<uint32_t>(m.rows()));
    detail::put_u32(bytes, static_cast<uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        float f = static_cast<float>(m(r, c));
        bytes.append(reinterpret_cast<const char*>(&f), 4);
      }
    order.push_back(id);
  }
  write_file_atomic(path, bytes);
  nlohmann::json sidecar = {{"format", "ctts-phrase-embeddings-v1"},
                            {"records", order},
                            {"joiner", " "}};
  write_file_atomic(path.string() + ".json", sidecar.dump(2) + "\n");
}

inline std::map<std::string, PhraseEmbeddingSequence> read_embedding_file(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  std::map<std::string, PhraseEmbeddingSequence> out;
  while (true) {
    if (in.peek() == EOF) break;
    uint32_t id_len = detail::get_u32(in);
    if (id_len > (1u << 16)) throw FormatError("implausible sentence-id length");
    std::string id(id_len, '\0');
    in.read(id.data(), id_len);
    if (!in) throw FormatError("truncated embedding file (id)");
    uint32_t rows = detail::get_u32(in);
    uint32_t dim = detail::get_u32(in);
    if (dim != kPhraseEmbeddingDim)
      throw FormatError("embedding record " + id + " has dim " +
                        std::to_string(dim) + ", expected 768");
    Mat m(rows, dim);
    std::vector<float> buf(static_cast<size_t>(rows) * dim);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
    if (!in) throw FormatError("truncated embedding file (data of " + id + ")");
    size_t k = 0;
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < dim; ++c) m(r, c) = buf[k++];
    out[id] = {id, std::move(m)};
  }
  return out;
}

// Loads the file and checks it covers every sentence in the manifest with
// matching phrase counts.
inline std::map<std::string, PhraseEmbeddingSequence>
load_precomputed_embeddings(const std::filesystem::path& path,
                            const std::vector<Sentence>& sentences) {
  auto loaded = read_embedding_file(path);
  for (const Sentence& s : sentences) {
    auto it = loaded.find(s.id());
    if (it == loaded.end())
      throw DataError("embedding file " + path.string() +
                      " is missing sentence " + s.id());
    if (static_cast<size_t>(it->second.embeddings.rows()) != s.phrase_count())
      throw FormatError("embedding record " + s.id() + " has " +
                        std::to_string(it->second.embeddings.rows()) +
                        " rows, sentence has " +
                        std::to_string(s.phrase_count()) + " phrases");
  }
  return loaded;
}

class PrecomputedProvider : public EmbeddingProvider {
 public:
  explicit PrecomputedProvider(
      std::map<std::string, PhraseEmbeddingSequence> table)
      : table_(std::move(table)) {}

  static PrecomputedProvider from_file(const std::filesystem::path& path,
                                       const std::vector<Sentence>& sentences) {
    return PrecomputedProvider(load_precomputed_embeddings(path, sentences));
  }

  Mat embed(const ContextWindow& w) const override {
    Mat out(static_cast<Eigen::Index>(w.total_phrases()), kPhraseEmbeddingDim);
    Eigen::Index row = 0;
    for (const Sentence* s : w.ordered()) {
      auto it = table_.find(s->id());
      if (it == table_.end())
        throw DataError("no precomputed embedding for sentence " + s->id());
      const Mat& m = it->second.embeddings;
      if (static_cast<size_t>(m.rows()) != s->phrase_count())
        throw ShapeError("precomputed rows for " + s->id() +
                         " do not match phrase count");
      out.middleRows(row, m.rows()) = m;
      row += m.rows();
    }
    return out;
  }

 private:
  std::map<std::string, PhraseEmbeddingSequence> table_;
};

}  // namespace ctts
