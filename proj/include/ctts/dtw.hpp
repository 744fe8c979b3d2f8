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
// Dynamic time warping between two vector sequences (rows of a matrix),
// exact dynamic-programming solution under the monotone-continuity step set
// {(1,0), (0,1), (1,1)}.

#pragma once

#include <utility>
#include <vector>

#include "ctts/errors.hpp"
#include "ctts/serialize.hpp"

namespace ctts {

struct AlignmentPath {
  // starts at (0,0), ends at (Ta-1, Tb-1); each step increments i, j or both
  std::vector<std::pair<int, int>> pairs;
};

inline bool path_is_valid(const AlignmentPath& p, int ta, int tb) {
  if (p.pairs.empty()) return false;
  if (p.pairs.front() != std::pair<int, int>{0, 0}) return false;
  if (p.pairs.back() != std::pair<int, int>{ta - 1, tb - 1}) return false;
  for (size_t k = 1; k < p.pairs.size(); ++k) {
    int di = p.pairs[k].first - p.pairs[k - 1].first;
    int dj = p.pairs[k].second - p.pairs[k - 1].second;
    if (di < 0 || dj < 0 || di > 1 || dj > 1 || (di == 0 && dj == 0))
      return false;
  }
  return true;
}

enum class DtwCost { kEuclidean };

struct DtwResult {
  AlignmentPath path;
  double total_cost = 0.0;
};

// Ties between predecessors are broken diagonal first, then vertical
// (i-1, j), then horizontal (i, j-1), so the path is deterministic.
inline DtwResult dtw(const Mat& a, const Mat& b,
                     DtwCost cost = DtwCost::kEuclidean) {
  (void)cost;  // only euclidean for now
  const int ta = static_cast<int>(a.rows());
  const int tb = static_cast<int>(b.rows());
  if (ta == 0 || tb == 0) throw ValidationError("dtw: empty sequence");
  if (a.cols() != b.cols()) throw ShapeError("dtw: feature dims differ");

  Mat local(ta, tb);
  for (int i = 0; i < ta; ++i)
    for (int j = 0; j < tb; ++j)
      local(i, j) = (a.row(i) - b.row(j)).norm();

  Mat acc(ta, tb);
  // predecessor code: 0 = diagonal, 1 = vertical, 2 = horizontal, -1 = start
  std::vector<std::vector<int8_t>> from(static_cast<size_t>(ta),
                                        std::vector<int8_t>(tb, -1));
  acc(0, 0) = local(0, 0);
  for (int i = 1; i < ta; ++i) {
    acc(i, 0) = acc(i - 1, 0) + local(i, 0);
    from[static_cast<size_t>(i)][0] = 1;
  }
  for (int j = 1; j < tb; ++j) {
    acc(0, j) = acc(0, j - 1) + local(0, j);
    from[0][static_cast<size_t>(j)] = 2;
  }
  for (int i = 1; i < ta; ++i) {
    for (int j = 1; j < tb; ++j) {
      double diag = acc(i - 1, j - 1);
      double vert = acc(i - 1, j);
      double horiz = acc(i, j - 1);
      double best = diag;
      int8_t pick = 0;
      if (vert < best) {
        best = vert;
        pick = 1;
      }
      if (horiz < best) {
        best = horiz;
        pick = 2;
      }
      acc(i, j) = best + local(i, j);
      from[static_cast<size_t>(i)][static_cast<size_t>(j)] = pick;
    }
  }

  DtwResult out;
  out.total_cost = acc(ta - 1, tb - 1);
  int i = ta - 1, j = tb - 1;
  std::vector<std::pair<int, int>> rev;
  while (true) {
    rev.emplace_back(i, j);
    int8_t f = from[static_cast<size_t>(i)][static_cast<size_t>(j)];
    if (f < 0) break;
    if (f == 0) {
      --i;
      --j;
    } else if (f == 1) {
      --i;
    } else {
      --j;
    }
  }
  out.path.pairs.assign(rev.rbegin(), rev.rend());
  return out;
}

}  // namespace ctts
