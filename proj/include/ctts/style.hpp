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

#pragma once

#include "ctts/errors.hpp"
#include "ctts/serialize.hpp"

namespace ctts {

// Utterance-level speaking-style vector. The teacher (reference encoder)
// produces values strictly inside (-1, 1); the student regresses them.
inline constexpr int kStyleDim = 256;

struct StyleEmbedding {
  Mat values;  // [1 x 256]

  static StyleEmbedding from_row(Mat row) {
    if (row.rows() != 1 || row.cols() != kStyleDim)
      throw ShapeError("style embedding must be 1 x " +
                       std::to_string(kStyleDim));
    return {std::move(row)};
  }
};

}  // namespace ctts
