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
// Objective metrics: DTW-aligned F0 / energy RMSE, duration MSE in the
// log(1+d) domain (raw domain also reported), and mel cepstral distortion.

#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "ctts/dtw.hpp"
#include "ctts/errors.hpp"
#include "ctts/serialize.hpp"

namespace ctts {

// F0 = 0 denotes an unvoiced frame.
struct F0RmseResult {
  double rmse = 0.0;
  bool no_voiced_overlap = false;
};

inline F0RmseResult f0_rmse(const std::vector<double>& pred_f0,
                            const std::vector<double>& gt_f0,
                            const AlignmentPath& path) {
  if (!path_is_valid(path, static_cast<int>(pred_f0.size()),
                     static_cast<int>(gt_f0.size())))
    throw ShapeError("f0_rmse: path does not match sequence lengths");
  double sum = 0.0;
  size_t n = 0;
  for (auto [i, j] : path.pairs) {
    double p = pred_f0[static_cast<size_t>(i)];
    double g = gt_f0[static_cast<size_t>(j)];
    if (p > 0.0 && g > 0.0) {
      sum += (p - g) * (p - g);
      ++n;
    }
  }
  if (n == 0) return {0.0, true};
  return {std::sqrt(sum / static_cast<double>(n)), false};
}

inline double energy_rmse(const std::vector<double>& pred,
                          const std::vector<double>& gt,
                          const AlignmentPath& path) {
  if (!path_is_valid(path, static_cast<int>(pred.size()),
                     static_cast<int>(gt.size())))
    throw ShapeError("energy_rmse: path does not match sequence lengths");
  double sum = 0.0;
  for (auto [i, j] : path.pairs) {
    double d = pred[static_cast<size_t>(i)] - gt[static_cast<size_t>(j)];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(path.pairs.size()));
}

// log(1+d) domain, matching the training loss.
inline double duration_mse(const std::vector<double>& pred,
                           const std::vector<double>& gt) {
  if (pred.size() != gt.size())
    throw ShapeError("duration_mse: phoneme counts differ");
  if (pred.empty()) throw ValidationError("duration_mse: empty sequences");
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = std::log1p(pred[i]) - std::log1p(gt[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

inline double duration_mse_raw(const std::vector<double>& pred,
                               const std::vector<double>& gt) {
  if (pred.size() != gt.size())
    throw ShapeError("duration_mse: phoneme counts differ");
  if (pred.empty()) throw ValidationError("duration_mse: empty sequences");
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - gt[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

// Orthonormal DCT-II of each log-mel frame; coefficient 0 dropped, c1..c_order
// kept. mel: [T x C] -> [T x order].
inline Mat mel_to_cepstra(const Mat& mel, int order = 13) {
  const Eigen::Index T = mel.rows(), C = mel.cols();
  if (C < order + 1)
    throw ShapeError("mel_to_cepstra: " + std::to_string(C) +
                     " channels cannot yield " + std::to_string(order) +
                     " cepstra");
  Mat dct(order, C);
  const double s = std::sqrt(2.0 / static_cast<double>(C));
  for (int k = 1; k <= order; ++k)
    for (Eigen::Index n = 0; n < C; ++n)
      dct(k - 1, n) =
          s * std::cos(M_PI * (2.0 * static_cast<double>(n) + 1.0) * k /
                       (2.0 * static_cast<double>(C)));
  Mat out(T, order);
  for (Eigen::Index t = 0; t < T; ++t)
    out.row(t) = (dct * mel.row(t).transpose()).transpose();
  return out;
}

// (10 / ln 10) * sqrt(2) * ||c_pred - c_gt||_2
inline double mcd_from_cepstra_pair(const Eigen::RowVectorXd& a,
                                    const Eigen::RowVectorXd& b) {
  return (10.0 / std::log(10.0)) * std::sqrt(2.0) * (a - b).norm();
}

// Mean per-pair distortion over the DTW-optimal alignment of the cepstra.
inline double mcd(const Mat& pred_mel, const Mat& gt_mel, int order = 13) {
  if (pred_mel.cols() != gt_mel.cols())
    throw ShapeError("mcd: channel counts differ");
  if (pred_mel.rows() == 0 || gt_mel.rows() == 0)
    throw ValidationError("mcd: empty mel");
  Mat ca = mel_to_cepstra(pred_mel, order);
  Mat cb = mel_to_cepstra(gt_mel, order);
  DtwResult r = dtw(ca, cb);
  double sum = 0.0;
  for (auto [i, j] : r.path.pairs)
    sum += mcd_from_cepstra_pair(ca.row(i), cb.row(j));
  return sum / static_cast<double>(r.path.pairs.size());
}

struct MetricReport {
  double f0_rmse = 0.0;
  double energy_rmse = 0.0;
  double duration_mse = 0.0;      // log(1+d) domain
  double duration_mse_raw = 0.0;  // squared frames
  double mcd = 0.0;               // dB
  bool f0_no_voiced_overlap = false;

  nlohmann::json to_json() const {
    return {{"f0_rmse", f0_rmse},
            {"energy_rmse", energy_rmse},
            {"duration_mse", duration_mse},
            {"duration_mse_raw", duration_mse_raw},
            {"mcd", mcd},
            {"f0_no_voiced_overlap", f0_no_voiced_overlap}};
  }

  static MetricReport from_json(const nlohmann::json& j) {
    MetricReport r;
    r.f0_rmse = j.at("f0_rmse").get<double>();
    r.energy_rmse = j.at("energy_rmse").get<double>();
    r.duration_mse = j.at("duration_mse").get<double>();
    r.duration_mse_raw = j.at("duration_mse_raw").get<double>();
    r.mcd = j.at("mcd").get<double>();
    r.f0_no_voiced_overlap = j.at("f0_no_voiced_overlap").get<bool>();
    return r;
  }
};

}  // namespace ctts
