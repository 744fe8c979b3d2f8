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
// Neural-net building blocks over the autodiff tape: parameter tensors,
// initializers, linear/GRU/attention layers, layer norm wrappers, sinusoidal
// positional encodings and dropout.

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ctts/autodiff.hpp"
#include "ctts/errors.hpp"
#include "ctts/rng.hpp"
#include "ctts/serialize.hpp"

namespace ctts::nn {

using ad::Tape;
using ad::Var;

struct ParamTensor {
  std::string name;
  Mat value;
  bool trainable = true;  // running BN statistics live here but never train
};

// Binds parameters onto a tape, recording (tensor, var) pairs so the
// optimizer can pull gradients after backward().
struct ParamBinder {
  Tape* tape;
  bool with_grads = true;
  std::vector<std::pair<ParamTensor*, Var>> bound;

  Var operator()(ParamTensor& p) {
    Var v = tape->leaf(&p.value, with_grads && p.trainable);
    bound.push_back({&p, v});
    return v;
  }
};

// ---- initializers ----------------------------------------------------------

inline Mat uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                        double limit) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
  return m;
}

// Weight layout [in x out]: fan_in = rows, fan_out = cols.
inline Mat xavier_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform_init(rng, rows, cols, limit);
}

inline Mat normal_init(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                       double stddev = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, stddev);
  return m;
}

// Square orthogonal matrix from the QR of a random Gaussian, sign-fixed so
// the result is deterministic.
inline Mat orthogonal_init(Rng& rng, Eigen::Index n) {
  Mat a = normal_init(rng, n, n);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

// ---- linear ----------------------------------------------------------------

struct LinearParams {
  ParamTensor w;  // [in x out]
  ParamTensor b;  // [1 x out]

  void init(Rng& rng, const std::string& prefix, int in, int out) {
    w = {prefix + ".w", xavier_uniform(rng, in, out)};
    b = {prefix + ".b", Mat::Zero(1, out)};
  }
  void collect(std::vector<ParamTensor*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct LinearBound {
  Var w, b;
};

inline LinearBound bind(ParamBinder& pb, LinearParams& p) {
  return {pb(p.w), pb(p.b)};
}

inline Var linear(Tape& t, const LinearBound& l, Var x) {
  return ad::add_row_broadcast(t, ad::matmul(t, x, l.w), l.b);
}

// ---- GRU -------------------------------------------------------------------
//
// Single-bias formulation, gate order r|z|n:
//   r = sigmoid(x W_r + h U_r + b_r)
//   z = sigmoid(x W_z + h U_z + b_z)
//   n = tanh(x W_n + r .* (h U_n) + b_n)
//   h' = z .* h + (1 - z) .* n

struct GruParams {
  ParamTensor w_ih;  // [in x 3H]
  ParamTensor w_hh;  // [H x 3H]
  ParamTensor b;     // [1 x 3H]
  int hidden = 0;

  void init(Rng& rng, const std::string& prefix, int in, int h) {
    hidden = h;
    w_ih = {prefix + ".w_ih", xavier_uniform(rng, in, 3 * h)};
    Mat u(h, 3 * h);
    for (int g = 0; g < 3; ++g) u.middleCols(g * h, h) = orthogonal_init(rng, h);
    w_hh = {prefix + ".w_hh", std::move(u)};
    b = {prefix + ".b", Mat::Zero(1, 3 * h)};
  }
  void collect(std::vector<ParamTensor*>& out) {
    out.push_back(&w_ih);
    out.push_back(&w_hh);
    out.push_back(&b);
  }
};

struct GruBound {
  Var w_ih, w_hh, b;
  int hidden = 0;
};

inline GruBound bind(ParamBinder& pb, GruParams& p) {
  return {pb(p.w_ih), pb(p.w_hh), pb(p.b), p.hidden};
}

struct GruResult {
  Var outputs;      // [T x H], in original time order
  Var final_state;  // [1 x H]
};

inline GruResult gru_forward(Tape& t, const GruBound& g, Var x,
                             bool reverse = false) {
  const Eigen::Index T = t.val(x).rows();
  if (T == 0) throw EmptyInputError("gru_forward: empty sequence");
  const int h = g.hidden;
  // input contributions for the whole sequence in one product
  Var gx_all = ad::add_row_broadcast(t, ad::matmul(t, x, g.w_ih), g.b);
  Var hprev = t.constant(Mat::Zero(1, h));
  std::vector<Var> outs(static_cast<size_t>(T));
  for (Eigen::Index i = 0; i < T; ++i) {
    Eigen::Index step = reverse ? T - 1 - i : i;
    Var gx = ad::slice_rows(t, gx_all, step, 1);
    Var gh = ad::matmul(t, hprev, g.w_hh);
    Var r = ad::sigmoid(t, ad::add(t, ad::slice_cols(t, gx, 0, h),
                                   ad::slice_cols(t, gh, 0, h)));
    Var z = ad::sigmoid(t, ad::add(t, ad::slice_cols(t, gx, h, h),
                                   ad::slice_cols(t, gh, h, h)));
    Var n = ad::tanh_(t, ad::add(t, ad::slice_cols(t, gx, 2 * h, h),
                                 ad::cwise_mul(t, r,
                                               ad::slice_cols(t, gh, 2 * h, h))));
    Var one_minus_z = ad::add_scalar(t, ad::scale(t, z, -1.0), 1.0);
    hprev = ad::add(t, ad::cwise_mul(t, z, hprev),
                    ad::cwise_mul(t, one_minus_z, n));
    outs[static_cast<size_t>(step)] = hprev;
  }
  Var seq = ad::concat_rows(t, outs);
  return {seq, hprev};
}

struct BiGruParams {
  GruParams fwd, bwd;

  void init(Rng& rng, const std::string& prefix, int in, int h) {
    fwd.init(rng, prefix + ".fwd", in, h);
    bwd.init(rng, prefix + ".bwd", in, h);
  }
  void collect(std::vector<ParamTensor*>& out) {
    fwd.collect(out);
    bwd.collect(out);
  }
};

struct BiGruBound {
  GruBound fwd, bwd;
};

inline BiGruBound bind(ParamBinder& pb, BiGruParams& p) {
  return {bind(pb, p.fwd), bind(pb, p.bwd)};
}

// [T x in] -> [T x 2H]; forward outputs in columns [0,H), backward in [H,2H).
inline Var bigru_forward(Tape& t, const BiGruBound& g, Var x) {
  Var f = gru_forward(t, g.fwd, x, false).outputs;
  Var b = gru_forward(t, g.bwd, x, true).outputs;
  return ad::concat_cols(t, {f, b});
}

// ---- layer norm ------------------------------------------------------------

struct LayerNormParams {
  ParamTensor gamma, beta;

  void init(const std::string& prefix, int dim) {
    gamma = {prefix + ".gamma", Mat::Ones(1, dim)};
    beta = {prefix + ".beta", Mat::Zero(1, dim)};
  }
  void collect(std::vector<ParamTensor*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

struct LayerNormBound {
  Var gamma, beta;
};

inline LayerNormBound bind(ParamBinder& pb, LayerNormParams& p) {
  return {pb(p.gamma), pb(p.beta)};
}

inline Var layer_norm(Tape& t, const LayerNormBound& ln, Var x) {
  return ad::layer_norm(t, x, ln.gamma, ln.beta);
}

// ---- positional encoding ---------------------------------------------------

// Row p, column 2i   = sin(p / 10000^(2i/dim)),
//        column 2i+1 = cos(p / 10000^(2i/dim)).
inline Mat sinusoidal_positional_encoding(int max_pos, int dim) {
  Mat pe(max_pos, dim);
  for (int p = 0; p < max_pos; ++p) {
    for (int i = 0; 2 * i < dim; ++i) {
      double denom = std::pow(10000.0, (2.0 * i) / dim);
      pe(p, 2 * i) = std::sin(p / denom);
      if (2 * i + 1 < dim) pe(p, 2 * i + 1) = std::cos(p / denom);
    }
  }
  return pe;
}

// ---- multi-head self-attention ---------------------------------------------

struct MhsaParams {
  LinearParams wq, wk, wv, wo;
  int heads = 2;

  void init(Rng& rng, const std::string& prefix, int dim, int n_heads) {
    heads = n_heads;
    wq.init(rng, prefix + ".wq", dim, dim);
    wk.init(rng, prefix + ".wk", dim, dim);
    wv.init(rng, prefix + ".wv", dim, dim);
    wo.init(rng, prefix + ".wo", dim, dim);
  }
  void collect(std::vector<ParamTensor*>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }
};

struct MhsaBound {
  LinearBound wq, wk, wv, wo;
  int heads = 2;
};

inline MhsaBound bind(ParamBinder& pb, MhsaParams& p) {
  return {bind(pb, p.wq), bind(pb, p.wk), bind(pb, p.wv), bind(pb, p.wo),
          p.heads};
}

inline Var mhsa(Tape& t, const MhsaBound& m, Var x) {
  const Eigen::Index dim = t.val(x).cols();
  if (dim % m.heads != 0) throw ShapeError("mhsa: dim not divisible by heads");
  const Eigen::Index dh = dim / m.heads;
  Var q = linear(t, m.wq, x);
  Var k = linear(t, m.wk, x);
  Var v = linear(t, m.wv, x);
  std::vector<Var> ctx;
  ctx.reserve(static_cast<size_t>(m.heads));
  for (int hidx = 0; hidx < m.heads; ++hidx) {
    Var qh = ad::slice_cols(t, q, hidx * dh, dh);
    Var kh = ad::slice_cols(t, k, hidx * dh, dh);
    Var vh = ad::slice_cols(t, v, hidx * dh, dh);
    Var logits = ad::scale(t, ad::matmul_nt(t, qh, kh),
                           1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = ad::softmax_rows(t, logits);
    ctx.push_back(ad::matmul(t, attn, vh));
  }
  return linear(t, m.wo, ad::concat_cols(t, ctx));
}

// ---- feed-forward transformer block (post-LN) ------------------------------

struct FftBlockParams {
  MhsaParams attn;
  ParamTensor conv1_w, conv1_b;  // kernel 3: [dim*3 x filter], [1 x filter]
  ParamTensor conv2_w, conv2_b;  // kernel 1: [filter x dim], [1 x dim]
  LayerNormParams ln1, ln2;
  int dim = 0, filter = 0;

  void init(Rng& rng, const std::string& prefix, int d, int filt, int heads) {
    dim = d;
    filter = filt;
    attn.init(rng, prefix + ".attn", d, heads);
    conv1_w = {prefix + ".conv1.w", xavier_uniform(rng, d * 3, filt)};
    conv1_b = {prefix + ".conv1.b", Mat::Zero(1, filt)};
    conv2_w = {prefix + ".conv2.w", xavier_uniform(rng, filt, d)};
    conv2_b = {prefix + ".conv2.b", Mat::Zero(1, d)};
    ln1.init(prefix + ".ln1", d);
    ln2.init(prefix + ".ln2", d);
  }
  void collect(std::vector<ParamTensor*>& out) {
    attn.collect(out);
    out.push_back(&conv1_w);
    out.push_back(&conv1_b);
    out.push_back(&conv2_w);
    out.push_back(&conv2_b);
    ln1.collect(out);
    ln2.collect(out);
  }
};

struct FftBlockBound {
  MhsaBound attn;
  Var conv1_w, conv1_b, conv2_w, conv2_b;
  LayerNormBound ln1, ln2;
};

inline FftBlockBound bind(ParamBinder& pb, FftBlockParams& p) {
  return {bind(pb, p.attn), pb(p.conv1_w), pb(p.conv1_b),
          pb(p.conv2_w),    pb(p.conv2_b), bind(pb, p.ln1),
          bind(pb, p.ln2)};
}

// attention -> add+LN -> conv1d(k3) -> ReLU -> conv1d(k1) -> add+LN
inline Var fft_block(Tape& t, const FftBlockBound& blk, Var x) {
  Var a = mhsa(t, blk.attn, x);
  Var x1 = layer_norm(t, blk.ln1, ad::add(t, x, a));
  Var h = ad::relu(t, ad::conv1d(t, x1, blk.conv1_w, blk.conv1_b, 3,
                                 ad::Pad1d::kZero));
  Var f = ad::add_row_broadcast(t, ad::matmul(t, h, blk.conv2_w), blk.conv2_b);
  return layer_norm(t, blk.ln2, ad::add(t, x1, f));
}

// ---- dropout ---------------------------------------------------------------

// Inverted dropout with an explicit mask source; pass nullptr to disable
// (inference / gradient checks).
inline Var dropout(Tape& t, Var x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  const Mat& X = t.val(x);
  Mat mask(X.rows(), X.cols());
  const double keep = 1.0 - p;
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c)
      mask(r, c) = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
  return ad::cwise_mul(t, x, t.constant(std::move(mask)));
}

// ---- parameter sets --------------------------------------------------------

inline TensorMap to_tensor_map(const std::vector<ParamTensor*>& params) {
  TensorMap out;
  for (const ParamTensor* p : params) {
    if (out.count(p->name)) throw ValidationError("duplicate tensor " + p->name);
    out[p->name] = Tensor::from_matrix(p->value);
  }
  return out;
}

inline void from_tensor_map(const TensorMap& tm,
                            const std::vector<ParamTensor*>& params) {
  for (ParamTensor* p : params) {
    auto it = tm.find(p->name);
    if (it == tm.end()) throw FormatError("checkpoint missing tensor " + p->name);
    Mat m = it->second.to_matrix();
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw FormatError("checkpoint tensor " + p->name + " has wrong shape");
    p->value = std::move(m);
  }
  if (tm.size() != params.size())
    throw FormatError("checkpoint holds " + std::to_string(tm.size()) +
                      " tensors, expected " + std::to_string(params.size()));
}

// Content hash over float32 bytes in name order; the freeze audit currency.
inline uint64_t hash_params(const std::vector<ParamTensor*>& params) {
  TensorMap tm = to_tensor_map(params);
  std::string bytes = encode_tensors(tm);
  return fnv1a64_bytes(bytes.data(), bytes.size());
}

}  // namespace ctts::nn
