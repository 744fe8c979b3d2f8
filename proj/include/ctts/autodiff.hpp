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
// Reverse-mode autodiff over dense matrices. One tape per training step;
// values are computed eagerly, gradients by a single reverse sweep. All
// arithmetic is double precision.

#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ctts/errors.hpp"

namespace ctts::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Backward closures receive the accumulated output gradient.
using BackwardFn = std::function<void(class Tape&, const Mat&)>;

class Tape {
 public:
  // Leaf bound to external storage (model parameters). No copy.
  Var leaf(const Mat* external, bool requires_grad) {
    Node n;
    n.external = external;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Mat value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var op(Mat value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& val(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const {
    return nodes_[static_cast<size_t>(v.id)].requires_grad;
  }

  // Gradient of v after backward(); zeros if v never received one.
  const Mat& grad(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.size() == 0) {
      zero_buf_ = Mat::Zero(val(v).rows(), val(v).cols());
      return zero_buf_;
    }
    return n.grad;
  }

  template <typename Expr>
  void accum(Var v, const Expr& g) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Targeted accumulation into a row/column block; avoids materializing a
  // full-size zero gradient for slice and gather ops inside loops.
  template <typename Expr>
  void accum_rows_at(Var v, Eigen::Index r0, const Expr& g) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(val(v).rows(), val(v).cols());
    n.grad.middleRows(r0, g.rows()) += g;
  }

  template <typename Expr>
  void accum_cols_at(Var v, Eigen::Index c0, const Expr& g) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(val(v).rows(), val(v).cols());
    n.grad.middleCols(c0, g.cols()) += g;
  }

  template <typename Expr>
  void accum_row(Var v, Eigen::Index r, const Expr& g) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(val(v).rows(), val(v).cols());
    n.grad.row(r) += g;
  }

  // Reverse sweep from a 1x1 scalar node.
  void backward(Var root) {
    const Mat& rv = val(root);
    if (rv.rows() != 1 || rv.cols() != 1)
      throw ShapeError("backward root must be scalar (1x1)");
    Node& rn = nodes_[static_cast<size_t>(root.id)];
    if (rn.grad.size() == 0) rn.grad = Mat::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.requires_grad && n.grad.size() > 0 && n.backward)
        n.backward(*this, n.grad);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  mutable Mat zero_buf_;
};

namespace detail {
inline bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (t.requires_grad(v)) return true;
  return false;
}
inline void check_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": operand shapes differ");
}
}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Var add(Tape& t, Var a, Var b) {
  detail::check_same_shape(t.val(a), t.val(b), "add");
  return t.op(t.val(a) + t.val(b), detail::any_grad(t, {a, b}),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g);
                t.accum(b, g);
              });
}

inline Var sub(Tape& t, Var a, Var b) {
  detail::check_same_shape(t.val(a), t.val(b), "sub");
  return t.op(t.val(a) - t.val(b), detail::any_grad(t, {a, b}),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g);
                t.accum(b, -g);
              });
}

inline Var cwise_mul(Tape& t, Var a, Var b) {
  detail::check_same_shape(t.val(a), t.val(b), "cwise_mul");
  return t.op(t.val(a).cwiseProduct(t.val(b)), detail::any_grad(t, {a, b}),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g.cwiseProduct(t.val(b)));
                t.accum(b, g.cwiseProduct(t.val(a)));
              });
}

inline Var scale(Tape& t, Var a, double s) {
  return t.op(t.val(a) * s, t.requires_grad(a),
              [a, s](Tape& t, const Mat& g) { t.accum(a, g * s); });
}

inline Var add_scalar(Tape& t, Var a, double s) {
  return t.op(t.val(a).array() + s, t.requires_grad(a),
              [a](Tape& t, const Mat& g) { t.accum(a, g); });
}

inline Var tanh_(Tape& t, Var a) {
  Mat y = t.val(a).array().tanh();
  return t.op(std::move(y), t.requires_grad(a), [a](Tape& t, const Mat& g) {
    const Mat y2 = t.val(a).array().tanh();
    t.accum(a, g.cwiseProduct((1.0 - y2.array().square()).matrix()));
  });
}

inline Var sigmoid(Tape& t, Var a) {
  Mat y = (1.0 / (1.0 + (-t.val(a)).array().exp()));
  return t.op(std::move(y), t.requires_grad(a), [a](Tape& t, const Mat& g) {
    Mat y = (1.0 / (1.0 + (-t.val(a)).array().exp()));
    t.accum(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

inline Var relu(Tape& t, Var a) {
  return t.op(t.val(a).cwiseMax(0.0), t.requires_grad(a),
              [a](Tape& t, const Mat& g) {
                Mat mask = (t.val(a).array() > 0.0).cast<double>();
                t.accum(a, g.cwiseProduct(mask));
              });
}

inline Var exp_(Tape& t, Var a) {
  Mat y = t.val(a).array().exp();
  Mat ycopy = y;
  return t.op(std::move(y), t.requires_grad(a),
              [a, ycopy](Tape& t, const Mat& g) {
                t.accum(a, g.cwiseProduct(ycopy));
              });
}

inline Var abs_(Tape& t, Var a) {
  return t.op(t.val(a).cwiseAbs(), t.requires_grad(a),
              [a](Tape& t, const Mat& g) {
                Mat s = t.val(a).array().sign();
                t.accum(a, g.cwiseProduct(s));
              });
}

// ---- matrix products -------------------------------------------------------

inline Var matmul(Tape& t, Var a, Var b) {
  const Mat& A = t.val(a);
  const Mat& B = t.val(b);
  if (A.cols() != B.rows()) throw ShapeError("matmul: inner dims differ");
  return t.op(A * B, detail::any_grad(t, {a, b}),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g * t.val(b).transpose());
                t.accum(b, t.val(a).transpose() * g);
              });
}

// a * b^T
inline Var matmul_nt(Tape& t, Var a, Var b) {
  const Mat& A = t.val(a);
  const Mat& B = t.val(b);
  if (A.cols() != B.cols()) throw ShapeError("matmul_nt: inner dims differ");
  return t.op(A * B.transpose(), detail::any_grad(t, {a, b}),
              [a, b](Tape& t, const Mat& g) {
                t.accum(a, g * t.val(b));
                t.accum(b, g.transpose() * t.val(a));
              });
}

// Broadcast a [1 x D] row over an [N x D] matrix.
inline Var add_row_broadcast(Tape& t, Var a, Var row) {
  const Mat& A = t.val(a);
  const Mat& R = t.val(row);
  if (R.rows() != 1 || R.cols() != A.cols())
    throw ShapeError("add_row_broadcast: row must be 1 x cols(a)");
  Mat y = A;
  y.rowwise() += R.row(0);
  return t.op(std::move(y), detail::any_grad(t, {a, row}),
              [a, row](Tape& t, const Mat& g) {
                t.accum(a, g);
                t.accum(row, g.colwise().sum());
              });
}

// ---- structure -------------------------------------------------------------

inline Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no parts");
  Eigen::Index cols = t.val(parts[0]).cols(), rows = 0;
  for (Var p : parts) {
    if (t.val(p).cols() != cols)
      throw ShapeError("concat_rows: column counts differ");
    rows += t.val(p).rows();
  }
  Mat y(rows, cols);
  Eigen::Index r = 0;
  bool rg = false;
  for (Var p : parts) {
    y.middleRows(r, t.val(p).rows()) = t.val(p);
    r += t.val(p).rows();
    rg = rg || t.requires_grad(p);
  }
  return t.op(std::move(y), rg, [parts](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (Var p : parts) {
      Eigen::Index n = t.val(p).rows();
      t.accum(p, g.middleRows(r, n));
      r += n;
    }
  });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no parts");
  Eigen::Index rows = t.val(parts[0]).rows(), cols = 0;
  for (Var p : parts) {
    if (t.val(p).rows() != rows)
      throw ShapeError("concat_cols: row counts differ");
    cols += t.val(p).cols();
  }
  Mat y(rows, cols);
  Eigen::Index c = 0;
  bool rg = false;
  for (Var p : parts) {
    y.middleCols(c, t.val(p).cols()) = t.val(p);
    c += t.val(p).cols();
    rg = rg || t.requires_grad(p);
  }
  return t.op(std::move(y), rg, [parts](Tape& t, const Mat& g) {
    Eigen::Index c = 0;
    for (Var p : parts) {
      Eigen::Index n = t.val(p).cols();
      t.accum(p, g.middleCols(c, n));
      c += n;
    }
  });
}

inline Var slice_rows(Tape& t, Var a, Eigen::Index r0, Eigen::Index n) {
  const Mat& A = t.val(a);
  if (r0 < 0 || r0 + n > A.rows()) throw IndexError("slice_rows out of range");
  return t.op(A.middleRows(r0, n), t.requires_grad(a),
              [a, r0](Tape& t, const Mat& g) { t.accum_rows_at(a, r0, g); });
}

inline Var slice_cols(Tape& t, Var a, Eigen::Index c0, Eigen::Index n) {
  const Mat& A = t.val(a);
  if (c0 < 0 || c0 + n > A.cols()) throw IndexError("slice_cols out of range");
  return t.op(A.middleCols(c0, n), t.requires_grad(a),
              [a, c0](Tape& t, const Mat& g) { t.accum_cols_at(a, c0, g); });
}

// out.row(k) = a.row(idx[k]); duplicate indices allowed (length regulator,
// embedding lookups, broadcasts).
inline Var gather_rows(Tape& t, Var a, std::vector<int> idx) {
  const Mat& A = t.val(a);
  Mat y(static_cast<Eigen::Index>(idx.size()), A.cols());
  for (size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= A.rows())
      throw IndexError("gather_rows index out of range");
    y.row(static_cast<Eigen::Index>(k)) = A.row(idx[k]);
  }
  return t.op(std::move(y), t.requires_grad(a),
              [a, idx = std::move(idx)](Tape& t, const Mat& g) {
                for (size_t k = 0; k < idx.size(); ++k)
                  t.accum_row(a, idx[k], g.row(static_cast<Eigen::Index>(k)));
              });
}

// ---- reductions ------------------------------------------------------------

inline Var sum_all(Tape& t, Var a) {
  Mat y(1, 1);
  y(0, 0) = t.val(a).sum();
  return t.op(std::move(y), t.requires_grad(a),
              [a](Tape& t, const Mat& g) {
                t.accum(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(),
                                         g(0, 0)));
              });
}

inline Var mean_all(Tape& t, Var a) {
  const Mat& A = t.val(a);
  if (A.size() == 0) throw EmptyInputError("mean_all: empty matrix");
  Mat y(1, 1);
  y(0, 0) = A.mean();
  return t.op(std::move(y), t.requires_grad(a), [a](Tape& t, const Mat& g) {
    const Mat& A = t.val(a);
    t.accum(a, Mat::Constant(A.rows(), A.cols(),
                             g(0, 0) / static_cast<double>(A.size())));
  });
}

// ---- softmax ---------------------------------------------------------------

inline Var softmax_rows(Tape& t, Var a) {
  Mat y = t.val(a);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  Mat ycopy = y;
  return t.op(std::move(y), t.requires_grad(a),
              [a, ycopy](Tape& t, const Mat& g) {
                Mat d(ycopy.rows(), ycopy.cols());
                for (Eigen::Index r = 0; r < ycopy.rows(); ++r) {
                  double s = g.row(r).dot(ycopy.row(r));
                  d.row(r) =
                      ycopy.row(r).cwiseProduct((g.row(r).array() - s).matrix());
                }
                t.accum(a, d);
              });
}

// ---- losses ----------------------------------------------------------------

inline Var mse(Tape& t, Var pred, Var target) {
  Var d = sub(t, pred, target);
  return mean_all(t, cwise_mul(t, d, d));
}

inline Var mae(Tape& t, Var pred, Var target) {
  return mean_all(t, abs_(t, sub(t, pred, target)));
}

// ---- convolutions ----------------------------------------------------------

enum class Pad1d { kZero, kReplicate };

// 1-D convolution along rows. x: [M x Cin], w: [(Cin*k) x Cout], b: [1 x Cout],
// stride 1, 'same' output [M x Cout]. Patch column layout: ci*k + tap.
inline Var conv1d(Tape& t, Var x, Var w, Var b, int k, Pad1d pad) {
  const Mat& X = t.val(x);
  const Mat& W = t.val(w);
  const Mat& B = t.val(b);
  const Eigen::Index m = X.rows(), cin = X.cols();
  if (W.rows() != cin * k) throw ShapeError("conv1d: weight rows != Cin*k");
  const Eigen::Index cout = W.cols();
  if (B.rows() != 1 || B.cols() != cout)
    throw ShapeError("conv1d: bias must be 1 x Cout");
  const int half = k / 2;

  Mat P = Mat::Zero(m, cin * k);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (int tap = 0; tap < k; ++tap) {
      Eigen::Index src = r + tap - half;
      if (pad == Pad1d::kReplicate) src = std::clamp<Eigen::Index>(src, 0, m - 1);
      if (src < 0 || src >= m) continue;
      for (Eigen::Index c = 0; c < cin; ++c) P(r, c * k + tap) = X(src, c);
    }
  }
  Mat y = P * W;
  y.rowwise() += B.row(0);

  return t.op(std::move(y), detail::any_grad(t, {x, w, b}),
              [x, w, b, k, pad, P = std::move(P)](Tape& t, const Mat& g) {
                const Mat& X = t.val(x);
                const Eigen::Index m = X.rows(), cin = X.cols();
                const int half = k / 2;
                t.accum(w, P.transpose() * g);
                t.accum(b, g.colwise().sum());
                if (t.requires_grad(x)) {
                  Mat dP = g * t.val(w).transpose();
                  Mat dX = Mat::Zero(m, cin);
                  for (Eigen::Index r = 0; r < m; ++r) {
                    for (int tap = 0; tap < k; ++tap) {
                      Eigen::Index src = r + tap - half;
                      if (pad == Pad1d::kReplicate)
                        src = std::clamp<Eigen::Index>(src, 0, m - 1);
                      if (src < 0 || src >= m) continue;
                      for (Eigen::Index c = 0; c < cin; ++c)
                        dX(src, c) += dP(r, c * k + tap);
                    }
                  }
                  t.accum(x, dX);
                }
              });
}

// 3x3 stride-2 pad-1 2-D convolution. Feature maps are packed as
// [T x (C*F)] with column index c*F + f. Output: [ceil(T/2) x (Cout*ceil(F/2))].
inline Var conv2d_s2(Tape& t, Var x, Var w, Var b, int cin, int f) {
  const Mat& X = t.val(x);
  const Mat& W = t.val(w);
  const Mat& B = t.val(b);
  const Eigen::Index T = X.rows();
  if (X.cols() != static_cast<Eigen::Index>(cin) * f)
    throw ShapeError("conv2d_s2: input cols != Cin*F");
  if (W.rows() != cin * 9) throw ShapeError("conv2d_s2: weight rows != Cin*9");
  const Eigen::Index cout = W.cols();
  if (B.rows() != 1 || B.cols() != cout)
    throw ShapeError("conv2d_s2: bias must be 1 x Cout");
  const Eigen::Index t2 = (T + 1) / 2, f2 = (f + 1) / 2;

  Mat P = Mat::Zero(t2 * f2, cin * 9);
  for (Eigen::Index ot = 0; ot < t2; ++ot) {
    for (Eigen::Index of = 0; of < f2; ++of) {
      const Eigen::Index row = ot * f2 + of;
      for (int dt = 0; dt < 3; ++dt) {
        const Eigen::Index st = 2 * ot - 1 + dt;
        if (st < 0 || st >= T) continue;
        for (int df = 0; df < 3; ++df) {
          const Eigen::Index sf = 2 * of - 1 + df;
          if (sf < 0 || sf >= f) continue;
          for (int c = 0; c < cin; ++c)
            P(row, c * 9 + dt * 3 + df) = X(st, c * f + sf);
        }
      }
    }
  }
  Mat O = P * W;
  O.rowwise() += B.row(0);
  Mat y(t2, cout * f2);
  for (Eigen::Index ot = 0; ot < t2; ++ot)
    for (Eigen::Index of = 0; of < f2; ++of)
      for (Eigen::Index c = 0; c < cout; ++c)
        y(ot, c * f2 + of) = O(ot * f2 + of, c);

  return t.op(
      std::move(y), detail::any_grad(t, {x, w, b}),
      [x, w, b, cin, f, P = std::move(P)](Tape& t, const Mat& g) {
        const Mat& X = t.val(x);
        const Eigen::Index T = X.rows();
        const Eigen::Index t2 = (T + 1) / 2, f2 = (f + 1) / 2;
        const Eigen::Index cout = t.val(w).cols();
        Mat dO(t2 * f2, cout);
        for (Eigen::Index ot = 0; ot < t2; ++ot)
          for (Eigen::Index of = 0; of < f2; ++of)
            for (Eigen::Index c = 0; c < cout; ++c)
              dO(ot * f2 + of, c) = g(ot, c * f2 + of);
        t.accum(w, P.transpose() * dO);
        t.accum(b, dO.colwise().sum());
        if (t.requires_grad(x)) {
          Mat dP = dO * t.val(w).transpose();
          Mat dX = Mat::Zero(T, X.cols());
          for (Eigen::Index ot = 0; ot < t2; ++ot) {
            for (Eigen::Index of = 0; of < f2; ++of) {
              const Eigen::Index row = ot * f2 + of;
              for (int dt = 0; dt < 3; ++dt) {
                const Eigen::Index st = 2 * ot - 1 + dt;
                if (st < 0 || st >= T) continue;
                for (int df = 0; df < 3; ++df) {
                  const Eigen::Index sf = 2 * of - 1 + df;
                  if (sf < 0 || sf >= f) continue;
                  for (int c = 0; c < cin; ++c)
                    dX(st, c * f + sf) += dP(row, c * 9 + dt * 3 + df);
                }
              }
            }
          }
          t.accum(x, dX);
        }
      });
}

// ---- normalization ---------------------------------------------------------

// Per-channel batch norm over a packed [T x (C*F)] map. In batch-stats mode
// the statistics are computed from x and written to *out_mean / *out_var
// (biased variance); otherwise `mean`/`var` supply fixed statistics.
inline Var batch_norm(Tape& t, Var x, Var gamma, Var beta, int c, int f,
                      double eps, bool use_batch_stats, const Mat& mean,
                      const Mat& var, Mat* out_mean = nullptr,
                      Mat* out_var = nullptr) {
  const Mat& X = t.val(x);
  const Eigen::Index T = X.rows();
  if (X.cols() != static_cast<Eigen::Index>(c) * f)
    throw ShapeError("batch_norm: input cols != C*F");
  Mat mu(1, c), v(1, c);
  if (use_batch_stats) {
    for (int ch = 0; ch < c; ++ch) {
      const auto block = X.middleCols(static_cast<Eigen::Index>(ch) * f, f);
      mu(0, ch) = block.mean();
      v(0, ch) = (block.array() - mu(0, ch)).square().mean();
    }
    if (out_mean) *out_mean = mu;
    if (out_var) *out_var = v;
  } else {
    mu = mean;
    v = var;
  }
  const Mat& G = t.val(gamma);
  const Mat& Bt = t.val(beta);
  Mat xhat(T, X.cols());
  Mat y(T, X.cols());
  for (int ch = 0; ch < c; ++ch) {
    double s = std::sqrt(v(0, ch) + eps);
    auto xb = X.middleCols(static_cast<Eigen::Index>(ch) * f, f);
    xhat.middleCols(static_cast<Eigen::Index>(ch) * f, f) =
        (xb.array() - mu(0, ch)) / s;
    y.middleCols(static_cast<Eigen::Index>(ch) * f, f) =
        xhat.middleCols(static_cast<Eigen::Index>(ch) * f, f) * G(0, ch);
    y.middleCols(static_cast<Eigen::Index>(ch) * f, f).array() += Bt(0, ch);
  }

  return t.op(
      std::move(y), detail::any_grad(t, {x, gamma, beta}),
      [x, gamma, beta, c, f, eps, use_batch_stats, mu, v,
       xhat](Tape& t, const Mat& g) {
        const Eigen::Index T = t.val(x).rows();
        const double n = static_cast<double>(T) * f;
        Mat dgamma = Mat::Zero(1, c), dbeta = Mat::Zero(1, c);
        Mat dX(T, static_cast<Eigen::Index>(c) * f);
        for (int ch = 0; ch < c; ++ch) {
          const Eigen::Index c0 = static_cast<Eigen::Index>(ch) * f;
          const auto gb = g.middleCols(c0, f);
          const auto xh = xhat.middleCols(c0, f);
          dgamma(0, ch) = gb.cwiseProduct(xh).sum();
          dbeta(0, ch) = gb.sum();
          const double s = std::sqrt(v(0, ch) + eps);
          const double gam = t.val(gamma)(0, ch);
          if (use_batch_stats) {
            // standard batch-stat backward
            const double sum_dxhat = gb.sum() * gam;
            const double sum_dxhat_xhat = gb.cwiseProduct(xh).sum() * gam;
            dX.middleCols(c0, f) =
                ((gb.array() * gam * n - sum_dxhat -
                  xh.array() * sum_dxhat_xhat) /
                 (n * s))
                    .matrix();
          } else {
            dX.middleCols(c0, f) = (gb.array() * gam / s).matrix();
          }
        }
        t.accum(gamma, dgamma);
        t.accum(beta, dbeta);
        t.accum(x, dX);
      });
}

// Per-row layer norm with learned gain/bias. x: [N x D], gamma/beta: [1 x D].
inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Mat& X = t.val(x);
  const Eigen::Index N = X.rows(), D = X.cols();
  if (t.val(gamma).cols() != D || t.val(beta).cols() != D)
    throw ShapeError("layer_norm: gamma/beta must be 1 x D");
  Mat xhat(N, D), y(N, D);
  Eigen::VectorXd sd(N);
  for (Eigen::Index r = 0; r < N; ++r) {
    double mu = X.row(r).mean();
    double var = (X.row(r).array() - mu).square().mean();
    sd(r) = std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) / sd(r);
    y.row(r) = xhat.row(r).cwiseProduct(t.val(gamma).row(0)) +
               t.val(beta).row(0);
  }
  return t.op(
      std::move(y), detail::any_grad(t, {x, gamma, beta}),
      [x, gamma, beta, xhat, sd](Tape& t, const Mat& g) {
        const Eigen::Index N = xhat.rows(), D = xhat.cols();
        Mat dgamma = Mat::Zero(1, D), dbeta = Mat::Zero(1, D);
        Mat dX(N, D);
        const auto& G = t.val(gamma);
        for (Eigen::Index r = 0; r < N; ++r) {
          dgamma.row(0) += g.row(r).cwiseProduct(xhat.row(r));
          dbeta.row(0) += g.row(r);
          Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(G.row(0));
          const double sum_dxhat = dxhat.sum();
          const double sum_dxhat_xhat = dxhat.dot(xhat.row(r));
          dX.row(r) = (dxhat.array() * D - sum_dxhat -
                       xhat.row(r).array() * sum_dxhat_xhat) /
                      (static_cast<double>(D) * sd(r));
        }
        t.accum(gamma, dgamma);
        t.accum(beta, dbeta);
        t.accum(x, dX);
      });
}

}  // namespace ctts::ad
