#pragma once

#include <cmath>
#include <vector>

#include "relic/common.hpp"

namespace relic {

// ---------------------------------------------------------------------------
// Rotary position encoding over the *episode index*: pair i of a head vector
// is rotated by angle m * base^(-2i/d_head), m = episode index. Angles are
// computed in double regardless of the working scalar type.
// ---------------------------------------------------------------------------

struct RopeTable {
  double base = 10000.0;
  int d_head = 0;
  Mat<double> cos_;  // [max_m, d_head/2]
  Mat<double> sin_;

  RopeTable() = default;
  RopeTable(double base_, int d_head_) : base(base_), d_head(d_head_) {}

  void ensure(int m_max) {
    if (cos_.rows() > m_max) return;
    const int half = d_head / 2;
    const int rows = m_max + 1;
    cos_.resize(rows, half);
    sin_.resize(rows, half);
    for (int m = 0; m < rows; ++m) {
      for (int i = 0; i < half; ++i) {
        const double angle = m * std::pow(base, -2.0 * i / d_head);
        cos_(m, i) = std::cos(angle);
        sin_(m, i) = std::sin(angle);
      }
    }
  }
};

// Rotates one head vector in place. `dir` = +1 forward, -1 inverse (used by
// the backward pass: rotation is orthogonal, so the adjoint is the inverse
// rotation).
template <typename S>
inline void rope_rotate(S* x, int d_head, const RopeTable& t, int m, int dir = +1) {
  for (int i = 0; i < d_head / 2; ++i) {
    const S c = static_cast<S>(t.cos_(m, i));
    const S s = static_cast<S>(dir * t.sin_(m, i));
    const S x0 = x[2 * i], x1 = x[2 * i + 1];
    x[2 * i] = x0 * c - x1 * s;
    x[2 * i + 1] = x0 * s + x1 * c;
  }
}

// Convenience wrapper over whole rows of a [n, d_head] matrix.
template <typename S>
inline Mat<S> apply_rope_episode(const Mat<S>& x, const std::vector<int>& episode_indices,
                                 double base) {
  check(x.cols() % 2 == 0, "rope/odd_dim", "d_head must be even");
  check(static_cast<int>(episode_indices.size()) == x.rows(), "rope/shape",
        "one episode index per row");
  RopeTable t(base, static_cast<int>(x.cols()));
  int m_max = 0;
  for (int m : episode_indices) m_max = std::max(m_max, m);
  t.ensure(m_max);
  Mat<S> y = x;
  for (int r = 0; r < y.rows(); ++r) rope_rotate(y.row(r).data(), t.d_head, t, episode_indices[r]);
  return y;
}

// ---------------------------------------------------------------------------
// RMSNorm (biasless), GeLU (tanh approximation), softmax
// ---------------------------------------------------------------------------

inline constexpr double kRmsNormEps = 1e-5;

// y = x / rms(x) * g, row-wise. inv_rms (one scalar per row) is saved for the
// backward pass.
template <typename S>
inline void rmsnorm_forward(const Mat<S>& x, const Mat<S>& g, Mat<S>& y, Vec<S>& inv_rms) {
  const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  y.resize(n, d);
  inv_rms.resize(n);
  for (int r = 0; r < n; ++r) {
    const S ms = x.row(r).squaredNorm() / static_cast<S>(d) + static_cast<S>(kRmsNormEps);
    const S inv = S(1) / std::sqrt(ms);
    inv_rms(r) = inv;
    y.row(r) = x.row(r).cwiseProduct(g.row(0)) * inv;
  }
}

template <typename S>
inline void rmsnorm_backward(const Mat<S>& x, const Mat<S>& g, const Vec<S>& inv_rms,
                             const Mat<S>& dy, Mat<S>& dx, Mat<S>& dg) {
  const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  dx.resize(n, d);
  for (int r = 0; r < n; ++r) {
    const S inv = inv_rms(r);
    const S dot = (dy.row(r).cwiseProduct(g.row(0)).cwiseProduct(x.row(r))).sum();
    dx.row(r) = dy.row(r).cwiseProduct(g.row(0)) * inv -
                x.row(r) * (dot * inv * inv * inv / static_cast<S>(d));
    dg.row(0) += dy.row(r).cwiseProduct(x.row(r)) * inv;
  }
}

template <typename S>
inline S gelu_scalar(S x) {
  const S c = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  const S u = c * (x + static_cast<S>(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(u));
}

template <typename S>
inline S gelu_grad_scalar(S x) {
  const S c = static_cast<S>(0.7978845608028654);
  const S u = c * (x + static_cast<S>(0.044715) * x * x * x);
  const S t = std::tanh(u);
  const S du = c * (S(1) + S(3) * static_cast<S>(0.044715) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

template <typename S>
inline void gelu_forward(const Mat<S>& x, Mat<S>& y) {
  y = x.unaryExpr([](S v) { return gelu_scalar(v); });
}

template <typename S>
inline void gelu_backward(const Mat<S>& x, const Mat<S>& dy, Mat<S>& dx) {
  dx = dy.cwiseProduct(x.unaryExpr([](S v) { return gelu_grad_scalar(v); }));
}

// In-place softmax with max subtraction.
template <typename S>
inline void softmax_inplace(S* x, int n) {
  S mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  S sum = S(0);
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

// Given softmax weights w and dL/dw, writes dL/dlogits into dw in place:
// dlogit_i = w_i * (dw_i - <w, dw>).
template <typename S>
inline void softmax_backward_inplace(const S* w, S* dw, int n) {
  S dot = S(0);
  for (int i = 0; i < n; ++i) dot += w[i] * dw[i];
  for (int i = 0; i < n; ++i) dw[i] = w[i] * (dw[i] - dot);
}

// ---------------------------------------------------------------------------
// Single-head causal attention with s sink rows prepended to keys/values.
// Row i of the output attends over {sinks} ∪ {inputs 0..i}; one softmax over
// all s+i+1 logits. Sink behaviour is fully determined by the contents of
// Ks/Vs (zero rows give the softmax-plus-one denominator form). Standalone
// reference used by the tests and by probe tooling; the transformer has a
// fused multi-head version of the same computation.
// ---------------------------------------------------------------------------
template <typename S>
inline Mat<S> sink_attention(const Mat<S>& Q, const Mat<S>& K, const Mat<S>& V, const Mat<S>& Ks,
                             const Mat<S>& Vs, double scale = -1.0) {
  const int n = static_cast<int>(Q.rows());
  const int dh = static_cast<int>(Q.cols());
  const int s = static_cast<int>(Ks.rows());
  check(K.rows() == n && V.rows() == n && K.cols() == dh && V.cols() == dh, "attn/shape",
        "Q/K/V must agree");
  check(Vs.rows() == s && (s == 0 || (Ks.cols() == dh && Vs.cols() == dh)), "attn/shape",
        "sink rows must agree");
  check(Q.allFinite() && K.allFinite() && V.allFinite(), "attn/non_finite", "inputs");
  check(s == 0 || (Ks.allFinite() && Vs.allFinite()), "attn/non_finite", "sinks");
  const S sc = static_cast<S>(scale > 0 ? scale : 1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<S> out(n, dh);
  std::vector<S> logits;
  for (int i = 0; i < n; ++i) {
    logits.assign(s + i + 1, S(0));
    for (int j = 0; j < s; ++j) logits[j] = Q.row(i).dot(Ks.row(j)) * sc;
    for (int u = 0; u <= i; ++u) logits[s + u] = Q.row(i).dot(K.row(u)) * sc;
    softmax_inplace(logits.data(), s + i + 1);
    out.row(i).setZero();
    for (int j = 0; j < s; ++j) out.row(i) += logits[j] * Vs.row(j);
    for (int u = 0; u <= i; ++u) out.row(i) += logits[s + u] * V.row(u);
  }
  return out;
}

}  // namespace relic
