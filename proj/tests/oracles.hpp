#pragma once

// Scalar-loop reference implementations used as test oracles. They are
// written independently of the vectorised library code: explicit loops over
// (target, source, dimension) with no shared helpers.

#include <cmath>
#include <vector>

#include "casa/tensor.hpp"

namespace oracle {

using casa::Mat;
using casa::Vec;

inline double act_tanh(double x) { return std::tanh(x); }
inline double act_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Score of dimension `d` for column `x_col` under W2 tanh(W1 x + b1) + b2.
inline double s2t_score(const Mat& x, int col, int d, const Mat& w1, const Mat& b1, const Mat& w2, const Mat& b2) {
  const int n = static_cast<int>(w1.rows());
  double s = b2(d, 0);
  for (int h = 0; h < n; ++h) {
    double pre = b1(h, 0);
    for (int i = 0; i < x.rows(); ++i) pre += w1(h, i) * x(i, col);
    s += w2(d, h) * act_tanh(pre);
  }
  return s;
}

/// Per-dimension softmax over the unmasked columns, weighted sum.
inline Vec s2t(const Mat& x, const std::vector<bool>& mask, const Mat& w1, const Mat& b1, const Mat& w2, const Mat& b2) {
  const int D = static_cast<int>(x.rows()), K = static_cast<int>(x.cols());
  Vec out = Vec::Zero(D);
  for (int d = 0; d < D; ++d) {
    double mx = -1e300;
    for (int t = 0; t < K; ++t)
      if (mask[static_cast<std::size_t>(t)]) mx = std::max(mx, s2t_score(x, t, d, w1, b1, w2, b2));
    double z = 0.0;
    for (int t = 0; t < K; ++t)
      if (mask[static_cast<std::size_t>(t)]) z += std::exp(s2t_score(x, t, d, w1, b1, w2, b2) - mx);
    for (int t = 0; t < K; ++t)
      if (mask[static_cast<std::size_t>(t)]) out(d) += std::exp(s2t_score(x, t, d, w1, b1, w2, b2) - mx) / z * x(d, t);
  }
  return out;
}

/// Context fusion: shift each non-pad column by its position column, then s2t.
inline Vec fuse(const Mat& turns, const std::vector<bool>& pad, const Mat& position, const Mat& w1, const Mat& b1,
                const Mat& w2, const Mat& b2) {
  Mat shifted = turns;
  std::vector<bool> keep(pad.size());
  for (int t = 0; t < turns.cols(); ++t) {
    keep[static_cast<std::size_t>(t)] = !pad[static_cast<std::size_t>(t)];
    for (int d = 0; d < turns.rows(); ++d) shifted(d, t) = turns(d, t) + position(d, t);
  }
  return s2t(shifted, keep, w1, b1, w2, b2);
}

/// Directional token2token attention. forward: sources s < j; backward: s > j.
inline Mat t2t(const Mat& h, const std::vector<bool>& mask, bool forward, const Mat& w_target, const Mat& w_source,
               const Mat& b_hidden, const Mat& w_score, const Mat& b_score) {
  const int D = static_cast<int>(h.rows()), K = static_cast<int>(h.cols());
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  Mat out = Mat::Zero(D, K);
  auto score = [&](int j, int s, int d) {
    double v = b_score(d, 0);
    for (int q = 0; q < D; ++q) {
      double pre = b_hidden(q, 0);
      for (int i = 0; i < D; ++i) pre += w_target(q, i) * h(i, j) + w_source(q, i) * h(i, s);
      v += w_score(d, q) * act_tanh(pre);
    }
    return v * scale;
  };
  for (int j = 0; j < K; ++j) {
    if (!mask[static_cast<std::size_t>(j)]) continue;
    for (int d = 0; d < D; ++d) {
      std::vector<double> sc;
      std::vector<int> src;
      for (int s = 0; s < K; ++s) {
        bool visible = forward ? s < j : s > j;
        if (visible && mask[static_cast<std::size_t>(s)]) {
          sc.push_back(score(j, s, d));
          src.push_back(s);
        }
      }
      if (src.empty()) continue;
      double mx = sc[0];
      for (double v : sc) mx = std::max(mx, v);
      double z = 0.0;
      for (double v : sc) z += std::exp(v - mx);
      for (std::size_t q = 0; q < src.size(); ++q) out(d, j) += std::exp(sc[q] - mx) / z * h(d, src[q]);
    }
  }
  return out;
}

/// G = sigmoid(W_a a + W_b b + bias); out = G a + (1 - G) b.
inline Mat gate(const Mat& a, const Mat& b, const Mat& w_a, const Mat& w_b, const Mat& bias) {
  Mat out(a.rows(), a.cols());
  for (int j = 0; j < a.cols(); ++j)
    for (int d = 0; d < a.rows(); ++d) {
      double pre = bias(d, 0);
      for (int i = 0; i < a.rows(); ++i) pre += w_a(d, i) * a(i, j) + w_b(d, i) * b(i, j);
      double g = act_sigmoid(pre);
      out(d, j) = g * a(d, j) + (1.0 - g) * b(d, j);
    }
  return out;
}

/// One GRU step with [reset; update; candidate] row blocks.
inline Vec gru_step(const Vec& x, const Vec& h, const Mat& wi, const Mat& wh, const Mat& bi, const Mat& bh) {
  const int H = static_cast<int>(h.size());
  Vec out(H);
  for (int u = 0; u < H; ++u) {
    auto lin = [&](int row, bool input) {
      double v = input ? bi(row, 0) : bh(row, 0);
      if (input)
        for (int i = 0; i < x.size(); ++i) v += wi(row, i) * x(i);
      else
        for (int i = 0; i < H; ++i) v += wh(row, i) * h(i);
      return v;
    };
    double r = act_sigmoid(lin(u, true) + lin(u, false));
    double z = act_sigmoid(lin(H + u, true) + lin(H + u, false));
    double n = act_tanh(lin(2 * H + u, true) + r * lin(2 * H + u, false));
    out(u) = (1.0 - z) * n + z * h(u);
  }
  return out;
}

}  // namespace oracle
