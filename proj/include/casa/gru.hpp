#pragma once

#include <string>
#include <vector>

#include "casa/tensor.hpp"

namespace casa {

/// Left-to-right GRU, gate rows ordered [reset; update; candidate]:
///   r = sigmoid(W_r x + b_ir + U_r h + b_hr)
///   z = sigmoid(W_z x + b_iz + U_z h + b_hz)
///   n = tanh(W_n x + b_in + r * (U_n h + b_hn))
///   h' = (1 - z) * n + z * h
struct GruParams {
  Tensor* w_input = nullptr;   // 3H x I
  Tensor* w_hidden = nullptr;  // 3H x H
  Tensor* b_input = nullptr;   // 3H
  Tensor* b_hidden = nullptr;  // 3H

  Eigen::Index hidden_size() const { return w_hidden->cols(); }
  Eigen::Index input_size() const { return w_input->cols(); }

  static GruParams create(ParameterSet& ps, const std::string& prefix, Eigen::Index input, Eigen::Index hidden, Rng& rng) {
    GruParams p;
    p.w_input = ps.add(prefix + ".w_input", 3 * hidden, input, Init::Xavier, rng);
    p.w_hidden = ps.add(prefix + ".w_hidden", 3 * hidden, hidden, Init::Xavier, rng);
    p.b_input = ps.add(prefix + ".b_input", 3 * hidden, 1, Init::Zeros, rng);
    p.b_hidden = ps.add(prefix + ".b_hidden", 3 * hidden, 1, Init::Zeros, rng);
    return p;
  }
};

struct GruCache {
  Mat input;
  Mat h_prev, reset, update, candidate, hidden_proj;  // H x T each
};

/// Runs the GRU from a zero state over the columns of `x`; returns all states (H x T).
inline Mat gru_forward(const Mat& x, const GruParams& p, GruCache* cache = nullptr) {
  const Eigen::Index H = p.hidden_size(), T = x.cols();
  Mat gx = (p.w_input->value * x).colwise() + p.b_input->value.col(0);
  Mat out(H, T);
  GruCache local;
  GruCache& c = cache ? *cache : local;
  c.input = x;
  c.h_prev.resize(H, T);
  c.reset.resize(H, T);
  c.update.resize(H, T);
  c.candidate.resize(H, T);
  c.hidden_proj.resize(H, T);
  Vec h = Vec::Zero(H);
  for (Eigen::Index t = 0; t < T; ++t) {
    Vec gh = p.w_hidden->value * h + p.b_hidden->value.col(0);
    Vec r = sigmoid(Mat(gx.col(t).segment(0, H) + gh.segment(0, H)));
    Vec z = sigmoid(Mat(gx.col(t).segment(H, H) + gh.segment(H, H)));
    Vec hn = gh.segment(2 * H, H);
    Vec n = (gx.col(t).segment(2 * H, H).array() + r.array() * hn.array()).tanh().matrix();
    c.h_prev.col(t) = h;
    c.reset.col(t) = r;
    c.update.col(t) = z;
    c.candidate.col(t) = n;
    c.hidden_proj.col(t) = hn;
    h = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
    out.col(t) = h;
  }
  return out;
}

/// Gradient w.r.t. every output state in, gradient w.r.t. the inputs out.
inline Mat gru_backward(const GruCache& c, const Mat& d_states, const GruParams& p) {
  const Eigen::Index H = p.hidden_size(), T = c.input.cols();
  Mat d_gx(3 * H, T);
  Vec d_next = Vec::Zero(H);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    auto r = c.reset.col(t).array();
    auto z = c.update.col(t).array();
    auto n = c.candidate.col(t).array();
    auto hp = c.h_prev.col(t).array();
    Vec dh = d_states.col(t) + d_next;
    auto dha = dh.array();
    Vec dn_pre = (dha * (1.0 - z) * (1.0 - n.square())).matrix();
    Vec dz_pre = (dha * (hp - n) * z * (1.0 - z)).matrix();
    Vec dr_pre = (dn_pre.array() * c.hidden_proj.col(t).array() * r * (1.0 - r)).matrix();
    Vec d_gh(3 * H);
    d_gh << dr_pre, dz_pre, (dn_pre.array() * r).matrix();
    d_gx.col(t) << dr_pre, dz_pre, dn_pre;
    p.w_hidden->grad.noalias() += d_gh * c.h_prev.col(t).transpose();
    p.b_hidden->grad.col(0) += d_gh;
    d_next = (dha * z).matrix() + p.w_hidden->value.transpose() * d_gh;
  }
  p.w_input->grad.noalias() += d_gx * c.input.transpose();
  p.b_input->grad.col(0) += d_gx.rowwise().sum();
  return p.w_input->value.transpose() * d_gx;
}

}  // namespace casa
