#pragma once

// Position-aware directional multi-dimensional self-attention utterance
// encoder: token embedding + absolute position embedding, token2token
// attention under forward/backward masks, per-direction fusion gates, and a
// source2token reduction to a single sentence vector.
//
// Matrices are column-per-token. Every forward function optionally fills a
// cache; the matching *_backward accumulates parameter gradients and adds
// input gradients into the caller's buffers.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "casa/data.hpp"
#include "casa/tensor.hpp"

namespace casa {

enum class Direction { Forward, Backward };

inline const char* direction_name(Direction d) { return d == Direction::Forward ? "fw" : "bw"; }

// ---- source2token ---------------------------------------------------------

/// F(X) = W_score tanh(W_hidden X + b_hidden) + b_score, softmax over columns
/// per row, weighted sum of X.
struct S2tParams {
  Tensor* w_hidden = nullptr;
  Tensor* b_hidden = nullptr;
  Tensor* w_score = nullptr;
  Tensor* b_score = nullptr;

  static S2tParams create(ParameterSet& ps, const std::string& prefix, Eigen::Index dim, Rng& rng) {
    S2tParams p;
    p.w_hidden = ps.add(prefix + ".w_hidden", dim, dim, Init::Xavier, rng);
    p.b_hidden = ps.add(prefix + ".b_hidden", dim, 1, Init::Zeros, rng);
    p.w_score = ps.add(prefix + ".w_score", dim, dim, Init::Xavier, rng);
    p.b_score = ps.add(prefix + ".b_score", dim, 1, Init::Zeros, rng);
    return p;
  }
};

struct S2tCache {
  Mat input;
  Mat hidden;
  Mat weights;
};

/// Per-dimension attention scores of every column of `x`.
inline Mat s2t_scores(const Mat& x, const S2tParams& p, Mat* hidden_out = nullptr) {
  Mat hidden = tanh((p.w_hidden->value * x).colwise() + p.b_hidden->value.col(0));
  Mat scores = (p.w_score->value * hidden).colwise() + p.b_score->value.col(0);
  if (hidden_out) *hidden_out = std::move(hidden);
  return scores;
}

/// All columns of `x` are attended; callers drop padded columns first.
inline Vec s2t_forward(const Mat& x, const S2tParams& p, S2tCache* cache = nullptr) {
  if (x.cols() == 0) throw std::invalid_argument("source2token attention over an empty sequence");
  Mat hidden;
  Mat scores = s2t_scores(x, p, &hidden);
  Mat weights(scores.rows(), scores.cols());
  row_softmax_block(scores, 0, scores.cols(), weights);
  Vec out = (weights.array() * x.array()).rowwise().sum().matrix();
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(hidden);
    cache->weights = std::move(weights);
  }
  return out;
}

inline void s2t_backward(const S2tCache& c, const Vec& d_out, const S2tParams& p, Mat& d_input) {
  const Mat& x = c.input;
  const Mat& w = c.weights;
  d_input.array() += w.array().colwise() * d_out.array();
  Mat d_w = (x.array().colwise() * d_out.array()).matrix();
  Mat d_scores(w.rows(), w.cols());
  row_softmax_block_backward(w, d_w, 0, w.cols(), d_scores);
  p.w_score->grad.noalias() += d_scores * c.hidden.transpose();
  p.b_score->grad.col(0) += d_scores.rowwise().sum();
  Mat d_pre = (p.w_score->value.transpose() * d_scores).array() * (1.0 - c.hidden.array().square());
  p.w_hidden->grad.noalias() += d_pre * x.transpose();
  p.b_hidden->grad.col(0) += d_pre.rowwise().sum();
  d_input.noalias() += p.w_hidden->value.transpose() * d_pre;
}

// ---- token2token ----------------------------------------------------------

/// score(j <- s) = (W_score tanh(W_target h_j + W_source h_s + b_hidden) + b_score) / sqrt(d_h),
/// one score per hidden dimension.
struct T2tParams {
  Tensor* w_target = nullptr;
  Tensor* w_source = nullptr;
  Tensor* b_hidden = nullptr;
  Tensor* w_score = nullptr;
  Tensor* b_score = nullptr;

  static T2tParams create(ParameterSet& ps, const std::string& prefix, Eigen::Index d_h, Rng& rng) {
    T2tParams p;
    p.w_target = ps.add(prefix + ".w_target", d_h, d_h, Init::Xavier, rng);
    p.w_source = ps.add(prefix + ".w_source", d_h, d_h, Init::Xavier, rng);
    p.b_hidden = ps.add(prefix + ".b_hidden", d_h, 1, Init::Zeros, rng);
    p.w_score = ps.add(prefix + ".w_score", d_h, d_h, Init::Xavier, rng);
    p.b_score = ps.add(prefix + ".b_score", d_h, 1, Init::Zeros, rng);
    return p;
  }
};

struct T2tCache {
  Mat input;
  std::vector<Eigen::Index> pair_target, pair_source;
  /// First pair column and pair count for each target position.
  std::vector<Eigen::Index> offset, count;
  Mat hidden;   // d_h x pairs
  Mat weights;  // d_h x pairs
};

/// Source positions visible from `target` under the directional mask.
inline bool t2t_allowed(Direction dir, Eigen::Index target, Eigen::Index source) {
  return dir == Direction::Forward ? source < target : source > target;
}

/// Directional multi-dimensional attention over the columns of `h` (all
/// real tokens). Targets with no visible source produce a zero column.
inline Mat t2t_forward(const Mat& h, Direction dir, const T2tParams& p, T2tCache* cache = nullptr) {
  const Eigen::Index d = h.rows(), n = h.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  T2tCache local;
  T2tCache& c = cache ? *cache : local;
  c.input = h;
  c.pair_target.clear();
  c.pair_source.clear();
  c.offset.assign(static_cast<std::size_t>(n), 0);
  c.count.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    c.offset[static_cast<std::size_t>(j)] = static_cast<Eigen::Index>(c.pair_target.size());
    for (Eigen::Index s = 0; s < n; ++s)
      if (t2t_allowed(dir, j, s)) {
        c.pair_target.push_back(j);
        c.pair_source.push_back(s);
      }
    c.count[static_cast<std::size_t>(j)] = static_cast<Eigen::Index>(c.pair_target.size()) - c.offset[static_cast<std::size_t>(j)];
  }
  const auto pairs = static_cast<Eigen::Index>(c.pair_target.size());
  Mat out = Mat::Zero(d, n);
  if (pairs == 0) {
    c.hidden.resize(d, 0);
    c.weights.resize(d, 0);
    return out;
  }
  Mat a = (p.w_target->value * h).colwise() + p.b_hidden->value.col(0);
  Mat b = p.w_source->value * h;
  c.hidden.resize(d, pairs);
  for (Eigen::Index q = 0; q < pairs; ++q)
    c.hidden.col(q) = (a.col(c.pair_target[static_cast<std::size_t>(q)]) + b.col(c.pair_source[static_cast<std::size_t>(q)]))
                          .array()
                          .tanh()
                          .matrix();
  Mat scores = ((p.w_score->value * c.hidden).colwise() + p.b_score->value.col(0)) * scale;
  c.weights.resize(d, pairs);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto cnt = c.count[static_cast<std::size_t>(j)];
    if (cnt == 0) continue;
    auto off = c.offset[static_cast<std::size_t>(j)];
    row_softmax_block(scores, off, cnt, c.weights);
    for (Eigen::Index q = off; q < off + cnt; ++q)
      out.col(j).array() += c.weights.col(q).array() * h.col(c.pair_source[static_cast<std::size_t>(q)]).array();
  }
  return out;
}

inline void t2t_backward(const T2tCache& c, const Mat& d_out, const T2tParams& p, Mat& d_input) {
  const Eigen::Index d = c.input.rows(), n = c.input.cols();
  const auto pairs = static_cast<Eigen::Index>(c.pair_target.size());
  if (pairs == 0) return;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Mat& h = c.input;
  Mat d_w(d, pairs);
  for (Eigen::Index q = 0; q < pairs; ++q) {
    auto j = c.pair_target[static_cast<std::size_t>(q)];
    auto s = c.pair_source[static_cast<std::size_t>(q)];
    d_w.col(q) = (d_out.col(j).array() * h.col(s).array()).matrix();
    d_input.col(s).array() += c.weights.col(q).array() * d_out.col(j).array();
  }
  Mat d_scores(d, pairs);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto cnt = c.count[static_cast<std::size_t>(j)];
    if (cnt == 0) continue;
    row_softmax_block_backward(c.weights, d_w, c.offset[static_cast<std::size_t>(j)], cnt, d_scores);
  }
  d_scores *= scale;
  p.w_score->grad.noalias() += d_scores * c.hidden.transpose();
  p.b_score->grad.col(0) += d_scores.rowwise().sum();
  Mat d_pre = (p.w_score->value.transpose() * d_scores).array() * (1.0 - c.hidden.array().square());
  Mat d_a = Mat::Zero(d, n), d_b = Mat::Zero(d, n);
  for (Eigen::Index q = 0; q < pairs; ++q) {
    d_a.col(c.pair_target[static_cast<std::size_t>(q)]) += d_pre.col(q);
    d_b.col(c.pair_source[static_cast<std::size_t>(q)]) += d_pre.col(q);
  }
  p.b_hidden->grad.col(0) += d_a.rowwise().sum();
  p.w_target->grad.noalias() += d_a * h.transpose();
  p.w_source->grad.noalias() += d_b * h.transpose();
  d_input.noalias() += p.w_target->value.transpose() * d_a;
  d_input.noalias() += p.w_source->value.transpose() * d_b;
}

// ---- fusion gate ----------------------------------------------------------

/// G = sigmoid(W_input A + W_attn B + b);  out = G * A + (1 - G) * B.
struct GateParams {
  Tensor* w_input = nullptr;
  Tensor* w_attn = nullptr;
  Tensor* b = nullptr;

  static GateParams create(ParameterSet& ps, const std::string& prefix, Eigen::Index dim, Rng& rng) {
    GateParams p;
    p.w_input = ps.add(prefix + ".w_input", dim, dim, Init::Xavier, rng);
    p.w_attn = ps.add(prefix + ".w_attn", dim, dim, Init::Xavier, rng);
    p.b = ps.add(prefix + ".b", dim, 1, Init::Zeros, rng);
    return p;
  }
};

struct GateCache {
  Mat a, b, gate;
};

inline Mat fusion_gate_forward(const Mat& a, const Mat& b, const GateParams& p, GateCache* cache = nullptr) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("fusion gate shape mismatch");
  Mat g = sigmoid((p.w_input->value * a + p.w_attn->value * b).colwise() + p.b->value.col(0));
  Mat out = (g.array() * a.array() + (1.0 - g.array()) * b.array()).matrix();
  if (cache) {
    cache->a = a;
    cache->b = b;
    cache->gate = std::move(g);
  }
  return out;
}

inline void fusion_gate_backward(const GateCache& c, const Mat& d_out, const GateParams& p, Mat& d_a, Mat& d_b) {
  const auto g = c.gate.array();
  Mat d_pre = (d_out.array() * (c.a.array() - c.b.array()) * g * (1.0 - g)).matrix();
  d_a.array() += d_out.array() * g;
  d_b.array() += d_out.array() * (1.0 - g);
  p.w_input->grad.noalias() += d_pre * c.a.transpose();
  p.w_attn->grad.noalias() += d_pre * c.b.transpose();
  p.b->grad.col(0) += d_pre.rowwise().sum();
  d_a.noalias() += p.w_input->value.transpose() * d_pre;
  d_b.noalias() += p.w_attn->value.transpose() * d_pre;
}

// ---- full encoder ---------------------------------------------------------

struct EncoderParams {
  Tensor* token_embedding = nullptr;  // |V| x d_e
  Tensor* projection = nullptr;       // d_h x d_e
  Tensor* position = nullptr;         // d_h x k  (p_u)
  T2tParams t2t[2];
  GateParams gate[2];
  S2tParams s2t;                      // over 2 d_h

  Eigen::Index d_h() const { return projection->rows(); }
  Eigen::Index max_tokens() const { return position->cols(); }

  static EncoderParams create(ParameterSet& ps, int vocab_size, int d_e, int d_h, int max_tokens, Rng& rng) {
    EncoderParams p;
    p.token_embedding = ps.add("encoder.token_embedding", vocab_size, d_e, Init::Normal, rng, 0.1);
    p.projection = ps.add("encoder.projection", d_h, d_e, Init::Xavier, rng);
    p.position = ps.add("encoder.position", d_h, max_tokens, Init::Normal, rng, 0.1);
    for (auto dir : {Direction::Forward, Direction::Backward}) {
      int i = static_cast<int>(dir);
      p.t2t[i] = T2tParams::create(ps, std::string("encoder.t2t.") + direction_name(dir), d_h, rng);
      p.gate[i] = GateParams::create(ps, std::string("encoder.gate.") + direction_name(dir), d_h, rng);
    }
    p.s2t = S2tParams::create(ps, "encoder.s2t", 2 * d_h, rng);
    return p;
  }
};

struct UtteranceEncoding {
  Mat token_states;     // 2 d_h x k  (C_i, forward over backward)
  Vec sentence_vector;  // 2 d_h      (h(Utt_i))
  Mat hidden;           // d_h x k    (H_i)
  std::vector<bool> token_mask;
};

struct EncoderCache {
  std::vector<int> ids;
  Mat emb_mask;
  Mat embedded;  // d_e x n after dropout
  Mat hidden;    // d_h x n
  T2tCache t2t[2];
  GateCache gate[2];
  Mat states_mask;
  Mat states;    // 2 d_h x n after dropout
  S2tCache s2t;
};

/// Number of leading non-PAD tokens; PAD may only appear as trailing padding.
inline Eigen::Index real_length(const std::vector<int>& ids) {
  Eigen::Index n = 0;
  while (n < static_cast<Eigen::Index>(ids.size()) && ids[static_cast<std::size_t>(n)] != kPadToken) ++n;
  for (auto j = static_cast<std::size_t>(n); j < ids.size(); ++j)
    if (ids[j] != kPadToken) throw std::invalid_argument("PAD tokens must be trailing");
  return n;
}

/// H = projection * embed(tokens) + p_u, zero at PAD positions.
inline Mat embed_and_position(const std::vector<int>& ids, const EncoderParams& p) {
  const Eigen::Index k = static_cast<Eigen::Index>(ids.size());
  if (k > p.max_tokens())
    throw std::invalid_argument("utterance has " + std::to_string(k) + " tokens, limit is " +
                                std::to_string(p.max_tokens()));
  Mat h = Mat::Zero(p.d_h(), k);
  for (Eigen::Index j = 0; j < k; ++j) {
    int id = ids[static_cast<std::size_t>(j)];
    if (id < 0 || id >= p.token_embedding->rows()) throw std::out_of_range("token id " + std::to_string(id) + " out of vocabulary");
    if (id == kPadToken) continue;
    h.col(j) = p.projection->value * p.token_embedding->value.row(id).transpose() + p.position->value.col(j);
  }
  return h;
}

/// Encodes the real (non-PAD) prefix of `ids`. With `dropout > 0` and an RNG
/// the embedding and the fused token states are dropped out.
inline UtteranceEncoding encode_utterance(const std::vector<int>& ids, const EncoderParams& p, EncoderCache* cache = nullptr,
                                          double dropout = 0.0, Rng* rng = nullptr) {
  const Eigen::Index n = real_length(ids);
  if (n == 0) throw std::invalid_argument("cannot encode an utterance with no real tokens");
  if (static_cast<Eigen::Index>(ids.size()) > p.max_tokens())
    throw std::invalid_argument("utterance exceeds the maximum token count");
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  const bool drop = dropout > 0.0 && rng != nullptr;
  const Eigen::Index d_e = p.token_embedding->cols(), d_h = p.d_h();

  c.ids.assign(ids.begin(), ids.begin() + n);
  c.embedded.resize(d_e, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    int id = c.ids[static_cast<std::size_t>(j)];
    if (id < 0 || id >= p.token_embedding->rows()) throw std::out_of_range("token id " + std::to_string(id) + " out of vocabulary");
    c.embedded.col(j) = p.token_embedding->value.row(id).transpose();
  }
  if (drop) {
    c.emb_mask = dropout_mask(d_e, n, dropout, *rng);
    c.embedded.array() *= c.emb_mask.array();
  } else {
    c.emb_mask.resize(0, 0);
  }
  c.hidden = p.projection->value * c.embedded + p.position->value.leftCols(n);

  c.states.resize(2 * d_h, n);
  for (int dir = 0; dir < 2; ++dir) {
    Mat attended = t2t_forward(c.hidden, static_cast<Direction>(dir), p.t2t[dir], &c.t2t[dir]);
    c.states.middleRows(dir * d_h, d_h) = fusion_gate_forward(c.hidden, attended, p.gate[dir], &c.gate[dir]);
  }
  if (drop) {
    c.states_mask = dropout_mask(2 * d_h, n, dropout, *rng);
    c.states.array() *= c.states_mask.array();
  } else {
    c.states_mask.resize(0, 0);
  }

  UtteranceEncoding out;
  out.sentence_vector = s2t_forward(c.states, p.s2t, &c.s2t);
  const auto k = static_cast<Eigen::Index>(ids.size());
  out.token_states = Mat::Zero(2 * d_h, k);
  out.token_states.leftCols(n) = c.states;
  out.hidden = Mat::Zero(d_h, k);
  out.hidden.leftCols(n) = c.hidden;
  out.token_mask.assign(static_cast<std::size_t>(k), false);
  for (Eigen::Index j = 0; j < n; ++j) out.token_mask[static_cast<std::size_t>(j)] = true;
  return out;
}

/// Backpropagates gradients w.r.t. the sentence vector, the token states
/// (2 d_h x n) and the hidden matrix H (d_h x n). Empty matrices mean zero.
inline void encoder_backward(const EncoderCache& c, const Vec& d_sentence, const Mat& d_states_in, const Mat& d_hidden_in,
                             const EncoderParams& p) {
  const Eigen::Index n = static_cast<Eigen::Index>(c.ids.size()), d_h = p.d_h();
  Mat d_states = d_states_in.size() ? Mat(d_states_in.leftCols(n)) : Mat::Zero(2 * d_h, n);
  s2t_backward(c.s2t, d_sentence, p.s2t, d_states);
  if (c.states_mask.size()) d_states.array() *= c.states_mask.array();

  Mat d_hidden = d_hidden_in.size() ? Mat(d_hidden_in.leftCols(n)) : Mat::Zero(d_h, n);
  for (int dir = 0; dir < 2; ++dir) {
    Mat d_attended = Mat::Zero(d_h, n);
    fusion_gate_backward(c.gate[dir], d_states.middleRows(dir * d_h, d_h), p.gate[dir], d_hidden, d_attended);
    t2t_backward(c.t2t[dir], d_attended, p.t2t[dir], d_hidden);
  }
  p.position->grad.leftCols(n) += d_hidden;
  p.projection->grad.noalias() += d_hidden * c.embedded.transpose();
  Mat d_emb = p.projection->value.transpose() * d_hidden;
  if (c.emb_mask.size()) d_emb.array() *= c.emb_mask.array();
  for (Eigen::Index j = 0; j < n; ++j) p.token_embedding->grad.row(c.ids[static_cast<std::size_t>(j)]) += d_emb.col(j).transpose();
}

// ---- functional wrappers over padded inputs --------------------------------

/// Directional attention over a padded hidden matrix; masked-out sources are
/// excluded and masked-out targets are left zero.
inline Mat t2t_directional_attention(const Mat& h, const std::vector<bool>& token_mask, Direction dir, const T2tParams& p) {
  std::vector<Eigen::Index> real;
  for (Eigen::Index j = 0; j < h.cols(); ++j)
    if (token_mask[static_cast<std::size_t>(j)]) real.push_back(j);
  Mat compact(h.rows(), static_cast<Eigen::Index>(real.size()));
  for (std::size_t q = 0; q < real.size(); ++q) compact.col(static_cast<Eigen::Index>(q)) = h.col(real[q]);
  Mat attended = t2t_forward(compact, dir, p);
  Mat out = Mat::Zero(h.rows(), h.cols());
  for (std::size_t q = 0; q < real.size(); ++q) out.col(real[q]) = attended.col(static_cast<Eigen::Index>(q));
  return out;
}

/// Sentence vector of padded token states; pads excluded from the softmax.
inline Vec s2t_attention(const Mat& states, const std::vector<bool>& token_mask, const S2tParams& p) {
  std::vector<Eigen::Index> real;
  for (Eigen::Index j = 0; j < states.cols(); ++j)
    if (token_mask[static_cast<std::size_t>(j)]) real.push_back(j);
  if (real.empty()) throw std::invalid_argument("source2token attention over an all-pad input");
  Mat compact(states.rows(), static_cast<Eigen::Index>(real.size()));
  for (std::size_t q = 0; q < real.size(); ++q) compact.col(static_cast<Eigen::Index>(q)) = states.col(real[q]);
  return s2t_forward(compact, p);
}

}  // namespace casa
