#pragma once

// Prediction heads and the joint objective
//   L = L_IC + alpha * L_SL + beta * L_SecIC.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "casa/encoder.hpp"
#include "casa/gru.hpp"
#include "casa/tensor.hpp"

namespace casa {

struct HeadParams {
  Tensor* ic_fc1_w = nullptr;  // d_h x d_T
  Tensor* ic_fc1_b = nullptr;
  Tensor* ic_fc2_w = nullptr;  // d_h x (d_h + 2 d_h)
  Tensor* ic_fc2_b = nullptr;
  Tensor* ic_out_w = nullptr;  // |I| x d_h
  Tensor* ic_out_b = nullptr;
  Tensor* sec_w = nullptr;     // |I| x 2 d_h
  Tensor* sec_b = nullptr;
  Tensor* sl_up_w = nullptr;   // 2 d_h x d_h
  GateParams sl_gate;          // over 2 d_h
  GruParams sl_gru;            // input w * 2 d_h + d_SL + d_h, hidden d_h
  Tensor* sl_out_w = nullptr;  // |tags| x d_h
  Tensor* sl_out_b = nullptr;
  int window = 3;

  static HeadParams create(ParameterSet& ps, int turn_dim, int d_h, int d_slot, int num_intents, int num_tags, int window,
                           Rng& rng) {
    if (window < 1 || window % 2 == 0) throw std::invalid_argument("concatenation window must be odd and positive");
    HeadParams p;
    p.window = window;
    p.ic_fc1_w = ps.add("ic.fc1.w", d_h, turn_dim, Init::Xavier, rng);
    p.ic_fc1_b = ps.add("ic.fc1.b", d_h, 1, Init::Zeros, rng);
    p.ic_fc2_w = ps.add("ic.fc2.w", d_h, 3 * d_h, Init::Xavier, rng);
    p.ic_fc2_b = ps.add("ic.fc2.b", d_h, 1, Init::Zeros, rng);
    p.ic_out_w = ps.add("ic.out.w", num_intents, d_h, Init::Xavier, rng);
    p.ic_out_b = ps.add("ic.out.b", num_intents, 1, Init::Zeros, rng);
    p.sec_w = ps.add("sec_ic.w", num_intents, 2 * d_h, Init::Xavier, rng);
    p.sec_b = ps.add("sec_ic.b", num_intents, 1, Init::Zeros, rng);
    p.sl_up_w = ps.add("sl.up.w", 2 * d_h, d_h, Init::Xavier, rng);
    p.sl_gate = GateParams::create(ps, "sl.gate", 2 * d_h, rng);
    p.sl_gru = GruParams::create(ps, "sl.gru", window * 2 * d_h + d_slot + d_h, d_h, rng);
    p.sl_out_w = ps.add("sl.out.w", num_tags, d_h, Init::Xavier, rng);
    p.sl_out_b = ps.add("sl.out.b", num_tags, 1, Init::Zeros, rng);
    return p;
  }
};

// ---- intent ---------------------------------------------------------------

struct IcCache {
  Vec context, h1, joined, fc;
};

struct IcOutput {
  Vec logits;
  Vec fc;
};

/// h1 = tanh(FC1 cf); FC_i = tanh(FC2 [h1; utt]); logits = OUT FC_i.
inline IcOutput ic_forward(const Vec& context, const Vec& utt, const HeadParams& p, IcCache* cache = nullptr) {
  if (context.size() != p.ic_fc1_w->cols() || utt.size() != p.ic_fc2_w->cols() - p.ic_fc2_w->rows())
    throw std::invalid_argument("intent head input width mismatch");
  Vec h1 = (p.ic_fc1_w->value * context + p.ic_fc1_b->value.col(0)).array().tanh().matrix();
  Vec joined(h1.size() + utt.size());
  joined << h1, utt;
  Vec fc = (p.ic_fc2_w->value * joined + p.ic_fc2_b->value.col(0)).array().tanh().matrix();
  IcOutput out{p.ic_out_w->value * fc + p.ic_out_b->value.col(0), fc};
  if (cache) *cache = {context, std::move(h1), std::move(joined), fc};
  return out;
}

/// `d_fc` carries the gradient FC_i receives from the slot head.
inline void ic_backward(const IcCache& c, const Vec& d_logits, const Vec& d_fc_extra, const HeadParams& p, Vec& d_context,
                        Vec& d_utt) {
  p.ic_out_w->grad.noalias() += d_logits * c.fc.transpose();
  p.ic_out_b->grad.col(0) += d_logits;
  Vec d_fc = p.ic_out_w->value.transpose() * d_logits + d_fc_extra;
  Vec d_pre2 = (d_fc.array() * (1.0 - c.fc.array().square())).matrix();
  p.ic_fc2_w->grad.noalias() += d_pre2 * c.joined.transpose();
  p.ic_fc2_b->grad.col(0) += d_pre2;
  Vec d_joined = p.ic_fc2_w->value.transpose() * d_pre2;
  const auto h = c.h1.size();
  d_utt += d_joined.tail(d_joined.size() - h);
  Vec d_pre1 = (d_joined.head(h).array() * (1.0 - c.h1.array().square())).matrix();
  p.ic_fc1_w->grad.noalias() += d_pre1 * c.context.transpose();
  p.ic_fc1_b->grad.col(0) += d_pre1;
  d_context += p.ic_fc1_w->value.transpose() * d_pre1;
}

/// Utterance-only intent logits used by the secondary loss.
inline Vec secondary_ic_forward(const Vec& utt, const HeadParams& p) {
  if (utt.size() != p.sec_w->cols()) throw std::invalid_argument("secondary intent head input width mismatch");
  return p.sec_w->value * utt + p.sec_b->value.col(0);
}

inline void secondary_ic_backward(const Vec& utt, const Vec& d_logits, const HeadParams& p, Vec& d_utt) {
  p.sec_w->grad.noalias() += d_logits * utt.transpose();
  p.sec_b->grad.col(0) += d_logits;
  d_utt += p.sec_w->value.transpose() * d_logits;
}

// ---- slots ----------------------------------------------------------------

struct SlCache {
  Eigen::Index length = 0;
  Mat hidden;  // d_h x n
  Mat up;      // 2 d_h x n
  GateCache gate;
  Mat fused;   // 2 d_h x n  (h_ij)
  GruCache gru;
  Mat states;  // d_h x n
};

/// Number of leading true entries of a trailing-pad mask.
inline Eigen::Index mask_length(const std::vector<bool>& mask) {
  Eigen::Index n = 0;
  while (n < static_cast<Eigen::Index>(mask.size()) && mask[static_cast<std::size_t>(n)]) ++n;
  return n;
}

/// Per token: h_ij = gate(up(H_j), C_j); x_j = [h_{j-r}..h_{j+r}; slot history; FC_i]
/// with zero vectors beyond the utterance edges; left-to-right GRU; linear
/// projection to tag logits. Columns at padded positions stay zero.
inline Mat sl_forward(const Mat& token_states, const Mat& hidden, const Vec& slot_history, const Vec& fc,
                      const std::vector<bool>& token_mask, const HeadParams& p, SlCache* cache = nullptr) {
  const Eigen::Index n = mask_length(token_mask), k = static_cast<Eigen::Index>(token_mask.size());
  const Eigen::Index d2 = token_states.rows();
  const int radius = p.window / 2;
  if (token_states.cols() < n || hidden.cols() < n) throw std::invalid_argument("slot head input shorter than token mask");
  if (p.sl_gru.input_size() != p.window * d2 + slot_history.size() + fc.size())
    throw std::invalid_argument("slot head input width mismatch");
  SlCache local;
  SlCache& c = cache ? *cache : local;
  c.length = n;
  Mat out = Mat::Zero(p.sl_out_w->rows(), k);
  if (n == 0) return out;
  c.hidden = hidden.leftCols(n);
  c.up = p.sl_up_w->value * c.hidden;
  c.fused = fusion_gate_forward(c.up, token_states.leftCols(n), p.sl_gate, &c.gate);
  Mat x = Mat::Zero(p.sl_gru.input_size(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int o = -radius; o <= radius; ++o) {
      Eigen::Index src = j + o;
      if (src >= 0 && src < n) x.col(j).segment((o + radius) * d2, d2) = c.fused.col(src);
    }
    x.col(j).segment(p.window * d2, slot_history.size()) = slot_history;
    x.col(j).tail(fc.size()) = fc;
  }
  c.states = gru_forward(x, p.sl_gru, &c.gru);
  out.leftCols(n) = (p.sl_out_w->value * c.states).colwise() + p.sl_out_b->value.col(0);
  return out;
}

/// `d_logits` covers the first `length` columns. Gradients are added into
/// d_states (2 d_h x n), d_hidden (d_h x n), d_slot_history and d_fc.
inline void sl_backward(const SlCache& c, const Mat& d_logits, const HeadParams& p, Mat& d_states, Mat& d_hidden,
                        Vec& d_slot_history, Vec& d_fc) {
  const Eigen::Index n = c.length;
  if (n == 0) return;
  const Eigen::Index d2 = c.fused.rows();
  const int radius = p.window / 2;
  Mat dl = d_logits.leftCols(n);
  p.sl_out_w->grad.noalias() += dl * c.states.transpose();
  p.sl_out_b->grad.col(0) += dl.rowwise().sum();
  Mat d_x = gru_backward(c.gru, p.sl_out_w->value.transpose() * dl, p.sl_gru);
  Mat d_fused = Mat::Zero(d2, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int o = -radius; o <= radius; ++o) {
      Eigen::Index src = j + o;
      if (src >= 0 && src < n) d_fused.col(src) += d_x.col(j).segment((o + radius) * d2, d2);
    }
    d_slot_history += d_x.col(j).segment(p.window * d2, d_slot_history.size());
    d_fc += d_x.col(j).tail(d_fc.size());
  }
  Mat d_up = Mat::Zero(d2, n);
  Mat d_st = Mat::Zero(d2, n);
  fusion_gate_backward(c.gate, d_fused, p.sl_gate, d_up, d_st);
  d_states.leftCols(n) += d_st;
  p.sl_up_w->grad.noalias() += d_up * c.hidden.transpose();
  d_hidden.leftCols(n).noalias() += p.sl_up_w->value.transpose() * d_up;
}

// ---- losses ---------------------------------------------------------------

/// Cross-entropy of `logits` against `gold`; optionally writes softmax - onehot.
inline double cross_entropy(const Vec& logits, int gold, Vec* d_logits = nullptr) {
  if (gold < 0 || gold >= logits.size()) throw std::out_of_range("gold label id " + std::to_string(gold) + " out of range");
  Vec lp = log_softmax(logits);
  if (d_logits) {
    *d_logits = lp.array().exp().matrix();
    (*d_logits)(gold) -= 1.0;
  }
  return -lp(gold);
}

struct LossParts {
  double ic = 0.0;
  double sl = 0.0;
  double sec_ic = 0.0;
};

inline double combine_losses(const LossParts& parts, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  return parts.ic + alpha * parts.sl + beta * parts.sec_ic;
}

/// Mean token cross-entropy over the first `gold_tags.size()` columns.
inline double slot_loss(const Mat& slot_logits, const std::vector<int>& gold_tags, Mat* d_logits = nullptr) {
  const auto n = static_cast<Eigen::Index>(gold_tags.size());
  if (n == 0) return 0.0;
  if (n > slot_logits.cols()) throw std::invalid_argument("more gold tags than slot logit columns");
  double total = 0.0;
  if (d_logits) *d_logits = Mat::Zero(slot_logits.rows(), slot_logits.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    Vec d;
    total += cross_entropy(slot_logits.col(j), gold_tags[static_cast<std::size_t>(j)], d_logits ? &d : nullptr);
    if (d_logits) d_logits->col(j) = d / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

struct TurnPrediction {
  Vec intent_logits;
  Vec sec_intent_logits;
  Mat slot_logits;  // |tags| x k
  Vec fc;
  Mat attention;    // d_T x (K+1)

  int intent() const {
    Eigen::Index best;
    intent_logits.maxCoeff(&best);
    return static_cast<int>(best);
  }
  std::vector<int> tags(Eigen::Index length) const {
    std::vector<int> out;
    for (Eigen::Index j = 0; j < length; ++j) {
      Eigen::Index best;
      slot_logits.col(j).maxCoeff(&best);
      out.push_back(static_cast<int>(best));
    }
    return out;
  }
};

inline LossParts loss_parts(const TurnPrediction& pred, int gold_intent, const std::vector<int>& gold_tags) {
  return {cross_entropy(pred.intent_logits, gold_intent), slot_loss(pred.slot_logits, gold_tags),
          cross_entropy(pred.sec_intent_logits, gold_intent)};
}

inline double joint_loss(const TurnPrediction& pred, int gold_intent, const std::vector<int>& gold_tags, double alpha,
                         double beta) {
  return combine_losses(loss_parts(pred, gold_intent, gold_tags), alpha, beta);
}

}  // namespace casa
