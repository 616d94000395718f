#pragma once

// Per-turn contextual signals and their temporal fusion. A turn vector is
// [h(Utt); h(I); h(DA)]; the K+1 turn vectors of a window, each shifted by a
// learned turn-position embedding, are reduced by per-dimension
// source2token attention (or, for the recurrent baseline, by a GRU).

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "casa/encoder.hpp"
#include "casa/gru.hpp"
#include "casa/tensor.hpp"

namespace casa {

struct SignalParams {
  Tensor* intent_embedding = nullptr;  // |I| x d_I
  Tensor* da_embedding = nullptr;      // |DA| x d_DA
  Tensor* slot_embedding = nullptr;    // |S| x d_SL
  Tensor* turn_position = nullptr;     // d_T x (K+1)  (p_c), column 0 is the oldest slot
  S2tParams temporal;                  // attention fusion
  GruParams temporal_gru;              // recurrent fusion baseline

  bool recurrent() const { return temporal_gru.w_input != nullptr; }
};

namespace detail {
inline Vec embedding_row(const Tensor& table, int id, const char* what) {
  if (id < 0 || id >= table.rows()) throw std::out_of_range(std::string(what) + " id " + std::to_string(id) + " out of range");
  return table.value.row(id).transpose();
}
}  // namespace detail

inline Vec embed_intent(int intent_id, const SignalParams& p) {
  return detail::embedding_row(*p.intent_embedding, intent_id, "intent");
}

inline Vec embed_da(int da_id, const SignalParams& p) { return detail::embedding_row(*p.da_embedding, da_id, "dialog act"); }

/// Mean of the embedding rows of the given distinct slot types; zero when empty.
inline Vec embed_slot_history(const std::vector<int>& slot_types, const SignalParams& p) {
  Vec out = Vec::Zero(p.slot_embedding->cols());
  for (int s : slot_types) out += detail::embedding_row(*p.slot_embedding, s, "slot type");
  if (!slot_types.empty()) out /= static_cast<double>(slot_types.size());
  return out;
}

inline void embed_slot_history_backward(const std::vector<int>& slot_types, const Vec& d_out, const SignalParams& p) {
  if (slot_types.empty()) return;
  const double s = 1.0 / static_cast<double>(slot_types.size());
  for (int t : slot_types) p.slot_embedding->grad.row(t) += s * d_out.transpose();
}

/// Where each signal lives inside a turn vector.
struct SignalBlock {
  std::string name;
  Eigen::Index begin = 0;
  Eigen::Index size = 0;
};

struct TurnLayout {
  Eigen::Index utterance = 0, intent = 0, act = 0;

  Eigen::Index width() const { return utterance + intent + act; }
  std::vector<SignalBlock> blocks() const {
    return {{"utt", 0, utterance}, {"intent", utterance, intent}, {"da", utterance + intent, act}};
  }
};

inline Vec build_turn_vector(const Vec& utt, const Vec& intent, const Vec& da, const TurnLayout& layout) {
  if (utt.size() != layout.utterance || intent.size() != layout.intent || da.size() != layout.act)
    throw std::invalid_argument("turn vector component width mismatch");
  Vec t(layout.width());
  t << utt, intent, da;
  return t;
}

struct FusionResult {
  Vec context;    // d_T
  Mat attention;  // d_T x (K+1); zero columns at pads (all ones for the recurrent fusion)
};

struct FusionCache {
  std::vector<Eigen::Index> slots;  // non-pad window slots, oldest first
  S2tCache s2t;
  GruCache gru;
};

namespace detail {
inline Mat shifted_turns(const Mat& turns, const std::vector<bool>& pad_mask, const Tensor& turn_position,
                         std::vector<Eigen::Index>& slots) {
  if (static_cast<Eigen::Index>(pad_mask.size()) != turns.cols() || turns.cols() != turn_position.cols())
    throw std::invalid_argument("context window width mismatch");
  if (pad_mask.empty() || pad_mask.back()) throw std::invalid_argument("the current turn of a context window cannot be a pad");
  slots.clear();
  for (Eigen::Index t = 0; t < turns.cols(); ++t)
    if (!pad_mask[static_cast<std::size_t>(t)]) slots.push_back(t);
  Mat x(turns.rows(), static_cast<Eigen::Index>(slots.size()));
  for (std::size_t q = 0; q < slots.size(); ++q)
    x.col(static_cast<Eigen::Index>(q)) = turns.col(slots[q]) + turn_position.value.col(slots[q]);
  return x;
}
}  // namespace detail

/// cf = sum_t P(T'_t) * T'_t with T'_t = T_t + p_c[t] and P a per-dimension
/// softmax over the non-pad slots.
inline FusionResult fuse_context(const Mat& turns, const std::vector<bool>& pad_mask, const SignalParams& p,
                                 FusionCache* cache = nullptr) {
  FusionCache local;
  FusionCache& c = cache ? *cache : local;
  Mat x = detail::shifted_turns(turns, pad_mask, *p.turn_position, c.slots);
  FusionResult r;
  r.attention = Mat::Zero(turns.rows(), turns.cols());
  if (p.recurrent()) {
    Mat states = gru_forward(x, p.temporal_gru, &c.gru);
    r.context = states.col(states.cols() - 1);
    for (auto s : c.slots) r.attention.col(s).setOnes();
    return r;
  }
  r.context = s2t_forward(x, p.temporal, &c.s2t);
  for (std::size_t q = 0; q < c.slots.size(); ++q) r.attention.col(c.slots[q]) = c.s2t.weights.col(static_cast<Eigen::Index>(q));
  return r;
}

/// Adds d(loss)/d(turns) into `d_turns` (d_T x (K+1)).
inline void fuse_context_backward(const FusionCache& c, const Vec& d_context, const SignalParams& p, Mat& d_turns) {
  const auto n = static_cast<Eigen::Index>(c.slots.size());
  Mat d_x = Mat::Zero(d_context.size(), n);
  if (p.recurrent()) {
    Mat d_states = Mat::Zero(p.temporal_gru.hidden_size(), n);
    d_states.col(n - 1) = d_context;
    d_x = gru_backward(c.gru, d_states, p.temporal_gru);
  } else {
    s2t_backward(c.s2t, d_context, p.temporal, d_x);
  }
  for (Eigen::Index q = 0; q < n; ++q) {
    auto slot = c.slots[static_cast<std::size_t>(q)];
    d_turns.col(slot) += d_x.col(q);
    p.turn_position->grad.col(slot) += d_x.col(q);
  }
}

/// Averages the attention rows of each signal block: result[b][t] is the mean
/// weight signal b receives at window slot t.
inline std::vector<std::vector<double>> summarize_attention(const Mat& attention, const std::vector<SignalBlock>& layout) {
  Eigen::Index expect = 0;
  for (const auto& b : layout) {
    if (b.begin != expect || b.size <= 0) throw std::invalid_argument("signal layout does not partition the turn vector");
    expect += b.size;
  }
  if (expect != attention.rows()) throw std::invalid_argument("signal layout does not partition the turn vector");
  std::vector<std::vector<double>> out;
  for (const auto& b : layout) {
    Vec mean = attention.middleRows(b.begin, b.size).colwise().mean().transpose();
    out.emplace_back(mean.data(), mean.data() + mean.size());
  }
  return out;
}

}  // namespace casa
