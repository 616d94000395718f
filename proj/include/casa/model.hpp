#pragma once

// Full contextual NLU model over one conversation. Each utterance is encoded
// once; every turn then fuses its K+1 window of turn vectors and runs the
// intent and slot heads. Three variants share this code:
//
//   casa  per-dimension attention fusion over the window
//   nc    no context: window of one, all history signals off
//   cgru  a GRU over the window replaces the attention fusion

#include <cmath>
#include <cstdint>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "casa/context_fusion.hpp"
#include "casa/data.hpp"
#include "casa/encoder.hpp"
#include "casa/heads.hpp"
#include "casa/tensor.hpp"

namespace casa {

enum class ModelKind { Casa, Nc, Cgru };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Casa: return "casa";
    case ModelKind::Nc: return "nc";
    case ModelKind::Cgru: return "cgru";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "casa") return ModelKind::Casa;
  if (s == "nc") return ModelKind::Nc;
  if (s == "cgru") return ModelKind::Cgru;
  throw ConfigError("unknown model '" + s + "' (expected casa, nc or cgru)");
}

/// Which history signals reach the current turn.
struct SignalFlags {
  bool intent_hist = true;
  bool slot_hist = true;
  bool utt_hist = true;
  bool da_hist = true;

  bool any_turn_signal() const { return intent_hist || utt_hist || da_hist; }
  bool operator==(const SignalFlags&) const = default;
};

enum class HistoryPolicy { Gold, Predicted };

struct ModelConfig {
  ModelKind kind = ModelKind::Casa;
  SignalFlags flags;
  int d_e = 56;
  int d_h = 56;
  int d_intent = 16;
  int d_da = 16;
  int d_slot = 16;
  int context_window = 3;  // K
  int max_tokens = static_cast<int>(kDefaultMaxTokens);
  int concat_window = 3;   // w

  int vocab_size = 2;
  int num_intents = 1;
  int num_tags = 1;
  int num_slot_types = 0;
  int num_acts = 1;
  std::vector<int> tag_slot_type{-1};

  int turn_dim() const { return 2 * d_h + d_intent + d_da; }
  TurnLayout layout() const { return {2 * d_h, d_intent, d_da}; }

  /// Applies the variant's constraints (nc: K = 0, all history off).
  ModelConfig normalized() const {
    ModelConfig c = *this;
    if (c.kind == ModelKind::Nc) {
      c.context_window = 0;
      c.flags = {false, false, false, false};
    }
    return c;
  }

  static ModelConfig for_vocabularies(const Vocabularies& v) {
    ModelConfig c;
    c.set_vocabularies(v);
    return c;
  }
  void set_vocabularies(const Vocabularies& v) {
    vocab_size = v.tokens.size();
    num_intents = v.intents.size();
    num_tags = v.tags.size();
    num_slot_types = v.slot_types.size();
    num_acts = v.acts.size();
    tag_slot_type = v.tag_slot_type;
  }
};

/// Resolved inputs of one turn: which conversation turn fills each window
/// slot and which signals it carries.
struct TurnContext {
  std::vector<int> source;  // turn index per slot, -1 when padded or masked
  std::vector<int> intents;
  std::vector<int> acts;
  std::vector<bool> utterance;
  std::vector<int> slot_history;

  std::vector<bool> pad_mask() const {
    std::vector<bool> m;
    for (int s : source) m.push_back(s < 0);
    return m;
  }
  int current() const { return source.back(); }
};

struct TurnCache {
  TurnContext context;
  Mat turns;
  FusionCache fusion;
  IcCache ic;
  SlCache sl;
  Vec slot_history;
};

/// Encodings of every utterance of one conversation.
struct ConversationEncoding {
  std::vector<EncoderCache> caches;
  std::vector<Vec> sentences;
};

class Model {
public:
  Model(const ModelConfig& config, std::uint64_t seed) : config_(config.normalized()), params_(std::make_unique<ParameterSet>()) {
    Rng rng(seed);
    const auto& c = config_;
    if (c.context_window < 0) throw ConfigError("context window must be non-negative");
    encoder_ = EncoderParams::create(*params_, c.vocab_size, c.d_e, c.d_h, c.max_tokens, rng);
    signals_.intent_embedding = params_->add("context.intent_embedding", c.num_intents, c.d_intent, Init::Normal, rng, 0.1);
    signals_.da_embedding = params_->add("context.da_embedding", c.num_acts, c.d_da, Init::Normal, rng, 0.1);
    signals_.slot_embedding = params_->add("context.slot_embedding", c.num_slot_types, c.d_slot, Init::Normal, rng, 0.1);
    signals_.turn_position = params_->add("context.turn_position", c.turn_dim(), c.context_window + 1, Init::Normal, rng, 0.1);
    if (c.kind == ModelKind::Cgru)
      signals_.temporal_gru = GruParams::create(*params_, "context.gru", c.turn_dim(), c.turn_dim(), rng);
    else
      signals_.temporal = S2tParams::create(*params_, "context.s2t", c.turn_dim(), rng);
    heads_ = HeadParams::create(*params_, c.turn_dim(), c.d_h, c.d_slot, c.num_intents, c.num_tags, c.concat_window, rng);
  }

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return *params_; }
  const ParameterSet& params() const { return *params_; }
  const EncoderParams& encoder() const { return encoder_; }
  const SignalParams& signals() const { return signals_; }
  const HeadParams& heads() const { return heads_; }

  /// Window for turn `i` given per-turn intent and tag histories (gold or
  /// predicted; only entries before `i` are read).
  TurnContext context_for(const Conversation& conv, int i, const std::vector<int>& intent_history,
                          const std::vector<std::vector<int>>& tag_history) const {
    const auto& f = config_.flags;
    const int K = config_.context_window;
    TurnContext ctx;
    for (int t = i - K; t <= i; ++t) {
      if (t < 0 || (t < i && !f.any_turn_signal())) {
        ctx.source.push_back(-1);
        ctx.intents.push_back(kDummyIntent);
        ctx.acts.push_back(kDummyAct);
        ctx.utterance.push_back(false);
      } else if (t == i) {
        ctx.source.push_back(t);
        ctx.intents.push_back(kDummyIntent);
        ctx.acts.push_back(kDummyAct);
        ctx.utterance.push_back(true);
      } else {
        ctx.source.push_back(t);
        ctx.intents.push_back(f.intent_hist ? intent_history[static_cast<std::size_t>(t)] : kDummyIntent);
        ctx.acts.push_back(f.da_hist ? conv.turns[static_cast<std::size_t>(t)].dialog_act : kDummyAct);
        ctx.utterance.push_back(f.utt_hist);
      }
    }
    if (f.slot_hist) {
      std::set<int> seen;
      for (int t = 0; t < i; ++t)
        for (int tag : tag_history[static_cast<std::size_t>(t)]) {
          int type = config_.tag_slot_type.at(static_cast<std::size_t>(tag));
          if (type >= 0) seen.insert(type);
        }
      ctx.slot_history.assign(seen.begin(), seen.end());
    }
    return ctx;
  }

  ConversationEncoding encode(const Conversation& conv, double dropout = 0.0, Rng* rng = nullptr) const {
    ConversationEncoding e;
    e.caches.resize(conv.turns.size());
    for (std::size_t t = 0; t < conv.turns.size(); ++t)
      e.sentences.push_back(encode_utterance(conv.turns[t].token_ids(), encoder_, &e.caches[t], dropout, rng).sentence_vector);
    return e;
  }

  TurnPrediction forward_turn(const ConversationEncoding& enc, const TurnContext& ctx, TurnCache* cache = nullptr) const {
    TurnCache local;
    TurnCache& c = cache ? *cache : local;
    const auto layout = config_.layout();
    const auto slots = static_cast<Eigen::Index>(ctx.source.size());
    c.context = ctx;
    c.turns = Mat::Zero(layout.width(), slots);
    for (Eigen::Index s = 0; s < slots; ++s) {
      int src = ctx.source[static_cast<std::size_t>(s)];
      if (src < 0) continue;
      Vec utt = ctx.utterance[static_cast<std::size_t>(s)] ? enc.sentences[static_cast<std::size_t>(src)] : Vec::Zero(layout.utterance);
      c.turns.col(s) = build_turn_vector(utt, embed_intent(ctx.intents[static_cast<std::size_t>(s)], signals_),
                                         embed_da(ctx.acts[static_cast<std::size_t>(s)], signals_), layout);
    }
    TurnPrediction pred;
    FusionResult fused = fuse_context(c.turns, ctx.pad_mask(), signals_, &c.fusion);
    pred.attention = std::move(fused.attention);
    const auto cur = static_cast<std::size_t>(ctx.current());
    const Vec& utt = enc.sentences[cur];
    IcOutput ic = ic_forward(fused.context, utt, heads_, &c.ic);
    pred.intent_logits = std::move(ic.logits);
    pred.fc = ic.fc;
    pred.sec_intent_logits = secondary_ic_forward(utt, heads_);
    c.slot_history = embed_slot_history(ctx.slot_history, signals_);
    const EncoderCache& ec = enc.caches[cur];
    std::vector<bool> mask(static_cast<std::size_t>(ec.states.cols()), true);
    pred.slot_logits = sl_forward(ec.states, ec.hidden, c.slot_history, ic.fc, mask, heads_, &c.sl);
    return pred;
  }

  /// Forward + backward over one conversation with gold history. Parameter
  /// gradients of `scale * sum_turns L` are accumulated. Returns sum_turns L.
  double accumulate_gradients(const Conversation& conv, double alpha, double beta, double scale, double dropout = 0.0,
                              Rng* rng = nullptr) {
    const std::size_t n_turns = conv.turns.size();
    ConversationEncoding enc = encode(conv, dropout, rng);
    std::vector<int> intents;
    std::vector<std::vector<int>> tags;
    for (const auto& t : conv.turns) {
      intents.push_back(t.intent);
      tags.push_back(t.slots);
    }
    const Eigen::Index d_h = config_.d_h;
    const auto layout = config_.layout();
    std::vector<Vec> d_sent(n_turns, Vec::Zero(2 * d_h));
    std::vector<Mat> d_states(n_turns), d_hidden(n_turns);
    for (std::size_t t = 0; t < n_turns; ++t) {
      d_states[t] = Mat::Zero(2 * d_h, enc.caches[t].states.cols());
      d_hidden[t] = Mat::Zero(d_h, enc.caches[t].states.cols());
    }

    double total = 0.0;
    TurnCache c;
    for (std::size_t i = 0; i < n_turns; ++i) {
      const Turn& gold = conv.turns[i];
      TurnContext ctx = context_for(conv, static_cast<int>(i), intents, tags);
      TurnPrediction pred = forward_turn(enc, ctx, &c);

      Vec d_ic, d_sec;
      Mat d_sl;
      LossParts parts{cross_entropy(pred.intent_logits, gold.intent, &d_ic), slot_loss(pred.slot_logits, gold.slots, &d_sl),
                      cross_entropy(pred.sec_intent_logits, gold.intent, &d_sec)};
      double loss = combine_losses(parts, alpha, beta);
      if (!std::isfinite(loss)) throw RuntimeFailure("non-finite loss in conversation '" + conv.id + "'");
      total += loss;
      d_ic *= scale;
      d_sec *= scale * beta;
      d_sl *= scale * alpha;

      Vec d_slot_hist = Vec::Zero(config_.d_slot);
      Vec d_fc = Vec::Zero(d_h);
      sl_backward(c.sl, d_sl, heads_, d_states[i], d_hidden[i], d_slot_hist, d_fc);
      embed_slot_history_backward(ctx.slot_history, d_slot_hist, signals_);
      Vec d_context = Vec::Zero(layout.width());
      ic_backward(c.ic, d_ic, d_fc, heads_, d_context, d_sent[i]);
      secondary_ic_backward(enc.sentences[i], d_sec, heads_, d_sent[i]);

      Mat d_turns = Mat::Zero(layout.width(), c.turns.cols());
      fuse_context_backward(c.fusion, d_context, signals_, d_turns);
      for (std::size_t s = 0; s < ctx.source.size(); ++s) {
        int src = ctx.source[s];
        if (src < 0) continue;
        const auto col = d_turns.col(static_cast<Eigen::Index>(s));
        if (ctx.utterance[s]) d_sent[static_cast<std::size_t>(src)] += col.head(layout.utterance);
        signals_.intent_embedding->grad.row(ctx.intents[s]) += col.segment(layout.utterance, layout.intent).transpose();
        signals_.da_embedding->grad.row(ctx.acts[s]) += col.tail(layout.act).transpose();
      }
    }
    for (std::size_t t = 0; t < n_turns; ++t) encoder_backward(enc.caches[t], d_sent[t], d_states[t], d_hidden[t], encoder_);
    return total;
  }

  /// Summed joint loss with gold history and no dropout.
  double loss(const Conversation& conv, double alpha, double beta) const {
    ConversationEncoding enc = encode(conv);
    std::vector<int> intents;
    std::vector<std::vector<int>> tags;
    for (const auto& t : conv.turns) {
      intents.push_back(t.intent);
      tags.push_back(t.slots);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
      TurnPrediction pred = forward_turn(enc, context_for(conv, static_cast<int>(i), intents, tags));
      total += joint_loss(pred, conv.turns[i].intent, conv.turns[i].slots, alpha, beta);
    }
    return total;
  }

  /// Turn-by-turn inference. With the predicted policy, earlier turns'
  /// intents and slot tags come from the model's own argmax outputs.
  std::vector<TurnPrediction> predict(const Conversation& conv, HistoryPolicy policy) const {
    ConversationEncoding enc = encode(conv);
    std::vector<int> intents(conv.turns.size(), kDummyIntent);
    std::vector<std::vector<int>> tags(conv.turns.size());
    if (policy == HistoryPolicy::Gold)
      for (std::size_t t = 0; t < conv.turns.size(); ++t) {
        intents[t] = conv.turns[t].intent;
        tags[t] = conv.turns[t].slots;
      }
    std::vector<TurnPrediction> out;
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
      out.push_back(forward_turn(enc, context_for(conv, static_cast<int>(i), intents, tags)));
      if (policy == HistoryPolicy::Predicted) {
        intents[i] = out.back().intent();
        tags[i] = out.back().tags(static_cast<Eigen::Index>(conv.turns[i].tokens.size()));
      }
    }
    return out;
  }

private:
  ModelConfig config_;
  std::unique_ptr<ParameterSet> params_;
  EncoderParams encoder_;
  SignalParams signals_;
  HeadParams heads_;
};

}  // namespace casa
