#pragma once

// Training loop, evaluation metrics, seed averaging, signal ablation and
// finite-difference gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "casa/data.hpp"
#include "casa/errors.hpp"
#include "casa/model.hpp"
#include "casa/tensor.hpp"

namespace casa {

struct Hyperparams {
  int d_h = 56;
  int d_e = 56;
  int d_intent = 16;
  int d_da = 16;
  int d_slot = 16;
  double dropout = 0.3;
  int context_window = 3;  // K
  double lr = 0.01;
  int concat_window = 3;   // w
  double alpha = 0.9;
  double beta = 0.9;
  int patience = 10;
  double min_delta = 0.5;  // accuracy points
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int batch_size = 32;     // turns per update
  int max_epochs = 100;
  int max_tokens = static_cast<int>(kDefaultMaxTokens);
  double unk_prob = 0.1;   // singleton-token replacement rate
  double clip_norm = 1.0;
  HistoryPolicy validation_policy = HistoryPolicy::Predicted;

  void validate() const {
    if (context_window < 0) throw ConfigError("context window K must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (batch_size < 1 || max_epochs < 1) throw ConfigError("batch_size and max_epochs must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("alpha and beta must be non-negative");
    if (concat_window < 1 || concat_window % 2 == 0) throw ConfigError("concat window w must be odd and positive");
  }
};

struct ModelVariant {
  ModelKind kind = ModelKind::Casa;
  SignalFlags flags;
};

inline ModelConfig make_model_config(const Vocabularies& vocab, const ModelVariant& variant, const Hyperparams& hp) {
  ModelConfig c = ModelConfig::for_vocabularies(vocab);
  c.kind = variant.kind;
  c.flags = variant.flags;
  c.d_e = hp.d_e;
  c.d_h = hp.d_h;
  c.d_intent = hp.d_intent;
  c.d_da = hp.d_da;
  c.d_slot = hp.d_slot;
  c.context_window = hp.context_window;
  c.max_tokens = hp.max_tokens;
  c.concat_window = hp.concat_window;
  return c.normalized();
}

// ---- metrics --------------------------------------------------------------

struct MetricsReport {
  double ic_accuracy = 0.0;  // percent
  double sl_f1 = 0.0;        // percent, micro token-level over non-O tags
  std::optional<double> ic_first_turn;
  std::optional<double> ic_followup;
  std::size_t turns = 0;
  std::size_t first_turns = 0;
  std::size_t followup_turns = 0;
};

class MetricsAccumulator {
public:
  void add(bool first_turn, int gold_intent, int predicted_intent, const std::vector<int>& gold_tags,
           const std::vector<int>& predicted_tags) {
    bool correct = gold_intent == predicted_intent;
    ++turns_;
    correct_ += correct;
    if (first_turn) {
      ++first_;
      first_correct_ += correct;
    } else {
      ++followup_;
      followup_correct_ += correct;
    }
    for (std::size_t j = 0; j < gold_tags.size(); ++j) {
      int g = gold_tags[j], p = predicted_tags[j];
      if (g == p) {
        if (g != kOutsideTag) ++tp_;
      } else {
        if (p != kOutsideTag) ++fp_;
        if (g != kOutsideTag) ++fn_;
      }
    }
  }

  MetricsReport report() const {
    MetricsReport r;
    r.turns = turns_;
    r.first_turns = first_;
    r.followup_turns = followup_;
    r.ic_accuracy = turns_ ? 100.0 * static_cast<double>(correct_) / static_cast<double>(turns_) : 0.0;
    std::size_t denom = 2 * tp_ + fp_ + fn_;
    r.sl_f1 = denom ? 100.0 * 2.0 * static_cast<double>(tp_) / static_cast<double>(denom) : 100.0;
    if (first_) r.ic_first_turn = 100.0 * static_cast<double>(first_correct_) / static_cast<double>(first_);
    if (followup_) r.ic_followup = 100.0 * static_cast<double>(followup_correct_) / static_cast<double>(followup_);
    return r;
  }

private:
  std::size_t turns_ = 0, correct_ = 0, first_ = 0, first_correct_ = 0, followup_ = 0, followup_correct_ = 0;
  std::size_t tp_ = 0, fp_ = 0, fn_ = 0;
};

/// Field-wise arithmetic mean. Optional fields are averaged when every report
/// has them.
inline MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  MetricsReport m;
  if (reports.empty()) return m;
  const double n = static_cast<double>(reports.size());
  bool all_first = true, all_followup = true;
  double first = 0.0, followup = 0.0;
  for (const auto& r : reports) {
    m.ic_accuracy += r.ic_accuracy / n;
    m.sl_f1 += r.sl_f1 / n;
    all_first = all_first && r.ic_first_turn.has_value();
    all_followup = all_followup && r.ic_followup.has_value();
    if (r.ic_first_turn) first += *r.ic_first_turn / n;
    if (r.ic_followup) followup += *r.ic_followup / n;
  }
  if (all_first) m.ic_first_turn = first;
  if (all_followup) m.ic_followup = followup;
  m.turns = reports.front().turns;
  m.first_turns = reports.front().first_turns;
  m.followup_turns = reports.front().followup_turns;
  return m;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["ic_accuracy"] = r.ic_accuracy;
  j["sl_token_f1"] = r.sl_f1;
  j["ic_first_turn"] = r.ic_first_turn ? nlohmann::ordered_json(*r.ic_first_turn) : nlohmann::ordered_json(nullptr);
  j["ic_followup"] = r.ic_followup ? nlohmann::ordered_json(*r.ic_followup) : nlohmann::ordered_json(nullptr);
  j["turns"] = r.turns;
  j["first_turns"] = r.first_turns;
  j["followup_turns"] = r.followup_turns;
  return j;
}

struct SeedAveragedReport {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> per_seed;
  MetricsReport mean;
};

inline nlohmann::ordered_json to_json(const SeedAveragedReport& r) {
  nlohmann::ordered_json j;
  j["mean"] = to_json(r.mean);
  j["per_seed"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
    auto s = to_json(r.per_seed[i]);
    s["seed"] = r.seeds[i];
    j["per_seed"].push_back(std::move(s));
  }
  return j;
}

inline void check_vocabulary_match(const Model& model, const Dataset& ds) {
  const auto& c = model.config();
  const auto& v = ds.vocab;
  if (c.vocab_size != v.tokens.size() || c.num_intents != v.intents.size() || c.num_tags != v.tags.size() ||
      c.num_acts != v.acts.size() || c.num_slot_types != v.slot_types.size() || c.tag_slot_type != v.tag_slot_type)
    throw ConfigError("dataset vocabularies do not match the model's");
}

inline MetricsReport evaluate(const Model& model, const Dataset& ds, HistoryPolicy policy) {
  check_vocabulary_match(model, ds);
  MetricsAccumulator acc;
  for (const auto& conv : ds.conversations) {
    auto preds = model.predict(conv, policy);
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
      const Turn& t = conv.turns[i];
      acc.add(i == 0, t.intent, preds[i].intent(), t.slots, preds[i].tags(static_cast<Eigen::Index>(t.tokens.size())));
    }
  }
  return acc.report();
}

// ---- training -------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_ic = 0.0;
  double val_sl_f1 = 0.0;
};

inline nlohmann::ordered_json to_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["val_ic"] = e.val_ic;
  j["val_sl_f1"] = e.val_sl_f1;
  return j;
}

struct TrainResult {
  std::unique_ptr<Model> model;  // restored to the best validation epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_ic = 0.0;
  bool stopped_early = false;
};

/// Replaces training-singleton tokens by UNK with probability `p`.
inline Conversation drop_singletons(const Conversation& conv, const Vocabularies& vocab, double p, Rng& rng) {
  Conversation out = conv;
  if (p <= 0.0) return out;
  std::bernoulli_distribution drop(p);
  for (auto& turn : out.turns)
    for (auto& tok : turn.tokens) {
      auto id = static_cast<std::size_t>(tok.id);
      if (id < vocab.token_frequency.size() && vocab.token_frequency[id] == 1 && drop(rng)) tok.id = kUnkToken;
    }
  return out;
}

/// Mini-batch Adam on the joint loss with teacher-forced history. Early
/// stopping watches validation IC accuracy: patience counts epochs without
/// an improvement of at least `min_delta` points; the returned model holds
/// the parameters of the best validation epoch seen (ties broken by SL F1).
inline TrainResult train(const Dataset& train_set, const Dataset& val_set, const ModelVariant& variant, const Hyperparams& hp,
                         std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  hp.validate();
  if (train_set.conversations.empty()) throw DataError("training set is empty");
  if (!(val_set.vocab == train_set.vocab)) throw ConfigError("validation vocabularies differ from training vocabularies");
  TrainResult result;
  result.model = std::make_unique<Model>(make_model_config(train_set.vocab, variant, hp), seed);
  Model& model = *result.model;
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  Adam opt(hp.lr);

  std::vector<std::size_t> order(train_set.conversations.size());
  std::iota(order.begin(), order.end(), 0);
  std::map<std::string, Mat> best = model.params().snapshot();
  double best_ic = -1.0, best_sl = -1.0, reference_ic = -1.0;
  int since_improvement = 0;

  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_turns = 0;
    for (std::size_t start = 0; start < order.size();) {
      std::size_t end = start, batch_turns = 0;
      while (end < order.size() && batch_turns < static_cast<std::size_t>(hp.batch_size))
        batch_turns += train_set.conversations[order[end++]].turns.size();
      model.params().zero_grad();
      const double scale = 1.0 / static_cast<double>(batch_turns);
      for (std::size_t b = start; b < end; ++b) {
        Conversation conv = drop_singletons(train_set.conversations[order[b]], train_set.vocab, hp.unk_prob, rng);
        epoch_loss += model.accumulate_gradients(conv, hp.alpha, hp.beta, scale, hp.dropout, &rng);
      }
      clip_grad_norm(model.params(), hp.clip_norm);
      opt.step(model.params());
      if (!model.params().all_finite()) throw RuntimeFailure("parameters diverged at epoch " + std::to_string(epoch));
      epoch_turns += batch_turns;
      start = end;
    }
    MetricsReport val = evaluate(model, val_set, hp.validation_policy);
    EpochLog entry{epoch, epoch_loss / static_cast<double>(epoch_turns), val.ic_accuracy, val.sl_f1};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (val.ic_accuracy > best_ic || (val.ic_accuracy == best_ic && val.sl_f1 > best_sl)) {
      best_ic = val.ic_accuracy;
      best_sl = val.sl_f1;
      best = model.params().snapshot();
      result.best_epoch = epoch;
    }
    if (reference_ic < 0.0 || val.ic_accuracy >= reference_ic + hp.min_delta) {
      reference_ic = val.ic_accuracy;
      since_improvement = 0;
    } else if (++since_improvement >= hp.patience) {
      result.stopped_early = epoch < hp.max_epochs;
      break;
    }
  }
  model.params().restore(best);
  result.best_val_ic = best_ic;
  return result;
}

/// Deterministically moves `fraction` of the conversations into a validation split.
inline std::pair<Dataset, Dataset> split_validation(const Dataset& ds, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(ds.conversations.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_val = static_cast<std::size_t>(std::round(fraction * static_cast<double>(idx.size())));
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  Dataset train, val;
  train.vocab = val.vocab = ds.vocab;
  train.split = Split::Train;
  val.split = Split::Validation;
  for (std::size_t i = 0; i < idx.size(); ++i)
    (i < n_val ? val : train).conversations.push_back(ds.conversations[idx[i]]);
  return {std::move(train), std::move(val)};
}

/// Contiguous split of a dataset's conversations (same vocabularies).
inline Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end, Split split) {
  Dataset out;
  out.vocab = ds.vocab;
  out.split = split;
  end = std::min(end, ds.conversations.size());
  for (std::size_t i = begin; i < end; ++i) out.conversations.push_back(ds.conversations[i]);
  return out;
}

struct ExperimentResult {
  SeedAveragedReport report;
  std::vector<TrainResult> runs;
};

/// Trains one model per seed and evaluates each on `test_set`.
inline ExperimentResult run_seeds(const Dataset& train_set, const Dataset& val_set, const Dataset& test_set,
                                  const ModelVariant& variant, const Hyperparams& hp, HistoryPolicy policy,
                                  const std::function<void(std::uint64_t, const EpochLog&)>& on_epoch = {}) {
  ExperimentResult out;
  for (auto seed : hp.seeds) {
    auto run = train(train_set, val_set, variant, hp, seed, [&](const EpochLog& e) {
      if (on_epoch) on_epoch(seed, e);
    });
    out.report.seeds.push_back(seed);
    out.report.per_seed.push_back(evaluate(*run.model, test_set, policy));
    out.runs.push_back(std::move(run));
  }
  out.report.mean = average_reports(out.report.per_seed);
  return out;
}

// ---- ablation -------------------------------------------------------------

struct AblationConfig {
  std::string name;
  SignalFlags flags;
};

/// Signal configurations I..V: none; utterances; slots+utterances+acts;
/// intents+slots+utterances; everything.
inline std::vector<AblationConfig> default_ablation_configs() {
  return {
      {"I", {false, false, false, false}},
      {"II", {false, false, true, false}},
      {"III", {false, true, true, true}},
      {"IV", {true, true, true, false}},
      {"V", {true, true, true, true}},
  };
}

struct AblationRow {
  AblationConfig config;
  SeedAveragedReport report;
};

inline std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& val_set, const Dataset& test_set,
                                             const std::vector<AblationConfig>& configs, const Hyperparams& hp,
                                             HistoryPolicy policy) {
  if (configs.empty()) throw ConfigError("ablation needs at least one configuration");
  std::vector<AblationRow> rows;
  for (const auto& cfg : configs) {
    auto res = run_seeds(train_set, val_set, test_set, {ModelKind::Casa, cfg.flags}, hp, policy);
    rows.push_back({cfg, std::move(res.report)});
  }
  return rows;
}

inline nlohmann::ordered_json to_json(const std::vector<AblationRow>& rows) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["config"] = r.config.name;
    j["intent_hist"] = r.config.flags.intent_hist;
    j["slot_hist"] = r.config.flags.slot_hist;
    j["utt_hist"] = r.config.flags.utt_hist;
    j["da_hist"] = r.config.flags.da_hist;
    j["report"] = to_json(r.report);
    arr.push_back(std::move(j));
  }
  return arr;
}

// ---- gradient checking ----------------------------------------------------

struct GradientCheckReport {
  std::map<std::string, double> relative_error;
  double max_relative_error = 0.0;
  std::string worst_tensor;
  bool finite = true;
};

/// Compares analytic gradients against central differences, tensor by
/// tensor. Relative error of a tensor is |g_a - g_n| / max(|g_a|, |g_n|) in
/// the L2 norm; tensors whose gradients both vanish score zero.
inline GradientCheckReport finite_difference_check(ParameterSet& params, const std::function<double()>& loss,
                                                   const std::function<void()>& fill_gradients, double step = 1e-4) {
  GradientCheckReport report;
  params.zero_grad();
  fill_gradients();
  for (auto& [name, t] : params.tensors()) {
    Mat numeric(t.rows(), t.cols());
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      double orig = t.value.data()[i];
      t.value.data()[i] = orig + step;
      double up = loss();
      t.value.data()[i] = orig - step;
      double down = loss();
      t.value.data()[i] = orig;
      numeric.data()[i] = (up - down) / (2.0 * step);
    }
    if (!numeric.allFinite() || !t.grad.allFinite()) report.finite = false;
    double scale = std::max(t.grad.norm(), numeric.norm());
    double err = scale < 1e-10 ? 0.0 : (t.grad - numeric).norm() / scale;
    report.relative_error[name] = err;
    if (err >= report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_tensor = name;
    }
  }
  if (!report.finite) report.max_relative_error = std::numeric_limits<double>::infinity();
  return report;
}

struct ToyDims {
  int d_h = 4;
  int d_e = 4;
  int d_signal = 3;  // d_I = d_DA = d_SL
  int context_window = 2;
  int max_tokens = 5;
  int num_intents = 3;
  int num_slot_types = 4;
  int vocab_size = 9;
  int num_acts = 3;
};

/// A four-turn conversation over toy vocabularies: lengths 5, 3, 4, 2 so
/// that windows include pads, full windows and a non-empty slot history.
inline Dataset toy_dataset(const ToyDims& dims) {
  std::vector<RawConversation> raw(1);
  raw[0].id = "toy";
  const std::vector<std::size_t> lengths = {5, 3, 4, 2};
  for (std::size_t t = 0; t < lengths.size(); ++t) {
    RawTurn rt;
    for (std::size_t j = 0; j < lengths[t]; ++j) {
      rt.tokens.push_back("w" + std::to_string((t * 3 + j) % static_cast<std::size_t>(dims.vocab_size - 2)));
      rt.slots.push_back(kOutsideSymbol);
    }
    // one B-/I- span per turn, cycling through slot types
    std::string type = "s" + std::to_string(t % static_cast<std::size_t>(dims.num_slot_types));
    rt.slots[0] = "B-" + type;
    if (lengths[t] > 2) rt.slots[1] = "I-" + type;
    rt.intent = "i" + std::to_string(t % static_cast<std::size_t>(dims.num_intents));
    rt.dialog_act = "a" + std::to_string(t % static_cast<std::size_t>(dims.num_acts));
    for (const auto& tok : rt.tokens) rt.text += (rt.text.empty() ? "" : " ") + tok;
    raw[0].turns.push_back(std::move(rt));
  }
  Vocabularies v = build_vocabularies(raw);
  for (int s = 0; s < dims.num_slot_types; ++s) v.add_tag("B-s" + std::to_string(s));
  return encode_dataset(raw, v, Split::Train, static_cast<std::size_t>(dims.max_tokens));
}

/// Full-model gradient check at toy sizes. `corrupt` perturbs the analytic
/// gradient of one tensor to confirm the check can fail.
inline GradientCheckReport gradient_check(ModelKind kind, const ToyDims& dims = {}, std::uint64_t seed = 7,
                                          double alpha = 0.9, double beta = 0.9, bool corrupt = false) {
  Dataset ds = toy_dataset(dims);
  ModelConfig cfg = ModelConfig::for_vocabularies(ds.vocab);
  cfg.kind = kind;
  cfg.d_h = dims.d_h;
  cfg.d_e = dims.d_e;
  cfg.d_intent = cfg.d_da = cfg.d_slot = dims.d_signal;
  cfg.context_window = dims.context_window;
  cfg.max_tokens = dims.max_tokens;
  Model model(cfg, seed);
  // Larger-than-default init so every nonlinearity is exercised away from zero.
  Rng rng(seed + 1);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (auto& [_, t] : model.params().tensors())
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] += noise(rng);
  const Conversation& conv = ds.conversations.front();
  return finite_difference_check(
      model.params(), [&] { return model.loss(conv, alpha, beta); },
      [&] {
        model.accumulate_gradients(conv, alpha, beta, 1.0);
        if (corrupt) model.params().at("encoder.projection").grad *= 1.1;
      });
}

}  // namespace casa
