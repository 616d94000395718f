#pragma once

// Dialogue data schema, corpus readers/writers, vocabularies and context
// windowing.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "casa/errors.hpp"

namespace casa {

inline constexpr int kPadToken = 0;
inline constexpr int kUnkToken = 1;
inline constexpr int kDummyIntent = 0;
inline constexpr int kDummyAct = 0;
inline constexpr int kOutsideTag = 0;
inline constexpr std::size_t kDefaultMaxTokens = 32;

inline const std::string kPadSymbol = "<pad>";
inline const std::string kUnkSymbol = "<unk>";
inline const std::string kDummyIntentSymbol = "<dummy_intent>";
inline const std::string kDummyActSymbol = "<dummy_da>";
inline const std::string kOutsideSymbol = "O";

namespace detail {
inline bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }
}  // namespace detail

/// Lowercases, splits on whitespace and detaches punctuation. A punctuation
/// character stays attached only when both neighbours are word characters
/// ("i'd", "9:30", "a@b.com"); non-ASCII bytes count as word characters.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      bool inner = i > 0 && i + 1 < text.size() && detail::is_word_byte(text[i - 1]) &&
                   detail::is_word_byte(text[i + 1]) && !cur.empty();
      if (inner) {
        cur.push_back(static_cast<char>(c));
      } else {
        flush();
        out.emplace_back(1, static_cast<char>(c));
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

/// Label <-> id bijection.
class Vocab {
public:
  Vocab() = default;
  explicit Vocab(std::initializer_list<std::string> specials) {
    for (const auto& s : specials) add(s);
  }

  int add(const std::string& label) {
    auto [it, inserted] = index_.try_emplace(label, static_cast<int>(labels_.size()));
    if (inserted) labels_.push_back(label);
    return it->second;
  }
  std::optional<int> find(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& label(int id) const { return labels_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }

  bool operator==(const Vocab& o) const { return labels_ == o.labels_; }

private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

/// Returns the slot type of a BIO tag ("B-time" -> "time"), or nullopt for "O".
inline std::optional<std::string> slot_type_of(const std::string& tag) {
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') return tag.substr(2);
  return std::nullopt;
}

/// True when no I-X tag appears without a preceding B-X or I-X.
inline bool is_valid_bio(const std::vector<std::string>& tags) {
  std::optional<std::string> open;
  for (const auto& t : tags) {
    if (t == kOutsideSymbol) {
      open.reset();
      continue;
    }
    auto type = slot_type_of(t);
    if (!type) return false;
    if (t[0] == 'I' && open != type) return false;
    open = type;
  }
  return true;
}

struct Vocabularies {
  Vocab tokens{kPadSymbol, kUnkSymbol};
  Vocab intents{kDummyIntentSymbol};
  Vocab tags{kOutsideSymbol};
  Vocab slot_types;
  Vocab acts{kDummyActSymbol};
  /// Slot type id per tag id; -1 for "O".
  std::vector<int> tag_slot_type{-1};
  /// Training-corpus frequency per token id (specials have 0).
  std::vector<std::size_t> token_frequency{0, 0};

  int add_tag(const std::string& tag) {
    int id = tags.add(tag);
    if (id == static_cast<int>(tag_slot_type.size())) {
      auto type = slot_type_of(tag);
      tag_slot_type.push_back(type ? slot_types.add(*type) : -1);
    }
    return id;
  }
  int add_token(const std::string& surface) {
    int id = tokens.add(surface);
    if (id == static_cast<int>(token_frequency.size())) token_frequency.push_back(0);
    ++token_frequency[static_cast<std::size_t>(id)];
    return id;
  }

  bool operator==(const Vocabularies& o) const {
    return tokens == o.tokens && intents == o.intents && tags == o.tags &&
           slot_types == o.slot_types && acts == o.acts;
  }
};

struct Token {
  std::string surface;
  int id = kPadToken;
};

struct Turn {
  std::string text;
  std::vector<Token> tokens;
  int intent = kDummyIntent;
  std::vector<int> slots;
  int dialog_act = kDummyAct;

  std::vector<int> token_ids() const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(t.id);
    return ids;
  }
};

struct Conversation {
  std::string id;
  std::vector<Turn> turns;
};

enum class Split { Train, Validation, Test };

struct Dataset {
  std::vector<Conversation> conversations;
  Vocabularies vocab;
  Split split = Split::Train;

  std::size_t turn_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.turns.size();
    return n;
  }
};

// String-level form used for file I/O.

struct RawTurn {
  std::string text;
  std::vector<std::string> tokens;
  std::string intent;
  std::vector<std::string> slots;
  std::string dialog_act;
  bool operator==(const RawTurn&) const = default;
};

struct RawConversation {
  std::string id;
  std::vector<RawTurn> turns;
  bool operator==(const RawConversation&) const = default;
};

inline Vocabularies build_vocabularies(const std::vector<RawConversation>& corpus) {
  Vocabularies v;
  for (const auto& conv : corpus)
    for (const auto& t : conv.turns) {
      for (const auto& tok : t.tokens) v.add_token(tok);
      v.intents.add(t.intent);
      v.acts.add(t.dialog_act);
      for (const auto& s : t.slots) v.add_tag(s);
    }
  return v;
}

/// Encodes a raw corpus against fixed vocabularies. Unknown tokens map to
/// UNK; unknown labels are a schema error. Utterances longer than
/// `max_tokens` are truncated with a warning.
inline Dataset encode_dataset(const std::vector<RawConversation>& corpus, const Vocabularies& vocab,
                              Split split, std::size_t max_tokens = kDefaultMaxTokens) {
  Dataset ds;
  ds.vocab = vocab;
  ds.split = split;
  ds.conversations.reserve(corpus.size());
  for (const auto& rc : corpus) {
    Conversation conv;
    conv.id = rc.id;
    for (std::size_t ti = 0; ti < rc.turns.size(); ++ti) {
      const RawTurn& rt = rc.turns[ti];
      auto where = [&](const std::string& field) {
        return "conversation '" + rc.id + "' turn " + std::to_string(ti) + " field '" + field + "'";
      };
      if (rt.tokens.size() != rt.slots.size())
        throw SchemaError(where("slots") + ": " + std::to_string(rt.slots.size()) + " tags for " +
                          std::to_string(rt.tokens.size()) + " tokens");
      if (!is_valid_bio(rt.slots)) throw SchemaError(where("slots") + ": invalid BIO sequence");
      Turn t;
      t.text = rt.text;
      std::size_t n = rt.tokens.size();
      if (n > max_tokens) {
        std::cerr << "warning: " << where("tokens") << " truncated from " << n << " to " << max_tokens
                  << " tokens\n";
        n = max_tokens;
      }
      for (std::size_t j = 0; j < n; ++j) {
        t.tokens.push_back({rt.tokens[j], vocab.tokens.find(rt.tokens[j]).value_or(kUnkToken)});
        auto tag = vocab.tags.find(rt.slots[j]);
        if (!tag) throw SchemaError(where("slots") + ": unknown tag '" + rt.slots[j] + "'");
        t.slots.push_back(*tag);
      }
      auto intent = vocab.intents.find(rt.intent);
      if (!intent) throw SchemaError(where("intent") + ": unknown intent '" + rt.intent + "'");
      auto act = vocab.acts.find(rt.dialog_act);
      if (!act) throw SchemaError(where("dialog_act") + ": unknown dialog act '" + rt.dialog_act + "'");
      t.intent = *intent;
      t.dialog_act = *act;
      conv.turns.push_back(std::move(t));
    }
    ds.conversations.push_back(std::move(conv));
  }
  return ds;
}

inline std::vector<RawConversation> to_raw(const Dataset& ds) {
  std::vector<RawConversation> out;
  out.reserve(ds.conversations.size());
  for (const auto& c : ds.conversations) {
    RawConversation rc;
    rc.id = c.id;
    for (const auto& t : c.turns) {
      RawTurn rt;
      rt.text = t.text;
      for (const auto& tok : t.tokens) rt.tokens.push_back(tok.surface);
      rt.intent = ds.vocab.intents.label(t.intent);
      for (int s : t.slots) rt.slots.push_back(ds.vocab.tags.label(s));
      rt.dialog_act = ds.vocab.acts.label(t.dialog_act);
      rc.turns.push_back(std::move(rt));
    }
    out.push_back(std::move(rc));
  }
  return out;
}

// ---- Conversational JSONL -------------------------------------------------

inline RawConversation parse_conversation_json(const std::string& line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
  }
  RawConversation rc;
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
    throw SchemaError("line " + std::to_string(line_no) + ": missing string field 'id'");
  rc.id = j["id"].get<std::string>();
  auto fail = [&](std::size_t turn, const std::string& field, const std::string& msg) {
    return SchemaError("conversation '" + rc.id + "' (line " + std::to_string(line_no) + ") turn " +
                       std::to_string(turn) + " field '" + field + "': " + msg);
  };
  if (!j.contains("turns") || !j["turns"].is_array() || j["turns"].empty())
    throw SchemaError("conversation '" + rc.id + "' (line " + std::to_string(line_no) +
                      ") field 'turns': must be a non-empty array");
  std::size_t ti = 0;
  for (const auto& jt : j["turns"]) {
    RawTurn t;
    auto get_string = [&](const char* field) {
      if (!jt.contains(field) || !jt[field].is_string()) throw fail(ti, field, "expected string");
      return jt[field].get<std::string>();
    };
    auto get_list = [&](const char* field) {
      if (!jt.contains(field) || !jt[field].is_array()) throw fail(ti, field, "expected array of strings");
      std::vector<std::string> v;
      for (const auto& e : jt[field]) {
        if (!e.is_string()) throw fail(ti, field, "expected array of strings");
        v.push_back(e.get<std::string>());
      }
      return v;
    };
    t.text = get_string("text");
    t.tokens = get_list("tokens");
    t.intent = get_string("intent");
    t.slots = get_list("slots");
    t.dialog_act = get_string("dialog_act");
    if (t.tokens.empty()) throw fail(ti, "tokens", "utterance has no tokens");
    if (t.tokens.size() != t.slots.size())
      throw fail(ti, "slots",
                 std::to_string(t.slots.size()) + " tags for " + std::to_string(t.tokens.size()) + " tokens");
    if (!is_valid_bio(t.slots)) throw fail(ti, "slots", "invalid BIO sequence");
    rc.turns.push_back(std::move(t));
    ++ti;
  }
  return rc;
}

inline std::vector<RawConversation> read_conversational_jsonl(std::istream& in) {
  std::vector<RawConversation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_conversation_json(line, line_no));
  }
  return out;
}

inline std::vector<RawConversation> read_conversational_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_conversational_jsonl(in);
}

inline std::string conversation_to_json(const RawConversation& rc) {
  nlohmann::ordered_json j;
  j["id"] = rc.id;
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : rc.turns) {
    nlohmann::ordered_json jt;
    jt["text"] = t.text;
    jt["tokens"] = t.tokens;
    jt["intent"] = t.intent;
    jt["slots"] = t.slots;
    jt["dialog_act"] = t.dialog_act;
    j["turns"].push_back(std::move(jt));
  }
  return j.dump();
}

inline void write_conversational_jsonl(std::ostream& out, const std::vector<RawConversation>& corpus) {
  for (const auto& rc : corpus) out << conversation_to_json(rc) << '\n';
}

inline void write_conversational_jsonl(const std::string& path, const std::vector<RawConversation>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_conversational_jsonl(out, corpus);
  if (!out) throw DataError("write failed for '" + path + "'");
}

/// Loads a conversational corpus and builds vocabularies from it (train split).
inline Dataset load_conversational_jsonl(const std::string& path) {
  auto raw = read_conversational_jsonl(path);
  return encode_dataset(raw, build_vocabularies(raw), Split::Train);
}

/// Loads an evaluation split against vocabularies built from train.
inline Dataset load_conversational_jsonl(const std::string& path, const Vocabularies& vocab, Split split) {
  return encode_dataset(read_conversational_jsonl(path), vocab, split);
}

// ---- Flat IC-SL blocks (ATIS / SNIPS) -------------------------------------
//
//   # intent: atis_flight
//   show O
//   flights O
//   to O
//   boston B-toloc.city_name
//   <blank>
//
// Token lines carry two or three whitespace-separated columns; the first is
// the token and the last the BIO tag.

inline std::vector<RawConversation> read_flat_icsl(std::istream& in, const std::string& id_prefix = "utt") {
  std::vector<RawConversation> out;
  std::optional<RawTurn> cur;
  std::size_t block_start = 0;
  auto finish = [&](std::size_t line_no) {
    if (!cur) return;
    if (cur->tokens.empty())
      throw SchemaError("line " + std::to_string(block_start) + ": block has no tokens");
    if (!is_valid_bio(cur->slots))
      throw SchemaError("line " + std::to_string(line_no) + ": invalid BIO sequence in block starting at line " +
                        std::to_string(block_start));
    std::string text;
    for (const auto& t : cur->tokens) text += (text.empty() ? "" : " ") + t;
    cur->text = text;
    cur->dialog_act = kDummyActSymbol;
    out.push_back({id_prefix + "-" + std::to_string(out.size()), {std::move(*cur)}});
    cur.reset();
  };
  std::string line;
  std::size_t line_no = 0;
  const std::string header = "# intent:";
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      finish(line_no);
      continue;
    }
    if (line.rfind(header, 0) == 0) {
      finish(line_no);
      std::istringstream ls(line.substr(header.size()));
      std::string label, extra;
      ls >> label;
      if (label.empty() || (ls >> extra))
        throw DataError("line " + std::to_string(line_no) + ": malformed intent header");
      cur = RawTurn{};
      cur->intent = label;
      block_start = line_no;
      continue;
    }
    if (!cur) throw DataError("line " + std::to_string(line_no) + ": token line outside an intent block");
    std::istringstream ls(line);
    std::vector<std::string> cols;
    for (std::string c; ls >> c;) cols.push_back(c);
    if (cols.size() == 1)
      throw SchemaError("line " + std::to_string(line_no) + ": token '" + cols[0] + "' has no slot tag");
    if (cols.size() > 3)
      throw DataError("line " + std::to_string(line_no) + ": expected 2 or 3 columns, got " +
                      std::to_string(cols.size()));
    std::string tok = cols.front();
    std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
    cur->tokens.push_back(tok);
    cur->slots.push_back(cols.back());
  }
  finish(line_no);
  return out;
}

inline std::vector<RawConversation> read_flat_icsl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_flat_icsl(in);
}

inline Dataset load_flat_icsl(const std::string& path) {
  auto raw = read_flat_icsl(path);
  return encode_dataset(raw, build_vocabularies(raw), Split::Train);
}

inline Dataset load_flat_icsl(const std::string& path, const Vocabularies& vocab, Split split) {
  return encode_dataset(read_flat_icsl(path), vocab, split);
}

// ---- Context windows ------------------------------------------------------

struct ContextWindow {
  /// K+1 slots, oldest first; the last slot is the current turn.
  std::vector<Turn> turns;
  std::vector<bool> pad_mask;
  /// Index of each slot's turn in the conversation, -1 for pads.
  std::vector<int> source;
  /// Distinct slot-type ids observed in turns before the current one, sorted.
  std::vector<int> slot_history;
};

/// Slot-type ids present in `turn`, inserted into `into`.
inline void collect_slot_types(const std::vector<int>& tags, const Vocabularies& vocab, std::set<int>& into) {
  for (int tag : tags) {
    int type = vocab.tag_slot_type.at(static_cast<std::size_t>(tag));
    if (type >= 0) into.insert(type);
  }
}

inline Turn pad_turn() {
  Turn t;
  t.tokens = {{kPadSymbol, kPadToken}};
  t.slots = {kOutsideTag};
  t.intent = kDummyIntent;
  t.dialog_act = kDummyAct;
  return t;
}

inline ContextWindow make_context_window(const Conversation& conv, int i, int K, const Vocabularies& vocab) {
  if (i < 0 || i >= static_cast<int>(conv.turns.size()))
    throw std::out_of_range("turn index " + std::to_string(i) + " out of range for conversation '" + conv.id +
                            "' with " + std::to_string(conv.turns.size()) + " turns");
  if (K < 0) throw std::invalid_argument("context window size must be non-negative");
  ContextWindow w;
  for (int t = i - K; t <= i; ++t) {
    if (t < 0) {
      w.turns.push_back(pad_turn());
      w.pad_mask.push_back(true);
      w.source.push_back(-1);
    } else {
      w.turns.push_back(conv.turns[static_cast<std::size_t>(t)]);
      w.pad_mask.push_back(false);
      w.source.push_back(t);
    }
  }
  w.turns.back().intent = kDummyIntent;
  w.turns.back().dialog_act = kDummyAct;
  std::set<int> seen;
  for (int t = 0; t < i; ++t) collect_slot_types(conv.turns[static_cast<std::size_t>(t)].slots, vocab, seen);
  w.slot_history.assign(seen.begin(), seen.end());
  return w;
}

}  // namespace casa
