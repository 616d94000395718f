#pragma once

// Model checkpoints. Layout:
//   line 1   CASA-NLU-CHECKPOINT 1
//   line 2   JSON metadata (model config, signal flags, vocabularies)
//   rest     per tensor: u32 name length, name bytes, i64 rows, i64 cols,
//            rows*cols little-endian doubles in column-major order

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "casa/data.hpp"
#include "casa/errors.hpp"
#include "casa/model.hpp"

namespace casa {

inline const std::string kCheckpointMagic = "CASA-NLU-CHECKPOINT 1";

inline nlohmann::ordered_json vocab_to_json(const Vocabularies& v) {
  nlohmann::ordered_json j;
  j["tokens"] = v.tokens.labels();
  j["token_frequency"] = v.token_frequency;
  j["intents"] = v.intents.labels();
  j["tags"] = v.tags.labels();
  j["slot_types"] = v.slot_types.labels();
  j["acts"] = v.acts.labels();
  return j;
}

inline Vocabularies vocab_from_json(const nlohmann::json& j) {
  Vocabularies v;
  for (const auto& s : j.at("tokens").get<std::vector<std::string>>()) v.tokens.add(s);
  v.token_frequency = j.at("token_frequency").get<std::vector<std::size_t>>();
  for (const auto& s : j.at("intents").get<std::vector<std::string>>()) v.intents.add(s);
  for (const auto& s : j.at("slot_types").get<std::vector<std::string>>()) v.slot_types.add(s);
  for (const auto& s : j.at("tags").get<std::vector<std::string>>()) v.add_tag(s);
  for (const auto& s : j.at("acts").get<std::vector<std::string>>()) v.acts.add(s);
  if (v.token_frequency.size() != static_cast<std::size_t>(v.tokens.size()))
    throw DataError("checkpoint token frequencies do not match the token vocabulary");
  if (v.slot_types.labels() != j.at("slot_types").get<std::vector<std::string>>())
    throw DataError("checkpoint slot types are inconsistent with its tags");
  return v;
}

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = to_string(c.kind);
  j["intent_hist"] = c.flags.intent_hist;
  j["slot_hist"] = c.flags.slot_hist;
  j["utt_hist"] = c.flags.utt_hist;
  j["da_hist"] = c.flags.da_hist;
  j["d_e"] = c.d_e;
  j["d_h"] = c.d_h;
  j["d_intent"] = c.d_intent;
  j["d_da"] = c.d_da;
  j["d_slot"] = c.d_slot;
  j["K"] = c.context_window;
  j["max_tokens"] = c.max_tokens;
  j["w"] = c.concat_window;
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j, const Vocabularies& v) {
  ModelConfig c = ModelConfig::for_vocabularies(v);
  c.kind = parse_model_kind(j.at("model").get<std::string>());
  c.flags = {j.at("intent_hist").get<bool>(), j.at("slot_hist").get<bool>(), j.at("utt_hist").get<bool>(),
             j.at("da_hist").get<bool>()};
  c.d_e = j.at("d_e").get<int>();
  c.d_h = j.at("d_h").get<int>();
  c.d_intent = j.at("d_intent").get<int>();
  c.d_da = j.at("d_da").get<int>();
  c.d_slot = j.at("d_slot").get<int>();
  c.context_window = j.at("K").get<int>();
  c.max_tokens = j.at("max_tokens").get<int>();
  c.concat_window = j.at("w").get<int>();
  return c;
}

inline void save_checkpoint(const std::string& path, const Model& model, const Vocabularies& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  nlohmann::ordered_json meta;
  meta["config"] = config_to_json(model.config());
  meta["vocab"] = vocab_to_json(vocab);
  out << kCheckpointMagic << '\n' << meta.dump() << '\n';
  for (const auto& [name, t] : model.params().tensors()) {
    auto len = static_cast<std::uint32_t>(name.size());
    std::int64_t rows = t.rows(), cols = t.cols();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

struct LoadedModel {
  std::unique_ptr<Model> model;
  Vocabularies vocab;
};

inline LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::string magic, meta_line;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw DataError("'" + path + "' is not a checkpoint");
  std::getline(in, meta_line);
  LoadedModel lm;
  try {
    auto meta = nlohmann::json::parse(meta_line);
    lm.vocab = vocab_from_json(meta.at("vocab"));
    lm.model = std::make_unique<Model>(config_from_json(meta.at("config"), lm.vocab), 0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint metadata in '" + path + "': " + e.what());
  }
  std::size_t loaded = 0;
  std::uint32_t len = 0;
  while (in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
    std::string name(len, '\0');
    std::int64_t rows = 0, cols = 0;
    in.read(name.data(), len);
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in || !lm.model->params().contains(name)) throw DataError("corrupt checkpoint tensor record in '" + path + "'");
    Tensor& t = lm.model->params().at(name);
    if (t.rows() != rows || t.cols() != cols) throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
    in.read(reinterpret_cast<char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint '" + path + "'");
    ++loaded;
  }
  if (loaded != lm.model->params().tensors().size()) throw DataError("checkpoint '" + path + "' is missing tensors");
  return lm;
}

}  // namespace casa
