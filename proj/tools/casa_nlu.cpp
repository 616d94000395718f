// casa-nlu: data generation, training, evaluation, ablation and attention
// inspection for the contextual intent/slot model.
//
// Every subcommand accepts `--config FILE` (key = value lines) and
// `--KEY VALUE` overrides for any configuration key.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "casa/checkpoint.hpp"
#include "casa/config.hpp"
#include "casa/data.hpp"
#include "casa/errors.hpp"
#include "casa/synthetic.hpp"
#include "casa/training.hpp"

namespace fs = std::filesystem;
using namespace casa;

namespace {

enum Exit { kOk = 0, kConfigExit = 2, kDataExit = 3, kRuntimeExit = 4 };

void require_file(const RunConfig& cfg, const std::string& key) {
  std::string p = cfg.required(key);
  if (!fs::is_regular_file(p)) throw DataError("'" + key + "' path does not exist: " + p);
}

void require_optional_file(const RunConfig& cfg, const std::string& key) {
  if (cfg.has(key)) require_file(cfg, key);
}

Dataset load_train(const RunConfig& cfg, const std::string& key) {
  const std::string path = cfg.required(key);
  const std::string fmt = cfg.str("format", "jsonl");
  if (fmt == "jsonl") return load_conversational_jsonl(path);
  if (fmt == "flat") return load_flat_icsl(path);
  throw ConfigError("unknown format '" + fmt + "' (expected jsonl or flat)");
}

Dataset load_with(const RunConfig& cfg, const std::string& key, const Vocabularies& vocab, Split split) {
  const std::string path = cfg.required(key);
  const std::string fmt = cfg.str("format", "jsonl");
  if (fmt == "jsonl") return load_conversational_jsonl(path, vocab, split);
  if (fmt == "flat") return load_flat_icsl(path, vocab, split);
  throw ConfigError("unknown format '" + fmt + "' (expected jsonl or flat)");
}

/// Train split plus validation: the `val` file if given, otherwise a seeded
/// held-out fraction of the training file.
std::pair<Dataset, Dataset> load_train_val(const RunConfig& cfg) {
  Dataset full = load_train(cfg, "train");
  if (cfg.has("val")) {
    Dataset val = load_with(cfg, "val", full.vocab, Split::Validation);
    return {std::move(full), std::move(val)};
  }
  return split_validation(full, cfg.real("val_fraction", 0.1), cfg.seed(0));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  fs::path dir = cfg.required("out_dir");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

int cmd_gen_data(const RunConfig& cfg) {
  const std::string out = cfg.required("out");
  const int n = cfg.integer("n", 1000);
  if (n < 0) throw ConfigError("n must be non-negative");
  auto raw = generate_synthetic_raw(cfg.seed(1), static_cast<std::size_t>(n), parse_profile(cfg.str("profile", "cable")));
  write_conversational_jsonl(out, raw);
  std::cerr << "wrote " << raw.size() << " conversations to " << out << "\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg) {
  const Hyperparams hp = cfg.hyperparams();
  const ModelVariant variant = cfg.variant();
  const HistoryPolicy policy = cfg.history_policy();
  require_file(cfg, "train");
  require_optional_file(cfg, "val");
  require_optional_file(cfg, "test");
  auto [train_set, val_set] = load_train_val(cfg);
  std::optional<Dataset> test_set;
  if (cfg.has("test")) test_set = load_with(cfg, "test", train_set.vocab, Split::Test);
  const fs::path dir = prepare_out_dir(cfg);

  std::ofstream log(dir / "train-log.jsonl");
  SeedAveragedReport report;
  for (auto seed : hp.seeds) {
    auto run = train(train_set, val_set, variant, hp, seed, [&](const EpochLog& e) {
      auto j = to_json(e);
      j["seed"] = seed;
      log << j.dump() << "\n" << std::flush;
      std::cerr << "seed " << seed << " epoch " << e.epoch << " loss " << e.train_loss << " val_ic " << e.val_ic
                << " val_sl_f1 " << e.val_sl_f1 << "\n";
    });
    save_checkpoint((dir / ("seed-" + std::to_string(seed) + ".ckpt")).string(), *run.model, train_set.vocab);
    report.seeds.push_back(seed);
    report.per_seed.push_back(evaluate(*run.model, test_set ? *test_set : val_set, policy));
  }
  report.mean = average_reports(report.per_seed);
  auto j = to_json(report);
  j["evaluated_on"] = test_set ? "test" : "validation";
  j["history_policy"] = policy == HistoryPolicy::Gold ? "gold" : "predicted";
  write_text((dir / "metrics.json").string(), j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& cfg) {
  const HistoryPolicy policy = cfg.history_policy();
  require_file(cfg, "checkpoint");
  const std::string data_key = cfg.has("test") ? "test" : "data";
  require_file(cfg, data_key);
  LoadedModel lm = load_checkpoint(cfg.required("checkpoint"));
  Dataset ds = load_with(cfg, data_key, lm.vocab, Split::Test);
  auto j = to_json(evaluate(*lm.model, ds, policy));
  j["history_policy"] = policy == HistoryPolicy::Gold ? "gold" : "predicted";
  std::cout << j.dump(2) << "\n";
  if (cfg.has("out")) write_text(cfg.str("out"), j.dump(2) + "\n");
  return kOk;
}

int cmd_ablate(const RunConfig& cfg) {
  const Hyperparams hp = cfg.hyperparams();
  const HistoryPolicy policy = cfg.history_policy();
  require_file(cfg, "train");
  require_optional_file(cfg, "val");
  require_file(cfg, "test");
  std::vector<AblationConfig> configs;
  auto all = default_ablation_configs();
  if (cfg.has("configs")) {
    for (const auto& name : cfg.list("configs")) {
      auto it = std::find_if(all.begin(), all.end(), [&](const AblationConfig& c) { return c.name == name; });
      if (it == all.end()) throw ConfigError("unknown ablation config '" + name + "' (expected I..V)");
      configs.push_back(*it);
    }
  } else {
    configs = all;
  }
  auto [train_set, val_set] = load_train_val(cfg);
  Dataset test_set = load_with(cfg, "test", train_set.vocab, Split::Test);
  auto rows = run_ablation(train_set, val_set, test_set, configs, hp, policy);
  auto j = to_json(rows);
  std::cout << j.dump(2) << "\n";
  if (cfg.has("out")) write_text(cfg.str("out"), j.dump(2) + "\n");
  return kOk;
}

/// Binary PGM, one cell per (signal, window turn); darker = higher weight.
void write_heatmap(const std::string& path, const std::vector<std::vector<double>>& grid) {
  constexpr int cell = 32;
  const int rows = static_cast<int>(grid.size());
  const int cols = rows ? static_cast<int>(grid.front().size()) : 0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write heatmap '" + path + "'");
  out << "P5\n" << cols * cell << " " << rows * cell << "\n255\n";
  for (int r = 0; r < rows * cell; ++r)
    for (int c = 0; c < cols * cell; ++c) {
      double w = std::clamp(grid[static_cast<std::size_t>(r / cell)][static_cast<std::size_t>(c / cell)], 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - w)))));
    }
}

int cmd_viz_attention(const RunConfig& cfg) {
  const HistoryPolicy policy = cfg.history_policy();
  require_file(cfg, "checkpoint");
  require_file(cfg, "data");
  const std::string conv_id = cfg.required("conv");
  const int turn = cfg.integer("turn", 0);
  LoadedModel lm = load_checkpoint(cfg.required("checkpoint"));
  Dataset ds = load_with(cfg, "data", lm.vocab, Split::Test);
  auto it = std::find_if(ds.conversations.begin(), ds.conversations.end(),
                         [&](const Conversation& c) { return c.id == conv_id; });
  if (it == ds.conversations.end()) throw DataError("unknown conversation '" + conv_id + "'");
  if (turn < 0 || turn >= static_cast<int>(it->turns.size()))
    throw DataError("conversation '" + conv_id + "' has no turn " + std::to_string(turn));

  auto preds = lm.model->predict(*it, policy);
  const auto layout = lm.model->config().layout();
  auto summary = summarize_attention(preds[static_cast<std::size_t>(turn)].attention, layout.blocks());
  nlohmann::ordered_json j;
  j["conv"] = conv_id;
  j["turn"] = turn;
  nlohmann::ordered_json window = nlohmann::ordered_json::array();
  const int K = lm.model->config().context_window;
  for (int t = turn - K; t <= turn; ++t) window.push_back(t);
  j["window"] = window;
  nlohmann::ordered_json signals;
  auto blocks = layout.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) signals[blocks[b].name] = summary[b];
  j["signals"] = signals;
  if (cfg.has("out"))
    write_text(cfg.str("out"), j.dump(2) + "\n");
  else
    std::cout << j.dump(2) << "\n";
  if (cfg.has("heatmap")) write_heatmap(cfg.str("heatmap"), summary);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware joint intent classification and slot labeling"};
  app.require_subcommand(1);

  struct Command {
    std::string name, help;
    int (*run)(const RunConfig&);
    CLI::App* sub = nullptr;
    std::string config_file;
    std::map<std::string, std::string> overrides;
  };
  std::vector<Command> commands = {
      {"gen-data", "Generate a synthetic conversational corpus (JSONL)", cmd_gen_data, nullptr, {}, {}},
      {"train", "Train one model per seed; write checkpoints, log and metrics", cmd_train, nullptr, {}, {}},
      {"eval", "Evaluate a checkpoint on a dataset", cmd_eval, nullptr, {}, {}},
      {"ablate", "Train and evaluate the contextual-signal configurations", cmd_ablate, nullptr, {}, {}},
      {"viz-attention", "Export per-signal attention over one turn's context window", cmd_viz_attention, nullptr, {}, {}},
  };
  for (auto& c : commands) {
    c.sub = app.add_subcommand(c.name, c.help);
    c.sub->add_option("--config", c.config_file, "key = value configuration file");
    for (const auto& key : RunConfig::known_keys()) c.sub->add_option("--" + key, c.overrides[key]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigExit;
  }

  for (auto& c : commands) {
    if (!c.sub->parsed()) continue;
    try {
      RunConfig cfg;
      if (!c.config_file.empty()) cfg.load_file(c.config_file);
      for (const auto& [key, value] : c.overrides)
        if (c.sub->count("--" + key)) cfg.set(key, value);
      cfg.apply_environment();
      return c.run(cfg);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kConfigExit;
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      return kDataExit;
    } catch (const RuntimeFailure& e) {
      std::cerr << "runtime failure: " << e.what() << "\n";
      return kRuntimeExit;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kRuntimeExit;
    }
  }
  return kConfigExit;
}
