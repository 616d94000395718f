#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("casa_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const fs::path out = scratch() / "stdout.txt";
  const std::string cmd = std::string(CASA_NLU_BINARY) + " " + args + " > " + out.string() + " 2> /dev/null";
  int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Small corpus plus a trained one-seed checkpoint, shared across tests.
struct Trained {
  fs::path train, test, dir;
  Trained() {
    train = scratch() / "train.jsonl";
    test = scratch() / "test.jsonl";
    dir = scratch() / "run";
    EXPECT_EQ(run("gen-data --profile cable --n 10 --seed 3 --out " + train.string()).code, 0);
    EXPECT_EQ(run("gen-data --profile cable --n 6 --seed 3 --out " + test.string()).code, 0);
    Result r = run("train --train " + train.string() + " --val " + train.string() + " --test " + test.string() +
                   " --out_dir " + dir.string() + " --seeds 1 --max_epochs 2 --d_h 8 --d_e 8 --d_intent 4 --d_da 4 --d_slot 4");
    EXPECT_EQ(r.code, 0) << r.out;
  }
};

const Trained& trained() {
  static Trained t;
  return t;
}

}  // namespace

TEST(Cli, GenDataIsDeterministic) {
  const fs::path a = scratch() / "a.jsonl", b = scratch() / "b.jsonl";
  ASSERT_EQ(run("gen-data --profile booking --n 25 --seed 7 --out " + a.string()).code, 0);
  ASSERT_EQ(run("gen-data --profile booking --n 25 --seed 7 --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  std::istringstream lines(slurp(a));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("id") && j.contains("turns"));
    ++count;
  }
  EXPECT_EQ(count, 25);
}

TEST(Cli, GenDataZeroConversationsWritesEmptyFile) {
  const fs::path p = scratch() / "empty.jsonl";
  ASSERT_EQ(run("gen-data --n 0 --out " + p.string()).code, 0);
  EXPECT_TRUE(fs::exists(p));
  EXPECT_EQ(fs::file_size(p), 0u);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --no_such_key 1").code, 2);
  EXPECT_EQ(run("gen-data --profile airline --out " + (scratch() / "x.jsonl").string()).code, 2);
  const fs::path missing_out = scratch() / "never_created";
  EXPECT_EQ(run("train --train /nonexistent/train.jsonl --out_dir " + missing_out.string()).code, 3);
  EXPECT_FALSE(fs::exists(missing_out));
  const fs::path bad = scratch() / "bad.jsonl";
  std::ofstream(bad) << "{\"id\":\"x\",\"turns\":[{\"text\":\"a\",\"tokens\":[\"a\"],\"intent\":\"i\",\"slots\":[],"
                        "\"dialog_act\":\"Close\"}]}\n";
  EXPECT_EQ(run("train --train " + bad.string() + " --out_dir " + (scratch() / "bad_run").string()).code, 3);
}

TEST(Cli, ConfigFileAndOverrides) {
  const fs::path cfg = scratch() / "gen.cfg";
  const fs::path a = scratch() / "cfg_a.jsonl", b = scratch() / "cfg_b.jsonl";
  std::ofstream(cfg) << "profile = booking\nn = 4\nseed = 5\nout = " << a.string() << "\n";
  ASSERT_EQ(run("gen-data --config " + cfg.string()).code, 0);
  ASSERT_EQ(run("gen-data --config " + cfg.string() + " --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  std::ofstream(cfg) << "bogus = 1\n";
  EXPECT_EQ(run("gen-data --config " + cfg.string()).code, 2);
}

TEST(Cli, TrainWritesLogCheckpointAndMetrics) {
  const Trained& t = trained();
  EXPECT_TRUE(fs::exists(t.dir / "seed-1.ckpt"));
  std::istringstream log(slurp(t.dir / "train-log.jsonl"));
  std::string line;
  int epochs = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("train_loss") && j.contains("val_ic"));
    ++epochs;
  }
  EXPECT_EQ(epochs, 2);
  auto metrics = nlohmann::json::parse(slurp(t.dir / "metrics.json"));
  EXPECT_EQ(metrics["evaluated_on"], "test");
  EXPECT_EQ(metrics["per_seed"].size(), 1u);
}

TEST(Cli, EvalReportsFirstAndFollowUpAccuracy) {
  const Trained& t = trained();
  Result r = run("eval --checkpoint " + (t.dir / "seed-1.ckpt").string() + " --test " + t.test.string());
  ASSERT_EQ(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  for (const char* key : {"ic_accuracy", "sl_token_f1", "ic_first_turn", "ic_followup"}) {
    ASSERT_TRUE(j.contains(key)) << key;
    EXPECT_GE(j[key].get<double>(), 0.0);
    EXPECT_LE(j[key].get<double>(), 100.0);
  }
  auto metrics = nlohmann::json::parse(slurp(t.dir / "metrics.json"));
  EXPECT_DOUBLE_EQ(j["ic_accuracy"].get<double>(), metrics["mean"]["ic_accuracy"].get<double>());
  EXPECT_EQ(run("eval --checkpoint /nonexistent.ckpt --test " + t.test.string()).code, 3);
}

TEST(Cli, VizAttentionRowsAreDistributions) {
  const Trained& t = trained();
  const fs::path pgm = scratch() / "heat.pgm";
  Result r = run("viz-attention --checkpoint " + (t.dir / "seed-1.ckpt").string() + " --data " + t.test.string() +
                 " --conv cable-000001 --turn 1 --heatmap " + pgm.string());
  ASSERT_EQ(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["window"].size(), 4u);
  for (const char* name : {"utt", "intent", "da"}) {
    const auto& row = j["signals"][name];
    ASSERT_EQ(row.size(), 4u);
    double sum = 0.0;
    for (const auto& w : row) sum += w.get<double>();
    EXPECT_NEAR(sum, 1.0, 1e-9) << name;
    EXPECT_EQ(row[0].get<double>(), 0.0);  // before the first turn
  }
  EXPECT_EQ(slurp(pgm).rfind("P5\n128 96\n255\n", 0), 0u);
  EXPECT_EQ(run("viz-attention --checkpoint " + (t.dir / "seed-1.ckpt").string() + " --data " + t.test.string() +
                " --conv nope --turn 0").code, 3);
}

TEST(Cli, OverfitModelScoresPerfectlyOnItsTrainingSet) {
  const Trained& t = trained();
  const fs::path dir = scratch() / "overfit";
  Result r = run("train --train " + t.train.string() + " --val " + t.train.string() + " --out_dir " + dir.string() +
                 " --seeds 1 --max_epochs 50 --patience 50 --dropout 0 --unk_prob 0");
  ASSERT_EQ(r.code, 0);
  for (const char* policy : {"gold", "predicted"}) {
    Result e = run("eval --checkpoint " + (dir / "seed-1.ckpt").string() + " --data " + t.train.string() +
                   " --history_policy " + policy);
    ASSERT_EQ(e.code, 0);
    auto j = nlohmann::json::parse(e.out);
    EXPECT_EQ(j["history_policy"], policy);
    EXPECT_DOUBLE_EQ(j["ic_accuracy"].get<double>(), 100.0) << policy;
    EXPECT_DOUBLE_EQ(j["sl_token_f1"].get<double>(), 100.0) << policy;
  }
}
