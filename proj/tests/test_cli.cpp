#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / ("dualvd_cli_test_" + std::to_string(::getpid()));

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

struct Result {
  int code;
  std::string out;
};

Result cli(const std::string& args) {
  const fs::path out = kRoot / "stdout.txt";
  const std::string cmd = std::string(DUALVD_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                          (kRoot / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    spit(kRoot / "gen.json",
         R"({"train_dialogues":4,"val_dialogues":3,"rounds":2,"objects":4,"captions":2})");
    nlohmann::json run = {{"dataset", (kRoot / "data").string()},
                          {"out", (kRoot / "run").string()},
                          {"epochs", 1},
                          {"batch_size", 2},
                          {"model", {{"d_word", 6}, {"d_hid", 8}, {"d_att", 8}, {"d_fuse", 8}}}};
    spit(kRoot / "run.json", run.dump());
    ASSERT_EQ(cli("generate --config " + (kRoot / "gen.json").string() + " --seed 3 --out " +
                  (kRoot / "data").string()).code, 0);
    ASSERT_EQ(cli("train --config " + (kRoot / "run.json").string()).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_F(Cli, GenerateIsReproducible) {
  const fs::path again = kRoot / "data2";
  ASSERT_EQ(cli("generate --config " + (kRoot / "gen.json").string() + " --seed 3 --out " + again.string()).code, 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "vocab.json", "generator.json"})
    EXPECT_EQ(slurp(kRoot / "data" / f), slurp(again / f)) << f;
  EXPECT_EQ(cli("generate --config " + (kRoot / "gen.json").string() + " --seed 4 --out " + again.string()).code, 0);
  EXPECT_NE(slurp(kRoot / "data" / "train.jsonl"), slurp(again / "train.jsonl"));
}

TEST_F(Cli, InfeasibleGeneratorConfigIsAnInputError) {
  spit(kRoot / "bad_gen.json", R"({"objects":40})");
  EXPECT_EQ(cli("generate --config " + (kRoot / "bad_gen.json").string() + " --out " + (kRoot / "x").string()).code, 2);
}

TEST_F(Cli, EvalWritesReportsAndIsRepeatable) {
  const std::string base = "eval --config " + (kRoot / "run.json").string() + " --split val --out ";
  ASSERT_EQ(cli(base + (kRoot / "e1").string()).code, 0);
  ASSERT_EQ(cli(base + (kRoot / "e2").string()).code, 0);
  for (const char* f : {"metrics.json", "predictions.jsonl", "gate_traces.jsonl"})
    EXPECT_EQ(slurp(kRoot / "e1" / f), slurp(kRoot / "e2" / f)) << f;
  auto m = nlohmann::json::parse(slurp(kRoot / "e1" / "metrics.json"));
  EXPECT_EQ(m.at("count"), 6);

  ASSERT_EQ(cli(base + (kRoot / "e3").string() + " --oracle-scores").code, 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(kRoot / "e3" / "metrics.json")).at("MRR"), 1.0);
}

TEST_F(Cli, EvalRejectsMismatchedCheckpoint) {
  EXPECT_EQ(cli("eval --config " + (kRoot / "run.json").string() + " --variant LoCap --out " +
                (kRoot / "e4").string()).code, 2);
  nlohmann::json run = nlohmann::json::parse(slurp(kRoot / "run.json"));
  run["model"]["d_hid"] = 12;
  spit(kRoot / "wide.json", run.dump());
  EXPECT_EQ(cli("eval --config " + (kRoot / "wide.json").string() + " --out " + (kRoot / "e5").string()).code, 2);
}

TEST_F(Cli, MissingDatasetIsAnInputError) {
  nlohmann::json run = nlohmann::json::parse(slurp(kRoot / "run.json"));
  run["dataset"] = (kRoot / "nowhere").string();
  spit(kRoot / "missing.json", run.dump());
  EXPECT_EQ(cli("train --config " + (kRoot / "missing.json").string()).code, 2);
  EXPECT_EQ(cli("train --variant Bogus").code, 2);
  EXPECT_EQ(cli("").code, 2);
}

TEST_F(Cli, InspectGatesCsv) {
  Result r = cli("inspect-gates --config " + (kRoot / "run.json").string() + " --split train");
  ASSERT_EQ(r.code, 0);
  std::istringstream lines(r.out);
  std::string header, row;
  std::getline(lines, header);
  EXPECT_EQ(header, "question_id,visual_fraction,semantic_fraction,top_object,top_caption");
  int rows = 0;
  while (std::getline(lines, row)) ++rows;
  EXPECT_EQ(rows, 8);
}

TEST_F(Cli, AblateSingleVariantGivesOneRow) {
  Result r = cli("ablate --config " + (kRoot / "run.json").string() + " --variants LoCap --out " +
                 (kRoot / "abl").string());
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("variant,MRR,R@1,R@5,R@10,Mean,NDCG\nLoCap,", 0), 0u);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);
  EXPECT_EQ(slurp(kRoot / "abl" / "ablation.csv"), r.out);
}

TEST_F(Cli, GradcheckNegativeControlFails) {
  Result r = cli("gradcheck --corrupt-backward");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("offending parameter"), std::string::npos);
  EXPECT_NE(r.out.find("gradcheck FAILED"), std::string::npos);
}
