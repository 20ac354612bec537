#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::path(::testing::TempDir()) / ("advlab_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(ADVLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const json& j) {
  auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

json tiny_config() {
  return json{{"dataset", {{"source", "synthetic"}, {"shape", {6}}, {"classes", 3}, {"n_train", 60}, {"n_test", 40}}},
              {"network", {{"arch", "mlp"}, {"hidden", {8}}}},
              {"train", {{"epochs", 2}, {"window", 2}, {"eval_points", 20}, {"batch_size", 20}}}};
}

json sweep_config() {
  auto c = tiny_config();
  c["sweep"] = {{"objectives", json::array({{{"regularizer", "grad-penalty"}, {"q", 1}},
                                            {{"regularizer", "augment"}, {"method", "fgsm"}}})},
                {"eps", {0.0, 0.01, 0.02}}};
  return c;
}

std::set<std::string> run_ids(const std::string& csv) {
  std::set<std::string> ids;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line))
    if (!line.empty()) ids.insert(line.substr(0, line.find(',')));
  return ids;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --config /nonexistent/file.json"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, MalformedConfigIsRejected) {
  auto dir = scratch("malformed");
  std::ofstream(dir / "bad.json") << "{ \"dataset\": { \"source\": ";
  EXPECT_EQ(run("verify-theory --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string()), 2);
  std::ofstream(dir / "src.json") << R"({"dataset": {"source": "imagenet"}})";
  EXPECT_EQ(run("train --config " + (dir / "src.json").string() + " --out " + (dir / "o").string()), 2);
  std::ofstream(dir / "type.json") << R"({"train": {"lr": "fast"}})";
  EXPECT_EQ(run("train --config " + (dir / "type.json").string() + " --out " + (dir / "o").string()), 2);
}

TEST(Cli, TrainWritesManifestAndRecords) {
  auto dir = scratch("train");
  auto cfg = tiny_config();
  cfg["run_id"] = "one";
  ASSERT_EQ(run("train --config " + write_config(dir, cfg).string() + " --seed 3 --out " + (dir / "o").string()), 0);
  auto m = json::parse(slurp(dir / "o" / "one" / "manifest.json"));
  EXPECT_EQ(m["schema"], "advlab-records/1");
  EXPECT_EQ(m["config"]["train"]["seed"], 3);
  EXPECT_EQ(m["config"]["dataset"]["n_train"], 60);
  EXPECT_EQ(m["completed_epochs"], 2);
  EXPECT_EQ(m["config_hash"].get<std::string>().size(), 64u);
  const auto csv = slurp(dir / "o" / "one" / "records.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 3);
  EXPECT_TRUE(fs::exists(dir / "o" / "one" / "checkpoint.bin"));
}

TEST(Cli, SweepGridAndDeterminism) {
  auto dir = scratch("sweep");
  const auto cfg = write_config(dir, sweep_config()).string();
  ASSERT_EQ(run("sweep --config " + cfg + " --jobs 2 --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run("sweep --config " + cfg + " --jobs 1 --out " + (dir / "b").string()), 0);
  const auto a = slurp(dir / "a" / "merged.csv");
  EXPECT_EQ(run_ids(a).size(), 6u);
  std::size_t runs = 0;
  for (const auto& e : fs::directory_iterator(dir / "a"))
    if (e.is_directory()) {
      ++runs;
      EXPECT_TRUE(fs::exists(e.path() / "manifest.json"));
    }
  EXPECT_EQ(runs, 6u);
  EXPECT_EQ(a, slurp(dir / "b" / "merged.csv"));
}

TEST(Cli, SweepWithOneEpsIsOneRun) {
  auto dir = scratch("single");
  auto c = tiny_config();
  c["sweep"] = {{"eps", {0.01}}};
  ASSERT_EQ(run("sweep --config " + write_config(dir, c).string() + " --out " + (dir / "o").string()), 0);
  EXPECT_EQ(run_ids(slurp(dir / "o" / "merged.csv")).size(), 1u);
}

TEST(Cli, ReportPassthroughAndErrors) {
  auto dir = scratch("report");
  auto c = tiny_config();
  c["run_id"] = "solo";
  ASSERT_EQ(run("train --config " + write_config(dir, c).string() + " --out " + (dir / "runs").string()), 0);
  const auto run_dir = dir / "runs" / "solo";
  ASSERT_EQ(run("report " + run_dir.string() + " --window 2 --out " + (dir / "rep").string()), 0);
  EXPECT_EQ(slurp(dir / "rep" / "report.csv"), slurp(run_dir / "records.csv"));
  auto rep = json::parse(slurp(dir / "rep" / "report.json"));
  EXPECT_EQ(rep["runs"].size(), 1u);
  EXPECT_EQ(rep["tradeoff"].size(), 1u);

  fs::create_directories(dir / "empty");
  EXPECT_EQ(run("report " + (dir / "empty").string() + " --out " + (dir / "rep2").string()), 2);
  EXPECT_EQ(run("report " + (dir / "missing").string() + " --out " + (dir / "rep2").string()), 2);

  // a second run directory written under another schema version
  fs::copy(run_dir, dir / "runs" / "old", fs::copy_options::recursive);
  auto m = json::parse(slurp(dir / "runs" / "old" / "manifest.json"));
  m["schema"] = "advlab-records/0";
  std::ofstream(dir / "runs" / "old" / "manifest.json") << m.dump();
  EXPECT_EQ(run("report " + (dir / "runs").string() + " --out " + (dir / "rep3").string()), 2);
}

TEST(Cli, AttackSubcommand) {
  auto dir = scratch("attack");
  auto c = tiny_config();
  c["attacks"] = json::array({{{"method", "fgsm"}, {"eps_inf", 0.1}}, {{"method", "deepfool"}}});
  ASSERT_EQ(run("attack --config " + write_config(dir, c).string() + " --out " + (dir / "o").string()), 0);
  const auto csv = slurp(dir / "o" / "attacks.csv");
  EXPECT_EQ(csv.rfind("sample_id,method,p,eps_inf,success,dL,l1,l2,linf\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 40);
  EXPECT_EQ(json::parse(slurp(dir / "o" / "summary.json")).size(), 2u);
}

TEST(Cli, VerifyTheorySmall) {
  auto dir = scratch("verify");
  json c{{"dims", {16, 64, 256}}, {"seeds", 10}, {"inputs_per_seed", 10}, {"dag_count", 20}};
  EXPECT_EQ(run("verify-theory --config " + write_config(dir, c).string() + " --out " + (dir / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "manifest.json"));
  const auto csv = slurp(dir / "o" / "scaling_grad_l1.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
