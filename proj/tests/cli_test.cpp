#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpla/eval.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("dpla-cli-") + info->name() + "-" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome dpla(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = "DPLA_CACHE_DIR='" + (dir_ / "cache").string() + "' '" DPLA_CLI_PATH "' " + args +
                            " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
  }

  fs::path dir_;
};

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

}  // namespace

TEST_F(Cli, CheckGradsPasses) {
  const auto r = dpla("check-grads");
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}

TEST_F(Cli, NoSubcommandIsAnError) { EXPECT_NE(dpla("").status, 0); }

TEST_F(Cli, GenDataCachesUnderEnvDirectory) {
  const auto first = dpla("gen-data --preset toy --seed 3");
  ASSERT_EQ(first.status, 0) << first.err;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "cache")) files += e.path().extension() == ".bin";
  EXPECT_EQ(files, 1u);
  const auto again = dpla("gen-data --preset toy --seed 3");
  EXPECT_EQ(again.out, first.out);
  const auto other = dpla("gen-data --preset toy --seed 4");
  EXPECT_NE(other.out, first.out);
}

TEST_F(Cli, RunWritesArtifactsAndExportRoundTrips) {
  const fs::path out = dir_ / "run";
  const auto r = dpla("run --preset toy --epochs 2 --seed 1 --out '" + out.string() + "'");
  ASSERT_EQ(r.status, 0) << r.err;

  const auto records = lines_of(slurp(out / "metrics.txt"));
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(dpla::eval::parse_record(records[1]).epoch, 2u);
  EXPECT_EQ(lines_of(r.out).back(), records.back());

  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  for (const char* key : {"config", "preset", "seed", "dataset", "epochs_completed", "artifacts"}) {
    EXPECT_TRUE(manifest.contains(key)) << key;
  }
  EXPECT_EQ(manifest["epochs_completed"], 2);
  EXPECT_EQ(manifest["config"]["epochs"], 2);
  EXPECT_EQ(manifest["config"]["tau_1"], 2.0);
  EXPECT_EQ(manifest["dataset"]["git_blob_sha1"].get<std::string>().size(), 40u);

  const auto csv = dpla("export '" + (out / "metrics.txt").string() + "'");
  ASSERT_EQ(csv.status, 0) << csv.err;
  const auto rows = lines_of(csv.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "epoch,known_acc,novel_acc,all_acc,novel_nmi,all_nmi");
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<dpla::eval::MetricsReport> one{dpla::eval::parse_record(records[i])};
    EXPECT_EQ(rows[i + 1] + "\n", lines_of(dpla::eval::records_to_csv(one))[1] + "\n");
  }
  ASSERT_EQ(dpla("export '" + (out / "metrics.txt").string() + "' --out '" + out.string() + "'").status, 0);
  EXPECT_EQ(slurp(out / "metrics.csv"), csv.out);

  const auto ev = dpla("eval --preset toy --seed 1 --checkpoint '" + (out / "model.bin").string() + "' --out '" +
                       (dir_ / "ev").string() + "'");
  ASSERT_EQ(ev.status, 0) << ev.err;
  // Evaluation labels the record epoch 0 but scores the same held-out set.
  auto expected = dpla::eval::parse_record(records.back());
  expected.epoch = 0;
  EXPECT_EQ(lines_of(ev.out).back(), dpla::eval::format_record(expected));
  EXPECT_TRUE(fs::exists(dir_ / "ev" / "eval.txt"));
}

TEST_F(Cli, EvalMissingCheckpointWritesNothing) {
  const fs::path out = dir_ / "ev";
  const auto r = dpla("eval --preset toy --checkpoint '" + (dir_ / "nope.bin").string() + "' --out '" +
                      out.string() + "'");
  EXPECT_NE(r.status, 0);
  EXPECT_TRUE(r.out.empty());
  EXPECT_FALSE(fs::exists(out));
  EXPECT_NE(r.err.find("not found"), std::string::npos);
}

TEST_F(Cli, EvalRejectsShapeMismatch) {
  const fs::path out = dir_ / "run";
  ASSERT_EQ(dpla("run --preset toy --epochs 1 --out '" + out.string() + "'").status, 0);
  const auto r = dpla("eval --preset cifar100-like --checkpoint '" + (out / "model.bin").string() + "'");
  EXPECT_EQ(r.status, 2);
  EXPECT_TRUE(r.out.empty());
}

TEST_F(Cli, BadConfigExitsTwoWithLocation) {
  const fs::path cfg = dir_ / "bad.conf";
  std::ofstream(cfg) << "epochs = 2\ntau_1 = -1\n";
  const auto r = dpla("run --config '" + cfg.string() + "' --out '" + (dir_ / "o").string() + "'");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("bad.conf:2"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("tau_1"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "o"));
}

TEST_F(Cli, ConfigFileAndFlagsCombine) {
  const fs::path cfg = dir_ / "c.conf";
  std::ofstream(cfg) << "preset = toy\nepochs = 5\nhidden_dim = 16\nembed_dim = 8\n";
  const fs::path out = dir_ / "run";
  const auto r = dpla("run --config '" + cfg.string() + "' --epochs 1 --baseline --seed 9 --out '" + out.string() + "'");
  ASSERT_EQ(r.status, 0) << r.err;
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["config"]["epochs"], 1);
  EXPECT_EQ(manifest["config"]["baseline"], true);
  EXPECT_EQ(manifest["config"]["seed"], 9);
  EXPECT_EQ(manifest["config"]["hidden_dim"], 16);
}
