#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "spaen/checkpoint.hpp"
#include "spaen/cli.hpp"
#include "spaen/eval.hpp"
#include "test_util.hpp"

namespace spaen {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

int run(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new TempDir("cli");
    ASSERT_EQ(run({"generate-data", "--out", data_dir().string(), "--seed", "2", "--classes",
                   "6", "--attributes", "6", "--per-class", "6", "--designated-unseen", "2",
                   "--unseen", "2", "--val", "1"}),
              kExitOk);
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }
  static fs::path data_dir() { return root_->path() / "data"; }
  static fs::path out(const std::string& name) { return root_->path() / name; }

  static TempDir* root_;
};

TempDir* CliTest::root_ = nullptr;

TEST_F(CliTest, GenerateDataIsDeterministic) {
  ASSERT_EQ(run({"generate-data", "--out", out("again").string(), "--seed", "2", "--classes",
                 "6", "--attributes", "6", "--per-class", "6", "--designated-unseen", "2",
                 "--unseen", "2", "--val", "1"}),
            kExitOk);
  for (const char* f : {"classes.csv", "splits.csv", "images/0.ppm", "images/35.ppm"}) {
    EXPECT_EQ(slurp(data_dir() / f), slurp(out("again") / f)) << f;
  }
  EXPECT_TRUE(fs::exists(data_dir() / "config.json"));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  std::string err;
  EXPECT_EQ(run({"train", "--dataset", data_dir().string()}, &err), kExitUsage);
  EXPECT_NE(err.find("--out"), std::string::npos) << err;
  EXPECT_EQ(run({"train", "--dataset", data_dir().string(), "--out", out("bad").string(),
                 "--variant", "vae"},
                &err),
            kExitUsage);
  EXPECT_NE(err.find("vae"), std::string::npos) << err;
  EXPECT_EQ(run({"train", "--dataset", data_dir().string(), "--out", out("bad").string(),
                 "--margin", "-1"}),
            kExitUsage);
  EXPECT_EQ(run({"frobnicate"}), kExitUsage);
  EXPECT_EQ(run({}), kExitUsage);
  EXPECT_EQ(run({"--help"}), kExitOk);
}

TEST_F(CliTest, MissingDatasetIsARuntimeFailure) {
  std::string err;
  EXPECT_EQ(run({"train", "--dataset", out("nowhere").string(), "--out", out("x").string()}, &err),
            kExitFailure);
  EXPECT_FALSE(err.empty());
}

TEST_F(CliTest, ZeroEpochsWritesAnEmptyLog) {
  ASSERT_EQ(run({"train", "--dataset", data_dir().string(), "--out", out("zero").string(),
                 "--epochs", "0"}),
            kExitOk);
  const auto log = lines(out("zero") / "train_log.csv");
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0], "epoch,cls,feat,pixel,rec,adv_E,adv_D,total,val_H,lr");
  EXPECT_TRUE(fs::exists(out("zero") / "checkpoint" / "manifest.json"));
}

TEST_F(CliTest, EvalMatchesInProcessMetrics) {
  ASSERT_EQ(run({"train", "--dataset", data_dir().string(), "--out", out("cls").string(),
                 "--variant", "cls-only", "--epochs", "2", "--seed", "3"}),
            kExitOk);
  ASSERT_EQ(run({"eval", "--dataset", data_dir().string(), "--checkpoint",
                 (out("cls") / "checkpoint").string(), "--out", out("cls_eval").string()}),
            kExitOk);
  const auto [ds, splits] = load_dataset(data_dir());
  const MetricsReport m = evaluate_all(load_bundle(out("cls") / "checkpoint"), ds, splits);
  const auto rows = lines(out("cls_eval") / "metrics.csv");
  ASSERT_EQ(rows.size(), 6u);
  auto value = [&](std::size_t i) { return std::stod(rows[i].substr(rows[i].find(',') + 1)); };
  EXPECT_EQ(value(1), m.acc_uu);
  EXPECT_EQ(value(2), m.acc_ut);
  EXPECT_EQ(value(3), m.acc_st);
  EXPECT_EQ(value(4), m.h);
  EXPECT_EQ(value(5), m.ausuc);
  EXPECT_EQ(lines(out("cls_eval") / "suc.csv").size(), m.suc.size() + 1);

  ASSERT_EQ(run({"eval", "--dataset", data_dir().string(), "--checkpoint",
                 (out("cls") / "checkpoint").string(), "--out", out("cls_eval3").string(),
                 "--gamma-grid", "-1:1:3"}),
            kExitOk);
  EXPECT_EQ(lines(out("cls_eval3") / "suc.csv").size(), 4u);
}

TEST_F(CliTest, TrainLogHasOneRowPerEpoch) {
  ASSERT_EQ(run({"train", "--dataset", data_dir().string(), "--out", out("sp").string(),
                 "--epochs", "2", "--seed", "1", "--batch-size", "8"}),
            kExitOk);
  const auto log = lines(out("sp") / "train_log.csv");
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[1].substr(0, 2), "1,");
  ASSERT_EQ(run({"train", "--dataset", data_dir().string(), "--out", out("sp").string(),
                 "--epochs", "3", "--seed", "1", "--batch-size", "8", "--resume"}),
            kExitOk);
  EXPECT_EQ(lines(out("sp") / "train_log.csv").size(), 4u);
}

TEST_F(CliTest, AnalyzeAttributes) {
  ASSERT_EQ(run({"analyze-attributes", "--dataset", data_dir().string(), "--out",
                 out("attrs").string()}),
            kExitOk);
  EXPECT_EQ(lines(out("attrs") / "variance_profile.csv").size(), 7u);
  const double cosine = std::stod(slurp(out("attrs") / "variance_cosine.txt"));
  EXPECT_GT(cosine, 0.0);
  EXPECT_LT(cosine, 1.0);
  EXPECT_EQ(run({"analyze-attributes", "--out", out("attrs2").string()}), kExitUsage);
}

TEST(ParseNumberList, Forms) {
  EXPECT_EQ(parse_number_list("0,0.5,2"), (std::vector<double>{0.0, 0.5, 2.0}));
  EXPECT_EQ(parse_number_list("0:1:3"), (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_THROW(parse_number_list("0:1"), std::invalid_argument);
  EXPECT_THROW(parse_number_list("a,b"), std::invalid_argument);
  EXPECT_THROW(parse_number_list(""), std::invalid_argument);
}

}  // namespace
}  // namespace spaen
