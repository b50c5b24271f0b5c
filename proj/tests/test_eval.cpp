#include <gtest/gtest.h>

#include <map>
#include <set>

#include "spaen/eval.hpp"
#include "eval_oracles.hpp"
#include "test_util.hpp"

namespace spaen {
namespace {

using testing::oracle_area;
using testing::oracle_predict;
using testing::oracle_top1;
using testing::random_tensor;
using testing::random_toy;
using testing::tiny_data;
using testing::tiny_net;
using testing::Toy;

constexpr int kTrials = 120;

TEST(Eval, HarmonicMeanReproducesPrintedValues) {
  const std::vector<std::array<double, 3>> rows{
      {24.9, 38.6, 30.3}, {34.7, 70.6, 46.6}, {23.3, 90.9, 37.1}, {13.7, 63.4, 22.6}};
  for (const auto& [ut, st, h] : rows) {
    EXPECT_NEAR(harmonic_mean(st, ut), h, 0.15);
    EXPECT_NEAR(harmonic_mean(st / 100.0, ut / 100.0) * 100.0, h, 0.15);
  }
  EXPECT_EQ(harmonic_mean(0.0, 0.0), 0.0);
  EXPECT_EQ(harmonic_mean(0.5, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(harmonic_mean(0.4, 0.4), 0.4);
}

TEST(Eval, ScoreIsDotProduct) {
  ClassEmbeddings onehot{{0, 1, 2}, Eigen::MatrixXd::Identity(3, 3)};
  const Tensor e = random_tensor({4, 3}, 1, -1.0, 1.0);
  const ScoreMatrix s = score(e, onehot, {0, 1, 2, 0});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s.scores(i, j), e.sample(i)[j]);
  }
  ClassEmbeddings wrong_dim{{0}, Eigen::MatrixXd::Ones(1, 5)};
  EXPECT_THROW(score(e, wrong_dim, {0, 0, 0, 0}), std::invalid_argument);
}

TEST(Eval, SingletonCandidateAlwaysWins) {
  ScoreMatrix s;
  s.scores = Eigen::MatrixXd::Random(5, 1);
  s.class_ids = {42};
  s.labels = {42, 42, 42, 42, 42};
  EXPECT_EQ(predict(s), std::vector<int>(5, 42));
}

TEST(Eval, TiesGoToSmallestClassId) {
  ScoreMatrix s;
  s.scores.resize(1, 3);
  s.scores << 0.5, 0.5, 0.1;
  s.class_ids = {9, 4, 1};
  s.labels = {1};
  EXPECT_EQ(predict(s), std::vector<int>{4});
}

TEST(Eval, PredictMatchesBruteForce) {
  for (int trial = 0; trial < kTrials; ++trial) {
    const Toy t = random_toy(trial);
    EXPECT_EQ(predict(t.scores), oracle_predict(t.scores, {}, 0.0)) << "trial " << trial;
  }
}

TEST(Eval, PerClassTop1IsMacroAverage) {
  EXPECT_DOUBLE_EQ(per_class_top1({0, 0, 0, 0}, {0, 0, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(per_class_top1({0, 0, 0, 0}, {0, 0, 0, 1}, {0, 1}), 0.5);
  EXPECT_THROW(per_class_top1({0}, {0}, {0, 7}), std::invalid_argument);
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(trial);
    std::uniform_int_distribution<int> label(0, 5), len(1, 40);
    const int n = len(rng);
    std::vector<int> pred, truth;
    for (int i = 0; i < n; ++i) {
      pred.push_back(label(rng));
      truth.push_back(label(rng));
    }
    EXPECT_NEAR(per_class_top1(pred, truth), oracle_top1(pred, truth), 1e-15);
  }
}

TEST(Eval, CalibratedExamples) {
  ScoreMatrix s;
  s.scores.resize(1, 2);
  s.scores << 0.8, 0.7;
  s.class_ids = {0, 1};
  s.labels = {1};
  EXPECT_EQ(predict_calibrated(s, {0}, 0.2), std::vector<int>{1});
  EXPECT_EQ(predict_calibrated(s, {0}, 0.0), std::vector<int>{0});
  EXPECT_THROW(predict_calibrated(s, {0, 1}, 0.1), std::invalid_argument);
}

TEST(Eval, ZeroCalibrationIsDirectStacking) {
  for (int trial = 0; trial < kTrials; ++trial) {
    const Toy t = random_toy(trial);
    EXPECT_EQ(predict_calibrated(t.scores, t.seen, 0.0), predict(t.scores));
  }
}

TEST(Eval, LargeCalibrationPredictsOnlyUnseen) {
  for (int trial = 0; trial < 20; ++trial) {
    const Toy t = random_toy(trial);
    const std::set<int> seen(t.seen.begin(), t.seen.end());
    const double spread = t.scores.scores.maxCoeff() - t.scores.scores.minCoeff();
    for (int p : predict_calibrated(t.scores, t.seen, spread + 1e-6)) EXPECT_FALSE(seen.count(p));
  }
}

TEST(Eval, SucCurveMatchesBruteForce) {
  for (int trial = 0; trial < kTrials; ++trial) {
    const Toy t = random_toy(trial);
    const std::set<int> seen(t.seen.begin(), t.seen.end());
    const auto grid = default_gamma_grid(t.scores, 41);
    const auto curve = suc_curve(t.scores, t.seen, grid);
    ASSERT_EQ(curve.size(), grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const auto pred = oracle_predict(t.scores, seen, grid[g]);
      std::vector<int> ps, ts, pu, tu;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool s = seen.count(t.scores.labels[i]);
        (s ? ps : pu).push_back(pred[i]);
        (s ? ts : tu).push_back(t.scores.labels[i]);
      }
      EXPECT_EQ(curve[g].gamma, grid[g]);
      EXPECT_NEAR(curve[g].acc_st, oracle_top1(ps, ts), 1e-15);
      EXPECT_NEAR(curve[g].acc_ut, oracle_top1(pu, tu), 1e-15);
    }
  }
}

TEST(Eval, SucCurveIsMonotoneAndHitsTheAxes) {
  for (int trial = 0; trial < kTrials; ++trial) {
    const Toy t = random_toy(trial);
    const auto curve = suc_curve(t.scores, t.seen, default_gamma_grid(t.scores));
    for (std::size_t i = 1; i < curve.size(); ++i) {
      ASSERT_GE(curve[i].acc_ut, curve[i - 1].acc_ut);
      ASSERT_LE(curve[i].acc_st, curve[i - 1].acc_st);
    }
    EXPECT_EQ(curve.front().acc_ut, 0.0);
    EXPECT_EQ(curve.back().acc_st, 0.0);
    const auto zero = std::find_if(curve.begin(), curve.end(),
                                   [](const SucPoint& p) { return p.gamma == 0.0; });
    ASSERT_NE(zero, curve.end());
  }
}

TEST(Eval, AusucMatchesPolygonOracle) {
  for (int trial = 0; trial < kTrials; ++trial) {
    const Toy t = random_toy(trial);
    const auto curve = suc_curve(t.scores, t.seen, default_gamma_grid(t.scores));
    const double a = ausuc(curve);
    EXPECT_NEAR(a, oracle_area(curve), 1e-12) << "trial " << trial;
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Eval, AusucExamples) {
  // Perfect classifier: the curve passes through (1, 1).
  EXPECT_DOUBLE_EQ(ausuc({{-1, 0.0, 1.0}, {0, 1.0, 1.0}, {1, 1.0, 0.0}}), 1.0);
  EXPECT_DOUBLE_EQ(ausuc({{-1, 0.0, 1.0}, {1, 1.0, 0.0}}), 0.5);
  EXPECT_THROW(ausuc({{0, 0.5, 0.5}}), std::invalid_argument);
}

TEST(Eval, SingletonUnseenClassIsAlwaysRightInUnseenSetting) {
  const auto t = tiny_data(3, 1, 1);
  const ModelBundle b = build_models(tiny_net(Variant::kClsOnly));
  EXPECT_EQ(evaluate(b, t.dataset, t.splits, Setting::kUnseenUnseen), 1.0);
}

TEST(Eval, EvaluateAllIsConsistent) {
  const auto t = tiny_data();
  const ModelBundle b = build_models(tiny_net(Variant::kClsOnly, 8));
  const MetricsReport m = evaluate_all(b, t.dataset, t.splits);
  EXPECT_DOUBLE_EQ(m.h, harmonic_mean(m.acc_st, m.acc_ut));
  EXPECT_EQ(m.acc_ut, evaluate(b, t.dataset, t.splits, Setting::kUnseenAll));
  EXPECT_EQ(m.acc_st, evaluate(b, t.dataset, t.splits, Setting::kSeenAll));
  const auto zero = std::find_if(m.suc.begin(), m.suc.end(),
                                 [](const SucPoint& p) { return p.gamma == 0.0; });
  ASSERT_NE(zero, m.suc.end());
  EXPECT_EQ(zero->acc_ut, m.acc_ut);
  EXPECT_EQ(zero->acc_st, m.acc_st);
  EXPECT_GE(m.ausuc, 0.0);
  EXPECT_LE(m.ausuc, 1.0);
  EXPECT_EQ(setting_name(Setting::kUnseenAll), "U->T");
}

}  // namespace
}  // namespace spaen
