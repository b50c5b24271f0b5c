#include <gtest/gtest.h>

#include <fstream>

#include "spaen/ablations.hpp"
#include "test_util.hpp"

namespace spaen {
namespace {

using testing::TempDir;
using testing::tiny_data;
using testing::tiny_net;

AblationSpec quick_spec(Variant v, int epochs = 2) {
  AblationSpec s;
  s.variant = v;
  s.net = tiny_net(v);
  s.epochs = epochs;
  s.seed = 4;
  s.hyper.batch_size = 4;
  s.hyper.learning_rate = 1e-3;
  return s;
}

std::size_t line_count(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

TEST(Ablations, VariantWiring) {
  const TrainOptions sp = variant_options(Variant::kSpAen, {});
  EXPECT_TRUE(sp.step.terms.adv && sp.step.terms.rec && sp.step.terms.cls);
  const TrainOptions cls = variant_options(Variant::kClsOnly, {});
  EXPECT_FALSE(cls.step.terms.rec || cls.step.terms.adv);
  EXPECT_FALSE(cls.step.mask.f || cls.step.mask.g);
  const TrainOptions sae = variant_options(Variant::kSae, {});
  EXPECT_TRUE(sae.step.terms.rec);
  EXPECT_FALSE(sae.step.terms.adv);
  EXPECT_TRUE(sae.step.mask.e_head && sae.step.mask.g);
  const TrainOptions split = variant_options(Variant::kSplitBranch, {});
  EXPECT_TRUE(split.step.mask.merge);
}

TEST(Ablations, ClsOnlyHasNoReconstructionError) {
  const auto t = tiny_data();
  const VariantRun run = run_variant(quick_spec(Variant::kClsOnly), t.dataset, t.splits);
  EXPECT_FALSE(run.row.recon_mse.has_value());
  EXPECT_EQ(run.log.size(), 2u);
}

TEST(Ablations, DirectMapFreezesTheEmbedderInPhaseTwo) {
  const auto t = tiny_data();
  const VariantRun run = run_variant(quick_spec(Variant::kDirectMap), t.dataset, t.splits);
  ASSERT_TRUE(run.phase1.has_value());
  EXPECT_EQ(run.bundle.e_head.param_vector(), run.phase1->e_head.param_vector());
  EXPECT_NE(run.bundle.g.param_vector(), run.phase1->g.param_vector());
  EXPECT_EQ(run.log.size(), 4u);
  ASSERT_TRUE(run.row.recon_mse.has_value());
}

TEST(Ablations, MergeNormsAtInitialization) {
  const std::size_t d = 24;
  ModelBundle b = build_models(tiny_net(Variant::kSplitBranch, 7, d));
  const MergeNorms n = splitbranch_merge_weights(b);
  const double expected = std::sqrt(2.0 * static_cast<double>(d));
  EXPECT_NEAR(n.cls_branch, expected, 0.25 * expected);
  EXPECT_NEAR(n.rec_branch, expected, 0.25 * expected);
  auto w = b.merge->cls_branch.mutable_params();
  std::fill(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d * d), 0.0);
  EXPECT_EQ(splitbranch_merge_weights(b).cls_branch, 0.0);
  EXPECT_THROW(splitbranch_merge_weights(build_models(tiny_net(Variant::kSae))),
               std::invalid_argument);
}

TEST(Ablations, ReconstructionMseOracle) {
  const auto t = tiny_data();
  const Tensor images = unseen_test_images(t.dataset, t.splits);
  const ModelBundle b = build_models(tiny_net(Variant::kSae, 3));
  const Tensor recon = reconstruct(b, images);
  double sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) sum += std::pow(recon.data[i] - images.data[i], 2);
  EXPECT_NEAR(*reconstruction_mse(b, images), sum / static_cast<double>(images.size()), 1e-14);

  ModelBundle half = build_models(tiny_net(Variant::kSpAen, 3));
  for (double& p : half.g.mutable_params()) p = 0.0;
  const Tensor flat = reconstruct(half, images);
  for (double v : flat.data) ASSERT_EQ(v, 0.5);
  double var = 0.0;
  for (double v : images.data) var += (v - 0.5) * (v - 0.5);
  EXPECT_NEAR(*reconstruction_mse(half, images), var / static_cast<double>(images.size()), 1e-14);

  EXPECT_FALSE(reconstruction_mse(build_models(tiny_net(Variant::kClsOnly)), images).has_value());
  const ModelBundle cls = build_models(tiny_net(Variant::kClsOnly));
  const auto entries = compare_reconstruction({&b, &cls}, images);
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].variant, "sae");
  EXPECT_FALSE(entries[1].mse.has_value());
}

TEST(Ablations, ReconstructionSheetLayout) {
  const auto t = tiny_data();
  const Tensor images = unseen_test_images(t.dataset, t.splits, 3);
  EXPECT_EQ(images.batch(), 3u);
  const Image sheet = reconstruction_sheet(build_models(tiny_net()), images);
  EXPECT_EQ(sheet.width, 3u * 16u);
  EXPECT_EQ(sheet.height, 2u * 16u);
}

TEST(Ablations, RunAblationWritesArtifacts) {
  const auto t = tiny_data();
  TempDir dir("ablation");
  std::vector<AblationSpec> specs;
  for (auto v : {Variant::kSpAen, Variant::kClsOnly, Variant::kSplitBranch}) {
    specs.push_back(quick_spec(v, 1));
  }
  const AblationReport r = run_ablation(specs, t.dataset, t.splits, dir.path());
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(line_count(dir.path() / "ablation_report.csv"), 4u);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "recon_spaen.ppm"));
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "recon_cls-only.ppm"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "splitbranch_merge.csv"));
  EXPECT_TRUE(r.rows[2].merge_norms.has_value());
  std::ifstream in(dir.path() / "ablation_report.csv");
  std::string header, first, second;
  std::getline(in, header);
  std::getline(in, first);
  std::getline(in, second);
  EXPECT_EQ(header, "variant,acc_UU,acc_UT,acc_ST,H,recon_mse");
  EXPECT_EQ(second.back(), ',');
}

}  // namespace
}  // namespace spaen
