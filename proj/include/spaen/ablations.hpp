#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spaen/data.hpp"
#include "spaen/eval.hpp"
#include "spaen/nets.hpp"
#include "spaen/objectives.hpp"
#include "spaen/trainer.hpp"

namespace spaen {

struct AblationSpec {
  Variant variant = Variant::kSpAen;
  HyperParams hyper;
  NetConfig net;  // net.variant is overridden by `variant`
  int epochs = 300;
  std::uint64_t seed = 0;
};

// Affine weight norms of the SplitBranch merge.
struct MergeNorms {
  double cls_branch = 0.0;    // branch affine on the classification half
  double rec_branch = 0.0;    // branch affine on the reconstruction half
  double fuse_cls = 0.0;      // fuse columns reading the classification branch
  double fuse_rec = 0.0;      // fuse columns reading the reconstruction branch
};

struct AblationRow {
  Variant variant = Variant::kSpAen;
  MetricsReport metrics;
  std::optional<double> recon_mse;  // absent without a decoder
  std::optional<MergeNorms> merge_norms;
};

struct VariantRun {
  ModelBundle bundle;
  AblationRow row;
  std::vector<EpochRow> log;
  // DirectMap: the bundle at the end of the classification phase.
  std::optional<ModelBundle> phase1;
};

// Sets the objective terms and update mask of a variant on `base`. For
// DirectMap this is the classification phase.
TrainOptions variant_options(Variant variant, TrainOptions base);

// Trains one variant with its wiring and evaluates it on the test splits.
VariantRun run_variant(const AblationSpec& spec, const Dataset& dataset,
                       const SplitSpec& splits, AccessLog* log = nullptr);

// Mean squared pixel error per pixel-channel of the variant's decoder path;
// nullopt for a variant without a decoder.
std::optional<double> reconstruction_mse(const ModelBundle& bundle, const Tensor& images);

struct ReconstructionEntry {
  std::string variant;
  std::optional<double> mse;
};

std::vector<ReconstructionEntry> compare_reconstruction(
    const std::vector<const ModelBundle*>& bundles, const Tensor& unseen_test_images);

// Frobenius norm of the classification-branch affine weights (bias excluded)
// plus the companion norms. Throws std::invalid_argument for other variants.
MergeNorms splitbranch_merge_weights(const ModelBundle& bundle);

struct AblationReport {
  std::vector<AblationRow> rows;
};

// Runs every spec on the same data and writes ablation_report.csv,
// recon_<variant>.ppm contact sheets (inputs on top, reconstructions below)
// and, for SplitBranch, splitbranch_merge.csv into out_dir when non-empty.
AblationReport run_ablation(const std::vector<AblationSpec>& specs, const Dataset& dataset,
                            const SplitSpec& splits, const std::filesystem::path& out_dir);

void write_ablation_report(const std::filesystem::path& path,
                           const std::vector<AblationRow>& rows);

// Unseen-test images shown in contact sheets.
Tensor unseen_test_images(const Dataset& dataset, const SplitSpec& splits,
                          std::size_t limit = 0);

// Top row: inputs; bottom row: the bundle's reconstructions.
Image reconstruction_sheet(const ModelBundle& bundle, const Tensor& images);

}  // namespace spaen
