#include "spaen/ablations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace spaen {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kChunk = 128;
constexpr std::size_t kSheetImages = 10;

TrainOptions base_options(const AblationSpec& spec, AccessLog* log) {
  TrainOptions o;
  o.hyper = spec.hyper;
  o.epochs = spec.epochs;
  o.seed = spec.seed;
  o.access_log = log;
  return o;
}

double frobenius(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TrainOptions variant_options(Variant variant, TrainOptions o) {
  switch (variant) {
    case Variant::kSpAen:
      o.step.terms = {true, true, true};
      o.step.mask = {true, true, true, true};
      break;
    case Variant::kClsOnly:
    case Variant::kDirectMap:
      o.step.terms = {true, false, false};
      o.step.mask = {true, false, false, false};
      break;
    case Variant::kSae:
      o.step.terms = {true, true, false};
      o.step.mask = {true, false, true, false};
      break;
    case Variant::kSplitBranch:
      o.step.terms = {true, true, false};
      o.step.mask = {true, false, true, true};
      break;
  }
  return o;
}

VariantRun run_variant(const AblationSpec& spec, const Dataset& dataset,
                       const SplitSpec& splits, AccessLog* log) {
  NetConfig net = spec.net;
  net.variant = spec.variant;
  VariantRun run;
  const TrainOptions options = variant_options(spec.variant, base_options(spec, log));

  if (spec.variant == Variant::kDirectMap) {
    TrainResult phase1 = train(dataset, splits, net, options);
    run.phase1 = phase1.bundle;
    run.log = phase1.report.rows;

    TrainOptions phase2 = base_options(spec, log);
    phase2.step.terms = {false, true, false};
    phase2.step.mask = {false, false, true, false};
    phase2.monitor = Monitor::kTrainingLoss;
    phase2.restore_best = false;
    TrainState state = TrainState::fresh(std::move(phase1.bundle), spec.hyper, spec.seed);
    const TrainReport r2 = train(state, dataset, splits, phase2);
    run.log.insert(run.log.end(), r2.rows.begin(), r2.rows.end());
    run.bundle = std::move(state.bundle);
  } else {
    TrainResult result = train(dataset, splits, net, options);
    run.bundle = std::move(result.bundle);
    run.log = std::move(result.report.rows);
  }

  run.row.variant = spec.variant;
  run.row.metrics = evaluate_all(run.bundle, dataset, splits);
  run.row.recon_mse = reconstruction_mse(run.bundle, unseen_test_images(dataset, splits));
  if (spec.variant == Variant::kSplitBranch) {
    run.row.merge_norms = splitbranch_merge_weights(run.bundle);
  }
  return run;
}

std::optional<double> reconstruction_mse(const ModelBundle& bundle, const Tensor& images) {
  if (!has_decoder(bundle.variant())) return std::nullopt;
  const std::size_t n = images.batch();
  if (n == 0) throw std::invalid_argument("reconstruction_mse: no images");
  const std::size_t s = images.sample_size();
  double sum = 0.0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    Shape shape = images.shape;
    shape[0] = end - start;
    Tensor chunk(shape, std::vector<double>(
                            images.data.begin() + static_cast<std::ptrdiff_t>(start * s),
                            images.data.begin() + static_cast<std::ptrdiff_t>(end * s)));
    const Tensor recon = reconstruct(bundle, chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const double diff = recon.data[i] - chunk.data[i];
      sum += diff * diff;
    }
  }
  return sum / static_cast<double>(images.size());
}

std::vector<ReconstructionEntry> compare_reconstruction(
    const std::vector<const ModelBundle*>& bundles, const Tensor& unseen_test_images) {
  std::vector<ReconstructionEntry> out;
  for (const ModelBundle* b : bundles) {
    out.push_back({variant_name(b->variant()), reconstruction_mse(*b, unseen_test_images)});
  }
  return out;
}

MergeNorms splitbranch_merge_weights(const ModelBundle& bundle) {
  if (bundle.variant() != Variant::kSplitBranch || !bundle.merge) {
    throw std::invalid_argument("splitbranch_merge_weights: bundle is " +
                                variant_name(bundle.variant()) + ", not splitbranch");
  }
  const SplitMerge& m = *bundle.merge;
  const std::size_t d = bundle.config.embedding_dim;
  MergeNorms norms;
  norms.cls_branch = frobenius(m.cls_branch.params().subspan(0, d * d));
  norms.rec_branch = frobenius(m.rec_branch.params().subspan(0, d * d));
  // fuse weights are d x 2d, row-major; the first d columns read the cls branch.
  const auto w = m.fuse.params();
  double a = 0.0, b = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < 2 * d; ++c) {
      const double v = w[r * 2 * d + c];
      (c < d ? a : b) += v * v;
    }
  }
  norms.fuse_cls = std::sqrt(a);
  norms.fuse_rec = std::sqrt(b);
  return norms;
}

Tensor unseen_test_images(const Dataset& dataset, const SplitSpec& splits, std::size_t limit) {
  std::vector<const Image*> ptrs;
  for (std::size_t id : splits.unseen_test_ids) {
    if (limit && ptrs.size() >= limit) break;
    ptrs.push_back(&dataset.images[id]);
  }
  if (ptrs.empty()) throw std::invalid_argument("unseen_test_images: no unseen test images");
  return stack_images(ptrs);
}

Image reconstruction_sheet(const ModelBundle& bundle, const Tensor& images) {
  const Shape shape = images.sample_shape();
  const Tensor recon = reconstruct(bundle, images);
  std::vector<Image> tiles;
  for (std::size_t i = 0; i < images.batch(); ++i) tiles.push_back(image_from_sample(images.sample(i), shape));
  for (std::size_t i = 0; i < recon.batch(); ++i) tiles.push_back(image_from_sample(recon.sample(i), shape));
  return contact_sheet(tiles, images.batch());
}

void write_ablation_report(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,acc_UU,acc_UT,acc_ST,H,recon_mse\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,", variant_name(r.variant).c_str(),
                  r.metrics.acc_uu, r.metrics.acc_ut, r.metrics.acc_st, r.metrics.h);
    out << buf;
    if (r.recon_mse) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.recon_mse);
      out << buf;
    }
    out << "\n";
  }
}

AblationReport run_ablation(const std::vector<AblationSpec>& specs, const Dataset& dataset,
                            const SplitSpec& splits, const fs::path& out_dir) {
  AblationReport report;
  if (!out_dir.empty()) fs::create_directories(out_dir);
  const Tensor sheet_images = unseen_test_images(dataset, splits, kSheetImages);
  for (const auto& spec : specs) {
    VariantRun run = run_variant(spec, dataset, splits);
    if (!out_dir.empty()) {
      const std::string name = variant_name(spec.variant);
      if (has_decoder(spec.variant)) {
        write_ppm(out_dir / ("recon_" + name + ".ppm"), reconstruction_sheet(run.bundle, sheet_images));
      }
      if (run.row.merge_norms) {
        std::ofstream out(out_dir / "splitbranch_merge.csv");
        const MergeNorms& m = *run.row.merge_norms;
        out << "cls_branch,rec_branch,fuse_cls,fuse_rec\n"
            << m.cls_branch << "," << m.rec_branch << "," << m.fuse_cls << "," << m.fuse_rec
            << "\n";
      }
    }
    report.rows.push_back(run.row);
  }
  if (!out_dir.empty()) write_ablation_report(out_dir / "ablation_report.csv", report.rows);
  return report;
}

}  // namespace spaen
