#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "spaen/data.hpp"
#include "spaen/nets.hpp"
#include "spaen/spaces.hpp"

namespace spaen {

enum class ClsMode {
  kFullSum,  // sum over every wrong label
  kSampled,  // one uniformly drawn wrong label per image
};

enum class AdvForm {
  kWgan,  // critic minimizes mean D(fake) - mean D(real), weights clipped
  kLog,   // log D(F(x)) + log(1 - D(E(x'))) with a sigmoid on D
};

struct HyperParams {
  double margin = 0.1;
  double lambda_p = 1.0;
  double alpha = 10.0;
  double beta = 5.0;
  double clip_c = 0.01;
  int n_critic = 5;
  double learning_rate = 1e-4;
  // Critic step size relative to learning_rate.
  double critic_lr_scale = 1.0;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  ClsMode cls_mode = ClsMode::kSampled;
  AdvForm adv_form = AdvForm::kWgan;
  int patience = 10;
  double min_lr = 1e-6;

  void validate() const;
};

// Batch means of each term. rec = feat + lambda_p * pixel and
// total = cls + alpha * rec + beta * adv_E.
struct LossBreakdown {
  double cls = 0.0;
  double feat = 0.0;
  double pixel = 0.0;
  double rec = 0.0;
  double adv_E = 0.0;
  double adv_D = 0.0;
  double total = 0.0;
};

// Unit-norm class embeddings, one row per candidate class.
struct ClassEmbeddings {
  std::vector<int> class_ids;
  Eigen::MatrixXd vectors;

  // Column index of a class, or -1.
  int index_of(int class_id) const;
  std::size_t size() const { return class_ids.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors.cols()); }
};

ClassEmbeddings class_embeddings(const Eigen::MatrixXd& class_attributes,
                                 const std::vector<int>& class_ids);
ClassEmbeddings class_embeddings(const DatasetAccessor& data,
                                 const std::vector<int>& class_ids);

// Ranking loss for one image embedding against its class and a list of
// wrong classes. Similarity is the raw dot product.
double cls_loss(std::span<const double> embedding, const ClassEmbedding& correct,
                const std::vector<ClassEmbedding>& wrong, double margin, ClsMode mode,
                std::uint64_t seed = 0);

// Squared L2 distance between two images.
double pixel_loss(const Image& recon, const Image& target);
// Squared L2 distance between phi features of two images.
double feat_loss(const Image& recon, const Image& target, const ParamMap& phi);
double rec_loss(const Image& recon, const Image& target, const ParamMap& phi,
                double lambda_p);

// real: F(x) embeddings, fake: E(x') embeddings, both N x d.
double adv_critic_loss(const ParamMap& critic, const Tensor& real, const Tensor& fake,
                       AdvForm form = AdvForm::kWgan);
double adv_embedder_loss(const ParamMap& critic, const Tensor& fake,
                         AdvForm form = AdvForm::kWgan);

// Training batch. The two caches are optional; when empty they are computed
// from `images` with the (frozen) E-trunk and phi.
struct Batch {
  Tensor images;
  std::vector<int> labels;
  Tensor trunk_features;
  Tensor phi_targets;
};

// Per-map parameter gradients, each sized like the map's parameters.
struct BundleGrads {
  Buffer e_head, f, g, d, merge_cls, merge_rec, merge_fuse;

  static BundleGrads zeros_like(const ModelBundle& bundle);
};

struct ObjectiveTerms {
  bool cls = true;
  bool rec = true;
  bool adv = true;
};

// Evaluates the variant's generator-side objective on a batch. Labels must
// all be in `targets` (seen training classes). sample_seed drives the wrong
// label draw in sampled mode.
LossBreakdown full_objective(const ModelBundle& bundle, const Batch& batch,
                             const ClassEmbeddings& targets, const HyperParams& hyper,
                             std::uint64_t sample_seed = 0);

// Same evaluation, also accumulating parameter gradients of
// cls + alpha * rec + beta * adv_E (restricted to `terms`) into grads. The
// critic is held constant.
LossBreakdown generator_gradients(const ModelBundle& bundle, const Batch& batch,
                                  const ClassEmbeddings& targets, const HyperParams& hyper,
                                  std::uint64_t sample_seed, BundleGrads* grads,
                                  ObjectiveTerms terms = {});

// Critic loss and, when grad is non-null, its gradient w.r.t. the critic's
// parameters (added into *grad).
double critic_gradients(const ParamMap& critic, const Tensor& real, const Tensor& fake,
                        AdvForm form, Buffer* grad);

}  // namespace spaen
