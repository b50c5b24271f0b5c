#include "spaen/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spaen {

void HyperParams::validate() const {
  if (!(margin > 0.0)) throw std::invalid_argument("HyperParams: margin must be > 0");
  if (!(lambda_p >= 0.0)) throw std::invalid_argument("HyperParams: lambda_p < 0");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw std::invalid_argument("HyperParams: alpha and beta must be >= 0");
  }
  if (!(clip_c > 0.0)) throw std::invalid_argument("HyperParams: clip_c must be > 0");
  if (n_critic < 0) throw std::invalid_argument("HyperParams: n_critic < 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("HyperParams: learning rate <= 0");
  if (!(critic_lr_scale > 0.0)) {
    throw std::invalid_argument("HyperParams: critic_lr_scale must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("HyperParams: momentum outside [0, 1)");
  }
  if (batch_size == 0) throw std::invalid_argument("HyperParams: batch_size must be > 0");
  if (patience < 1) throw std::invalid_argument("HyperParams: patience must be >= 1");
  if (!(min_lr > 0.0)) throw std::invalid_argument("HyperParams: min_lr must be > 0");
}

int ClassEmbeddings::index_of(int class_id) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), class_id);
  return it == class_ids.end() ? -1 : static_cast<int>(it - class_ids.begin());
}

ClassEmbeddings class_embeddings(const Eigen::MatrixXd& class_attributes,
                                 const std::vector<int>& class_ids) {
  ClassEmbeddings out;
  out.class_ids = class_ids;
  out.vectors.resize(static_cast<Eigen::Index>(class_ids.size()), class_attributes.cols());
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    out.vectors.row(static_cast<Eigen::Index>(i)) = class_attributes.row(class_ids[i]);
  }
  out.vectors = normalize_rows(out.vectors);
  return out;
}

ClassEmbeddings class_embeddings(const DatasetAccessor& data,
                                 const std::vector<int>& class_ids) {
  ClassEmbeddings out;
  out.class_ids = class_ids;
  out.vectors.resize(static_cast<Eigen::Index>(class_ids.size()), data.num_attributes());
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    const auto v = data.class_embedding(class_ids[i]);
    for (std::size_t j = 0; j < v.size(); ++j) {
      out.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    }
  }
  return out;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cls_loss: embedding dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_same_shape(const Image& a, const Image& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_batch(const Tensor& t, const char* who) {
  if (t.batch() == 0) throw std::invalid_argument(std::string(who) + ": empty batch");
}

Tensor as_batch(const Image& img) { return Tensor({1, img.channels, img.height, img.width}, img.pixels); }

}  // namespace

double cls_loss(std::span<const double> embedding, const ClassEmbedding& correct,
                const std::vector<ClassEmbedding>& wrong, double margin, ClsMode mode,
                std::uint64_t seed) {
  if (wrong.empty()) throw std::invalid_argument("cls_loss: no wrong labels");
  const double pos = dot(embedding, correct.vector);
  auto term = [&](const ClassEmbedding& w) {
    return std::max(0.0, margin - pos + dot(embedding, w.vector));
  };
  if (mode == ClsMode::kSampled) {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, wrong.size() - 1);
    return term(wrong[pick(rng)]);
  }
  double total = 0.0;
  for (const auto& w : wrong) total += term(w);
  return total;
}

double pixel_loss(const Image& recon, const Image& target) {
  require_same_shape(recon, target, "pixel_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < recon.pixels.size(); ++i) {
    const double diff = recon.pixels[i] - target.pixels[i];
    s += diff * diff;
  }
  return s;
}

double feat_loss(const Image& recon, const Image& target, const ParamMap& phi) {
  require_same_shape(recon, target, "feat_loss");
  const Tensor a = phi.forward(as_batch(recon));
  const Tensor b = phi.forward(as_batch(target));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a.data[i] - b.data[i];
    s += diff * diff;
  }
  return s;
}

double rec_loss(const Image& recon, const Image& target, const ParamMap& phi,
                double lambda_p) {
  return feat_loss(recon, target, phi) + lambda_p * pixel_loss(recon, target);
}

double critic_gradients(const ParamMap& critic, const Tensor& real, const Tensor& fake,
                        AdvForm form, Buffer* grad) {
  require_batch(real, "adv_critic_loss");
  require_batch(fake, "adv_critic_loss");
  ParamMap::Trace real_trace, fake_trace;
  const Tensor zr = critic.forward(real, grad ? &real_trace : nullptr);
  const Tensor zf = critic.forward(fake, grad ? &fake_trace : nullptr);
  const double nr = static_cast<double>(real.batch());
  const double nf = static_cast<double>(fake.batch());
  Tensor gr(zr.shape), gf(zf.shape);
  double value = 0.0;
  if (form == AdvForm::kWgan) {
    for (std::size_t i = 0; i < zf.size(); ++i) {
      value += zf.data[i] / nf;
      gf.data[i] = 1.0 / nf;
    }
    for (std::size_t i = 0; i < zr.size(); ++i) {
      value -= zr.data[i] / nr;
      gr.data[i] = -1.0 / nr;
    }
  } else {
    // The critic maximizes mean log s(z_real) + mean log(1 - s(z_fake)); this
    // returns the negated objective it minimizes.
    for (std::size_t i = 0; i < zr.size(); ++i) {
      value += softplus(-zr.data[i]) / nr;
      gr.data[i] = -(1.0 - sigmoid(zr.data[i])) / nr;
    }
    for (std::size_t i = 0; i < zf.size(); ++i) {
      value += softplus(zf.data[i]) / nf;
      gf.data[i] = sigmoid(zf.data[i]) / nf;
    }
  }
  if (grad) {
    if (grad->size() != critic.param_count()) grad->assign(critic.param_count(), 0.0);
    critic.backward(real_trace, gr, *grad);
    critic.backward(fake_trace, gf, *grad);
  }
  return value;
}

double adv_critic_loss(const ParamMap& critic, const Tensor& real, const Tensor& fake,
                       AdvForm form) {
  return critic_gradients(critic, real, fake, form, nullptr);
}

namespace {

// Embedder-side adversarial value and dL/dz for critic outputs z.
double embedder_term(const Tensor& z, AdvForm form, Tensor* grad_z) {
  const double n = static_cast<double>(z.batch());
  double value = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (form == AdvForm::kWgan) {
      value -= z.data[i] / n;
      if (grad_z) grad_z->data[i] = -1.0 / n;
    } else {
      value -= softplus(z.data[i]) / n;  // log(1 - s(z))
      if (grad_z) grad_z->data[i] = -sigmoid(z.data[i]) / n;
    }
  }
  return value;
}

}  // namespace

double adv_embedder_loss(const ParamMap& critic, const Tensor& fake, AdvForm form) {
  require_batch(fake, "adv_embedder_loss");
  return embedder_term(critic.forward(fake), form, nullptr);
}

BundleGrads BundleGrads::zeros_like(const ModelBundle& bundle) {
  BundleGrads g;
  g.e_head.assign(bundle.e_head.param_count(), 0.0);
  g.f.assign(bundle.f.param_count(), 0.0);
  g.g.assign(bundle.g.param_count(), 0.0);
  g.d.assign(bundle.d.param_count(), 0.0);
  if (bundle.merge) {
    g.merge_cls.assign(bundle.merge->cls_branch.param_count(), 0.0);
    g.merge_rec.assign(bundle.merge->rec_branch.param_count(), 0.0);
    g.merge_fuse.assign(bundle.merge->fuse.param_count(), 0.0);
  }
  return g;
}

namespace {

// Batched ranking loss over classification embeddings (N x d). Returns the
// batch mean and writes its gradient w.r.t. the embeddings.
double batch_cls(const Tensor& emb, const std::vector<int>& labels,
                 const ClassEmbeddings& targets, double margin, ClsMode mode,
                 std::uint64_t sample_seed, Tensor* grad) {
  const std::size_t n = emb.batch();
  const std::size_t d = emb.sample_size();
  const std::size_t k = targets.size();
  if (targets.dim() != d) {
    throw std::invalid_argument("cls: embedding width " + std::to_string(d) +
                                " does not match class embeddings " +
                                std::to_string(targets.dim()));
  }
  if (k < 2) throw std::invalid_argument("cls: need at least two candidate classes");
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  std::vector<double> scores(k);
  for (std::size_t i = 0; i < n; ++i) {
    const int ci = targets.index_of(labels[i]);
    if (ci < 0) {
      throw std::invalid_argument("cls: label " + std::to_string(labels[i]) +
                                  " is not a training class");
    }
    auto e = emb.sample(i);
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += targets.vectors(c, j) * e[j];
      scores[c] = s;
    }
    auto add_term = [&](std::size_t c) {
      const double v = margin - scores[ci] + scores[c];
      if (v <= 0.0) return;
      total += v * inv_n;
      if (grad) {
        auto g = grad->sample(i);
        for (std::size_t j = 0; j < d; ++j) {
          g[j] += (targets.vectors(c, j) - targets.vectors(ci, j)) * inv_n;
        }
      }
    };
    if (mode == ClsMode::kSampled) {
      Rng rng(derive_seed(sample_seed, i));
      std::uniform_int_distribution<std::size_t> pick(0, k - 2);
      std::size_t c = pick(rng);
      if (c >= static_cast<std::size_t>(ci)) ++c;
      add_term(c);
    } else {
      for (std::size_t c = 0; c < k; ++c) {
        if (c != static_cast<std::size_t>(ci)) add_term(c);
      }
    }
  }
  return total;
}

Tensor first_columns(const Tensor& t, std::size_t d) {
  if (t.sample_size() == d) return t;
  Tensor out({t.batch(), d});
  for (std::size_t i = 0; i < t.batch(); ++i) {
    std::copy_n(t.sample(i).begin(), d, out.sample(i).begin());
  }
  return out;
}

bool any_nonzero(const Tensor& t) {
  return std::any_of(t.data.begin(), t.data.end(), [](double v) { return v != 0.0; });
}

}  // namespace

LossBreakdown generator_gradients(const ModelBundle& bundle, const Batch& batch,
                                  const ClassEmbeddings& targets, const HyperParams& hyper,
                                  std::uint64_t sample_seed, BundleGrads* grads,
                                  ObjectiveTerms terms) {
  const std::size_t n = batch.images.batch();
  if (n == 0) throw std::invalid_argument("objective: empty batch");
  if (batch.labels.size() != n) {
    throw std::invalid_argument("objective: labels do not match batch size");
  }
  for (int label : batch.labels) {
    if (targets.index_of(label) < 0) {
      throw std::invalid_argument("objective: label " + std::to_string(label) +
                                  " is not a seen training class");
    }
  }
  const Variant variant = bundle.variant();
  const std::size_t d = bundle.config.embedding_dim;
  const bool want_grad = grads != nullptr;
  if (want_grad && grads->e_head.size() != bundle.e_head.param_count()) {
    *grads = BundleGrads::zeros_like(bundle);
  }

  const Tensor features = batch.trunk_features.size()
                              ? batch.trunk_features
                              : bundle.e_trunk.forward(batch.images);
  ParamMap::Trace e_trace;
  const Tensor e_out = bundle.e_head.forward(features, &e_trace);
  const Tensor cls_emb = first_columns(e_out, d);
  Tensor grad_e(e_out.shape);

  LossBreakdown loss;
  {
    Tensor g_cls(cls_emb.shape);
    loss.cls = batch_cls(cls_emb, batch.labels, targets, hyper.margin, hyper.cls_mode,
                         sample_seed, want_grad && terms.cls ? &g_cls : nullptr);
    if (want_grad && terms.cls) {
      for (std::size_t i = 0; i < n; ++i) {
        auto src = g_cls.sample(i);
        auto dst = grad_e.sample(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  }

  Tensor code;
  if (has_decoder(variant)) {
    ParamMap::Trace f_trace, g_trace, phi_trace;
    std::vector<ParamMap::Trace> merge_traces;
    if (variant == Variant::kSpAen) {
      code = bundle.f.forward(batch.images, &f_trace);
    } else if (variant == Variant::kSplitBranch) {
      code = merge_forward(*bundle.merge, e_out, &merge_traces);
    } else {
      code = e_out;
    }
    const Tensor recon = bundle.g.forward(code, &g_trace);
    const Tensor phi_recon = bundle.phi.forward(recon, &phi_trace);
    const Tensor phi_target =
        batch.phi_targets.size() ? batch.phi_targets : bundle.phi.forward(batch.images);

    const double inv_n = 1.0 / static_cast<double>(n);
    Tensor g_phi(phi_recon.shape);
    Tensor g_recon(recon.shape);
    const bool rec_grad = want_grad && terms.rec && hyper.alpha != 0.0;
    for (std::size_t i = 0; i < phi_recon.size(); ++i) {
      const double diff = phi_recon.data[i] - phi_target.data[i];
      loss.feat += diff * diff * inv_n;
      g_phi.data[i] = hyper.alpha * 2.0 * diff * inv_n;
    }
    for (std::size_t i = 0; i < recon.size(); ++i) {
      const double diff = recon.data[i] - batch.images.data[i];
      loss.pixel += diff * diff * inv_n;
      g_recon.data[i] = hyper.alpha * hyper.lambda_p * 2.0 * diff * inv_n;
    }
    loss.rec = loss.feat + hyper.lambda_p * loss.pixel;

    if (rec_grad) {
      const Tensor through_phi = bundle.phi.backward(phi_trace, g_phi);
      for (std::size_t i = 0; i < g_recon.size(); ++i) g_recon.data[i] += through_phi.data[i];
      const Tensor g_code = bundle.g.backward(g_trace, g_recon, grads->g);
      if (variant == Variant::kSpAen) {
        bundle.f.backward(f_trace, g_code, grads->f);
      } else if (variant == Variant::kSplitBranch) {
        const SplitMerge& m = *bundle.merge;
        const Tensor g_cat = m.fuse.backward(merge_traces[2], g_code, grads->merge_fuse);
        Tensor g_a({n, d}), g_r({n, d});
        for (std::size_t i = 0; i < n; ++i) {
          auto s = g_cat.sample(i);
          std::copy_n(s.begin(), d, g_a.sample(i).begin());
          std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(d), d, g_r.sample(i).begin());
        }
        const Tensor g_first = m.cls_branch.backward(merge_traces[0], g_a, grads->merge_cls);
        const Tensor g_second = m.rec_branch.backward(merge_traces[1], g_r, grads->merge_rec);
        for (std::size_t i = 0; i < n; ++i) {
          auto dst = grad_e.sample(i);
          auto a = g_first.sample(i);
          auto b = g_second.sample(i);
          for (std::size_t j = 0; j < d; ++j) {
            dst[j] += a[j];
            dst[d + j] += b[j];
          }
        }
      } else {
        for (std::size_t i = 0; i < grad_e.size(); ++i) grad_e.data[i] += g_code.data[i];
      }
    }
  }

  if (variant == Variant::kSpAen) {
    ParamMap::Trace d_trace;
    const Tensor z = bundle.d.forward(cls_emb, &d_trace);
    Tensor g_z(z.shape);
    loss.adv_E = embedder_term(z, hyper.adv_form, &g_z);
    loss.adv_D = adv_critic_loss(bundle.d, code, cls_emb, hyper.adv_form);
    if (want_grad && terms.adv && hyper.beta != 0.0) {
      for (double& v : g_z.data) v *= hyper.beta;
      // Critic parameters are constants here: no parameter gradient requested.
      const Tensor g_emb = bundle.d.backward(d_trace, g_z);
      for (std::size_t i = 0; i < n; ++i) {
        auto src = g_emb.sample(i);
        auto dst = grad_e.sample(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  }

  loss.total = loss.cls + hyper.alpha * loss.rec + hyper.beta * loss.adv_E;
  if (want_grad && any_nonzero(grad_e)) {
    bundle.e_head.backward(e_trace, grad_e, grads->e_head);
  }
  return loss;
}

LossBreakdown full_objective(const ModelBundle& bundle, const Batch& batch,
                             const ClassEmbeddings& targets, const HyperParams& hyper,
                             std::uint64_t sample_seed) {
  return generator_gradients(bundle, batch, targets, hyper, sample_seed, nullptr);
}

}  // namespace spaen
