#include "spaen/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spaen/checkpoint.hpp"
#include "spaen/eval.hpp"
#include "spaen/json_io.hpp"

namespace spaen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348u;
constexpr std::uint64_t kSampleStream = 0x434cu;
constexpr std::size_t kChunk = 256;

void sgd_momentum(std::span<double> params, const Buffer& grad, Buffer& velocity, double lr, double momentum) {
  if (velocity.size() != params.size()) velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    params[i] -= lr * velocity[i];
  }
}

void clip(std::span<double> params, double c) {
  for (double& v : params) v = std::clamp(v, -c, c);
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.cls) && std::isfinite(l.feat) && std::isfinite(l.pixel) &&
         std::isfinite(l.rec) && std::isfinite(l.adv_E) && std::isfinite(l.adv_D) &&
         std::isfinite(l.total);
}

std::string describe(const LossBreakdown& l) {
  std::ostringstream os;
  os << "cls=" << l.cls << " feat=" << l.feat << " pixel=" << l.pixel << " rec=" << l.rec
     << " adv_E=" << l.adv_E << " adv_D=" << l.adv_D << " total=" << l.total;
  return os.str();
}

bool critic_active(const ModelBundle& bundle, const HyperParams& hyper,
                   const ObjectiveTerms& terms) {
  return bundle.variant() == Variant::kSpAen && terms.adv && hyper.n_critic > 0;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  Shape shape = t.shape;
  shape[0] = rows.size();
  Tensor out(shape);
  const std::size_t s = t.sample_size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(t.sample(rows[i]).begin(), s, out.sample(i).begin());
  }
  return out;
}

// Applies a frozen map in chunks to bound trace memory.
Tensor forward_chunked(const ParamMap& map, const Tensor& x) {
  const std::size_t n = x.batch();
  Shape out_shape = map.output_shape();
  out_shape.insert(out_shape.begin(), n);
  Tensor out(out_shape);
  const std::size_t so = out.sample_size();
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    std::vector<std::size_t> rows(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor y = map.forward(gather_rows(x, rows));
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * so));
  }
  return out;
}

std::vector<int> sorted_union(std::vector<int> a, const std::vector<int>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

// Validation H from cached trunk features of the seen-class training images.
double validation_h_from_features(const ModelBundle& bundle, const Tensor& features,
                                  const std::vector<int>& labels,
                                  const std::vector<int>& train_classes,
                                  const std::vector<int>& val_classes,
                                  const ClassEmbeddings& candidates) {
  const Tensor emb = classification_embedding_from_features(bundle, features);
  const ScoreMatrix s = score(emb, candidates, labels);
  const std::vector<int> pred = predict(s);
  const std::set<int> val(val_classes.begin(), val_classes.end());
  std::vector<int> ps, gs, pu, gu;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (val.count(labels[i])) {
      pu.push_back(pred[i]);
      gu.push_back(labels[i]);
    } else {
      ps.push_back(pred[i]);
      gs.push_back(labels[i]);
    }
  }
  const double acc_s = per_class_top1(ps, gs, train_classes);
  if (val_classes.empty()) return acc_s;
  const double acc_u = per_class_top1(pu, gu, val_classes);
  return harmonic_mean(acc_s, acc_u);
}

}  // namespace

TrainState TrainState::fresh(ModelBundle bundle, const HyperParams& hyper, std::uint64_t seed) {
  TrainState s;
  s.velocity = BundleGrads::zeros_like(bundle);
  s.bundle = std::move(bundle);
  s.seed = seed;
  s.lr = hyper.learning_rate;
  return s;
}

LossBreakdown train_step(TrainState& state, const Batch& batch,
                         const ClassEmbeddings& targets, const HyperParams& hyper,
                         const StepOptions& options) {
  hyper.validate();
  ModelBundle& b = state.bundle;
  if (state.velocity.e_head.size() != b.e_head.param_count()) {
    state.velocity = BundleGrads::zeros_like(b);
  }

  if (critic_active(b, hyper, options.terms)) {
    const Tensor features =
        batch.trunk_features.size() ? batch.trunk_features : b.e_trunk.forward(batch.images);
    const Tensor fake = classification_embedding_from_features(b, features);
    const Tensor real = b.f.forward(batch.images);
    const double critic_lr = state.lr * hyper.critic_lr_scale;
    for (int k = 0; k < hyper.n_critic; ++k) {
      Buffer grad(b.d.param_count(), 0.0);
      const double value = critic_gradients(b.d, real, fake, hyper.adv_form, &grad);
      if (!std::isfinite(value)) {
        throw TrainingDiverged("non-finite critic loss at step " + std::to_string(state.step) +
                               ": adv_D=" + std::to_string(value));
      }
      sgd_momentum(b.d.mutable_params(), grad, state.velocity.d, critic_lr, hyper.momentum);
      if (hyper.adv_form == AdvForm::kWgan) clip(b.d.mutable_params(), hyper.clip_c);
      if (options.on_critic_update) options.on_critic_update(b.d);
    }
  }

  BundleGrads grads = BundleGrads::zeros_like(b);
  const std::uint64_t sample_seed = derive_seed(derive_seed(state.seed, kSampleStream), state.step);
  const LossBreakdown loss =
      generator_gradients(b, batch, targets, hyper, sample_seed, &grads, options.terms);
  if (!finite(loss)) {
    throw TrainingDiverged("non-finite loss at step " + std::to_string(state.step) + ": " +
                           describe(loss));
  }
  const double lr = state.lr;
  const double mu = hyper.momentum;
  if (options.mask.e_head) sgd_momentum(b.e_head.mutable_params(), grads.e_head, state.velocity.e_head, lr, mu);
  if (options.mask.f) sgd_momentum(b.f.mutable_params(), grads.f, state.velocity.f, lr, mu);
  if (options.mask.g) sgd_momentum(b.g.mutable_params(), grads.g, state.velocity.g, lr, mu);
  if (options.mask.merge && b.merge) {
    sgd_momentum(b.merge->cls_branch.mutable_params(), grads.merge_cls, state.velocity.merge_cls, lr, mu);
    sgd_momentum(b.merge->rec_branch.mutable_params(), grads.merge_rec, state.velocity.merge_rec, lr, mu);
    sgd_momentum(b.merge->fuse.mutable_params(), grads.merge_fuse, state.velocity.merge_fuse, lr, mu);
  }
  ++state.step;
  return loss;
}

double validation_h(const ModelBundle& bundle, const DatasetAccessor& data,
                    const SplitSpec& splits) {
  const std::vector<int> train_classes = splits.train_classes();
  std::vector<const Image*> images;
  std::vector<int> labels;
  for (std::size_t id : splits.train_ids) {
    images.push_back(&data.image(id));
    labels.push_back(data.label(id));
  }
  if (images.empty()) throw std::invalid_argument("validation_h: empty train split");
  const Tensor features = forward_chunked(bundle.e_trunk, stack_images(images));
  const auto candidates =
      class_embeddings(data, sorted_union(train_classes, splits.val_classes));
  return validation_h_from_features(bundle, features, labels, train_classes,
                                    splits.val_classes, candidates);
}

TrainReport train(TrainState& state, const Dataset& dataset, const SplitSpec& splits,
                  const TrainOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const HyperParams& hyper = options.hyper;
  hyper.validate();
  if (options.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  splits.validate(dataset);
  ModelBundle& bundle = state.bundle;
  if (static_cast<int>(bundle.config.embedding_dim) != dataset.num_attributes()) {
    throw std::invalid_argument("train: embedding dim " +
                                std::to_string(bundle.config.embedding_dim) +
                                " does not match " + std::to_string(dataset.num_attributes()) +
                                " attributes");
  }

  TrainReport report;
  const DatasetAccessor data(dataset, options.access_log);
  const std::vector<int> train_classes = splits.train_classes();
  const std::set<int> train_set(train_classes.begin(), train_classes.end());
  const std::set<int> val_set(splits.val_classes.begin(), splits.val_classes.end());

  if (state.epoch < options.epochs) {
    // Seen-class training images only; val-class images feed validation.
    std::vector<const Image*> images;
    std::vector<int> labels;
    std::vector<std::size_t> loss_rows;
    const std::set<int> seen(splits.seen_classes.begin(), splits.seen_classes.end());
    for (std::size_t id : splits.train_ids) {
      const int label = data.label(id);
      if (!seen.count(label)) {
        throw std::invalid_argument("train: image " + std::to_string(id) +
                                    " in the train split has non-seen label " +
                                    std::to_string(label));
      }
      if (train_set.count(label)) loss_rows.push_back(images.size());
      images.push_back(&data.image(id));
      labels.push_back(label);
    }
    if (loss_rows.empty()) throw std::invalid_argument("train: empty train split");

    const Tensor all_images = stack_images(images);
    const Tensor all_features = forward_chunked(bundle.e_trunk, all_images);
    const Tensor all_phi =
        has_decoder(bundle.variant()) ? forward_chunked(bundle.phi, all_images) : Tensor();
    const ClassEmbeddings targets = class_embeddings(data, train_classes);
    const ClassEmbeddings candidates =
        class_embeddings(data, sorted_union(train_classes, splits.val_classes));

    const std::size_t bs = hyper.batch_size;
    while (state.epoch < options.epochs) {
      std::vector<std::size_t> order = loss_rows;
      Rng shuffle_rng(derive_seed(derive_seed(state.seed, kShuffleStream),
                                  static_cast<std::uint64_t>(state.epoch)));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      LossBreakdown sum;
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::vector<std::size_t> rows(
            order.begin() + static_cast<std::ptrdiff_t>(start),
            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
        Batch batch;
        batch.images = gather_rows(all_images, rows);
        for (auto r : rows) batch.labels.push_back(labels[r]);
        batch.trunk_features = gather_rows(all_features, rows);
        if (all_phi.size()) batch.phi_targets = gather_rows(all_phi, rows);
        const LossBreakdown l = train_step(state, batch, targets, hyper, options.step);
        const double w = static_cast<double>(rows.size()) / static_cast<double>(order.size());
        sum.cls += w * l.cls;
        sum.feat += w * l.feat;
        sum.pixel += w * l.pixel;
        sum.rec += w * l.rec;
        sum.adv_E += w * l.adv_E;
        sum.adv_D += w * l.adv_D;
        sum.total += w * l.total;
      }
      ++state.epoch;

      EpochRow row;
      row.epoch = state.epoch;
      row.loss = sum;
      row.lr = state.lr;
      row.val_h = validation_h_from_features(bundle, all_features, labels, train_classes,
                                             splits.val_classes, candidates);
      const double metric =
          options.monitor == Monitor::kValidationH ? row.val_h : -row.loss.total;
      if (state.best_epoch == 0 || metric > state.best_val) {
        state.best_val = metric;
        state.best_epoch = state.epoch;
        state.since_improvement = 0;
        state.best_bundle = bundle;
      } else if (++state.since_improvement >= hyper.patience) {
        state.since_improvement = 0;
        if (state.lr * 0.1 >= hyper.min_lr * (1.0 - 1e-9)) state.lr *= 0.1;
      }
      state.history.push_back(row);
      report.rows.push_back(row);
      if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        write_train_log(options.out_dir / "train_log.csv", state.history);
      }
      if (options.on_epoch) options.on_epoch(state, row);
    }
  }

  report.best_val_h = state.best_val;
  report.best_epoch = state.best_epoch;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    write_train_log(options.out_dir / "train_log.csv", state.history);
    save_train_state(state, options.out_dir / "state");
    const ModelBundle& chosen =
        options.restore_best && state.best_bundle ? *state.best_bundle : state.bundle;
    report.checkpoint = options.out_dir / "checkpoint";
    save_bundle(chosen, report.checkpoint,
                {{"epoch", state.epoch}, {"best_epoch", state.best_epoch},
                 {"best_val_h", state.best_val}, {"hyper", hyper}});
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

TrainResult train(const Dataset& dataset, const SplitSpec& splits, const NetConfig& net,
                  const TrainOptions& options) {
  TrainState state =
      TrainState::fresh(build_models(net, dataset.num_attributes()), options.hyper, options.seed);
  TrainReport report = train(state, dataset, splits, options);
  if (options.restore_best && state.best_bundle) {
    return {std::move(*state.best_bundle), std::move(report)};
  }
  return {std::move(state.bundle), std::move(report)};
}

void write_train_log(const fs::path& path, const std::vector<EpochRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,cls,feat,pixel,rec,adv_E,adv_D,total,val_H,lr\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.epoch, r.loss.cls, r.loss.feat, r.loss.pixel, r.loss.rec, r.loss.adv_E,
                  r.loss.adv_D, r.loss.total, r.val_h, r.lr);
    out << buf;
  }
}

void save_train_state(const TrainState& state, const fs::path& dir) {
  fs::create_directories(dir);
  save_bundle(state.bundle, dir / "bundle");
  if (state.best_bundle) save_bundle(*state.best_bundle, dir / "best");
  const BundleGrads& v = state.velocity;
  const std::vector<std::pair<std::string, const Buffer*>> blobs{
      {"e_head", &v.e_head},       {"f", &v.f},
      {"g", &v.g},                 {"d", &v.d},
      {"merge_cls", &v.merge_cls}, {"merge_rec", &v.merge_rec},
      {"merge_fuse", &v.merge_fuse}};
  for (const auto& [name, data] : blobs) write_blob(dir / ("velocity." + name + ".bin"), *data);
  json history = json::array();
  for (const auto& r : state.history) {
    history.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"val_h", r.val_h}, {"lr", r.lr}});
  }
  json j{{"seed", state.seed},
         {"step", state.step},
         {"epoch", state.epoch},
         {"lr", state.lr},
         {"best_val", state.best_val},
         {"best_epoch", state.best_epoch},
         {"since_improvement", state.since_improvement},
         {"has_best", state.best_bundle.has_value()},
         {"history", history}};
  std::ofstream out(dir / "state.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "state.json").string());
  out << j.dump(2) << "\n";
}

TrainState load_train_state(const fs::path& dir) {
  std::ifstream in(dir / "state.json");
  if (!in) throw std::runtime_error("no state.json in " + dir.string());
  const json j = json::parse(in);
  TrainState s;
  s.bundle = load_bundle(dir / "bundle");
  if (j.at("has_best").get<bool>()) s.best_bundle = load_bundle(dir / "best");
  s.velocity = BundleGrads::zeros_like(s.bundle);
  BundleGrads& v = s.velocity;
  const std::vector<std::pair<std::string, Buffer*>> blobs{
      {"e_head", &v.e_head},       {"f", &v.f},
      {"g", &v.g},                 {"d", &v.d},
      {"merge_cls", &v.merge_cls}, {"merge_rec", &v.merge_rec},
      {"merge_fuse", &v.merge_fuse}};
  for (const auto& [name, data] : blobs) {
    const auto values = read_blob(dir / ("velocity." + name + ".bin"));
    if (values.size() != data->size()) {
      throw std::runtime_error(dir.string() + ": velocity size mismatch for " + name);
    }
    data->assign(values.begin(), values.end());
  }
  s.seed = j.at("seed").get<std::uint64_t>();
  s.step = j.at("step").get<std::uint64_t>();
  s.epoch = j.at("epoch").get<int>();
  s.lr = j.at("lr").get<double>();
  s.best_val = j.at("best_val").get<double>();
  s.best_epoch = j.at("best_epoch").get<int>();
  s.since_improvement = j.at("since_improvement").get<int>();
  for (const auto& r : j.at("history")) {
    EpochRow row;
    row.epoch = r.at("epoch").get<int>();
    const json& l = r.at("loss");
    row.loss.cls = l.at("cls").get<double>();
    row.loss.feat = l.at("feat").get<double>();
    row.loss.pixel = l.at("pixel").get<double>();
    row.loss.rec = l.at("rec").get<double>();
    row.loss.adv_E = l.at("adv_E").get<double>();
    row.loss.adv_D = l.at("adv_D").get<double>();
    row.loss.total = l.at("total").get<double>();
    row.val_h = r.at("val_h").get<double>();
    row.lr = r.at("lr").get<double>();
    s.history.push_back(row);
  }
  return s;
}

GridResult grid_search(const Dataset& dataset, const SplitSpec& splits, const NetConfig& net,
                       const TrainOptions& options, std::vector<double> alpha_grid,
                       std::vector<double> beta_grid) {
  if (alpha_grid.empty() || beta_grid.empty()) {
    throw std::invalid_argument("grid_search: empty grid");
  }
  std::sort(alpha_grid.begin(), alpha_grid.end());
  std::sort(beta_grid.begin(), beta_grid.end());
  GridResult result;
  bool found = false;
  for (double a : alpha_grid) {
    for (double b : beta_grid) {
      GridCell cell;
      cell.alpha = a;
      cell.beta = b;
      TrainOptions cell_options = options;
      cell_options.hyper.alpha = a;
      cell_options.hyper.beta = b;
      cell_options.out_dir.clear();
      try {
        const TrainResult r = train(dataset, splits, net, cell_options);
        cell.val_h = r.report.best_val_h;
        if (!std::isfinite(cell.val_h)) throw TrainingDiverged("non-finite validation H");
      } catch (const std::runtime_error& e) {
        cell.diverged = true;
        cell.error = e.what();
      }
      if (!cell.diverged && (!found || cell.val_h > result.val_h)) {
        found = true;
        result.alpha = a;
        result.beta = b;
        result.val_h = cell.val_h;
      }
      result.cells.push_back(cell);
    }
  }
  if (!found) throw std::runtime_error("grid_search: every cell diverged");
  return result;
}

}  // namespace spaen
