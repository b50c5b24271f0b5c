#include "spaen/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "spaen/ablations.hpp"
#include "spaen/checkpoint.hpp"
#include "spaen/data.hpp"
#include "spaen/eval.hpp"
#include "spaen/json_io.hpp"
#include "spaen/spaces.hpp"
#include "spaen/trainer.hpp"

namespace spaen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_config(const fs::path& out_dir, const json& config) {
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", config.dump(2) + "\n");
}

struct HyperFlags {
  HyperParams hyper;
  std::string adv_form = "wgan";
  std::string cls_mode = "sampled";

  void add(CLI::App* app) {
    app->add_option("--alpha", hyper.alpha, "Reconstruction weight")->capture_default_str();
    app->add_option("--beta", hyper.beta, "Adversarial weight")->capture_default_str();
    app->add_option("--margin", hyper.margin, "Ranking margin")->capture_default_str();
    app->add_option("--lambda-p", hyper.lambda_p, "Pixel term weight")->capture_default_str();
    app->add_option("--clip", hyper.clip_c, "Critic weight clip")->capture_default_str();
    app->add_option("--n-critic", hyper.n_critic, "Critic updates per step")->capture_default_str();
    app->add_option("--lr", hyper.learning_rate, "Initial learning rate")->capture_default_str();
    app->add_option("--critic-lr-scale", hyper.critic_lr_scale,
                    "Critic learning rate relative to --lr")
        ->capture_default_str();
    app->add_option("--batch-size", hyper.batch_size, "Mini-batch size")->capture_default_str();
    app->add_option("--patience", hyper.patience, "Plateau patience in epochs")
        ->capture_default_str();
    app->add_option("--adv-form", adv_form, "Adversarial loss form")
        ->check(CLI::IsMember({"wgan", "log"}))
        ->capture_default_str();
    app->add_option("--cls-mode", cls_mode, "Wrong-label selection")
        ->check(CLI::IsMember({"sampled", "full_sum"}))
        ->capture_default_str();
  }

  HyperParams resolve() const {
    HyperParams h = hyper;
    h.adv_form = adv_form == "log" ? AdvForm::kLog : AdvForm::kWgan;
    h.cls_mode = cls_mode == "full_sum" ? ClsMode::kFullSum : ClsMode::kSampled;
    try {
      h.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return h;
  }
};

Variant usage_variant(const std::string& name) {
  try {
    return parse_variant(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::vector<double> usage_numbers(const std::string& text, const std::string& flag) {
  try {
    return parse_number_list(text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

NetConfig net_for(const Dataset& ds, Variant variant, std::uint64_t seed) {
  NetConfig net;
  net.embedding_dim = static_cast<std::size_t>(ds.num_attributes());
  const Shape s = ds.image_shape();
  net.channels = s[0];
  net.height = s[1];
  net.width = s[2];
  net.variant = variant;
  net.seed = seed;
  return net;
}

json base_config(const std::string& command, const std::string& dataset, const fs::path& out,
                 std::uint64_t seed) {
  return json{{"command", command}, {"dataset", dataset}, {"out", out.string()}, {"seed", seed}};
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string out;
  GenConfig gen;
  int unseen = 5;
  int val = 3;
};

int cmd_generate_data(const GenerateArgs& a, std::ostream& os) {
  GenConfig gen = a.gen;
  try {
    gen.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset ds = generate_synthetic(gen);
  const SplitSpec splits = make_splits(ds, a.unseen, a.val, gen.seed);
  save_dataset(ds, splits, a.out, gen);
  json cfg = base_config("generate-data", "", a.out, gen.seed);
  cfg["gen"] = gen;
  cfg["unseen"] = a.unseen;
  cfg["val"] = a.val;
  write_config(a.out, cfg);
  os << "wrote " << ds.images.size() << " images, " << ds.num_classes() << " classes to "
     << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  int epochs = 300;
  std::string variant = "spaen";
  bool resume = false;
  HyperFlags flags;
};

int cmd_train(const TrainArgs& a, std::ostream& os) {
  const Variant variant = usage_variant(a.variant);
  const HyperParams hyper = a.flags.resolve();
  if (a.epochs < 0) throw UsageError("--epochs must be >= 0");
  if (a.resume && variant == Variant::kDirectMap) {
    throw UsageError("--resume is not supported for the two-phase directmap variant");
  }
  const auto [ds, splits] = load_dataset(a.dataset);
  const NetConfig net = net_for(ds, variant, a.seed);
  const fs::path out = a.out;

  json cfg = base_config("train", a.dataset, out, a.seed);
  cfg["epochs"] = a.epochs;
  cfg["resume"] = a.resume;
  cfg["hyper"] = hyper;
  cfg["net"] = net;
  write_config(out, cfg);

  if (variant == Variant::kDirectMap) {
    AblationSpec spec{variant, hyper, net, a.epochs, a.seed};
    VariantRun run = run_variant(spec, ds, splits);
    write_train_log(out / "train_log.csv", run.log);
    save_bundle(run.bundle, out / "checkpoint", {{"hyper", hyper}});
    os << "trained directmap for " << a.epochs << " + " << a.epochs << " epochs\n";
    return kExitOk;
  }

  TrainOptions options;
  options.hyper = hyper;
  options.epochs = a.epochs;
  options.seed = a.seed;
  options.out_dir = out;
  options = variant_options(variant, options);
  TrainState state = a.resume ? load_train_state(out / "state")
                              : TrainState::fresh(build_models(net, ds.num_attributes()),
                                                  hyper, a.seed);
  if (a.resume && state.bundle.variant() != variant) {
    throw UsageError("--variant does not match the saved state (" +
                     variant_name(state.bundle.variant()) + ")");
  }
  const TrainReport report = train(state, ds, splits, options);
  os << "trained " << report.rows.size() << " epochs (" << state.epoch << " total) in "
     << report.wall_seconds << " s; best validation H " << report.best_val_h << " at epoch "
     << report.best_epoch << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string dataset;
  std::string out;
  std::string checkpoint;
  std::string gamma_grid;
  std::uint64_t seed = 0;
};

void write_metrics(const fs::path& out, const MetricsReport& m) {
  std::ostringstream metrics;
  metrics << "metric,value\n"
          << "acc_UU," << fmt(m.acc_uu) << "\n"
          << "acc_UT," << fmt(m.acc_ut) << "\n"
          << "acc_ST," << fmt(m.acc_st) << "\n"
          << "H," << fmt(m.h) << "\n"
          << "AUSUC," << fmt(m.ausuc) << "\n";
  write_text(out / "metrics.csv", metrics.str());
  std::ostringstream suc;
  suc << "gamma,acc_UT,acc_ST\n";
  for (const auto& p : m.suc) suc << fmt(p.gamma) << "," << fmt(p.acc_ut) << "," << fmt(p.acc_st) << "\n";
  write_text(out / "suc.csv", suc.str());
  write_text(out / "ausuc.txt", fmt(m.ausuc) + "\n");
}

int cmd_eval(const EvalArgs& a, std::ostream& os) {
  std::optional<std::vector<double>> grid;
  if (!a.gamma_grid.empty()) grid = usage_numbers(a.gamma_grid, "--gamma-grid");
  const auto [ds, splits] = load_dataset(a.dataset);
  const ModelBundle bundle = load_bundle(a.checkpoint);
  json cfg = base_config("eval", a.dataset, a.out, a.seed);
  cfg["checkpoint"] = a.checkpoint;
  cfg["gamma_grid"] = a.gamma_grid;
  write_config(a.out, cfg);
  const MetricsReport m = evaluate_all(bundle, ds, splits, grid);
  write_metrics(a.out, m);
  os << "acc_UU " << m.acc_uu << "  acc_UT " << m.acc_ut << "  acc_ST " << m.acc_st << "  H "
     << m.h << "  AUSUC " << m.ausuc << "\n";
  return kExitOk;
}

struct AblateArgs {
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  int epochs = 300;
  std::vector<std::string> variants{"spaen", "cls-only", "directmap", "sae", "splitbranch"};
  HyperFlags flags;
};

std::vector<std::string> split_commas(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

int cmd_ablate(const AblateArgs& a, std::ostream& os) {
  const HyperParams hyper = a.flags.resolve();
  std::vector<Variant> variants;
  for (const auto& name : split_commas(a.variants)) variants.push_back(usage_variant(name));
  if (variants.empty()) throw UsageError("--variants is empty");
  if (a.epochs < 0) throw UsageError("--epochs must be >= 0");
  const auto [ds, splits] = load_dataset(a.dataset);
  std::vector<AblationSpec> specs;
  json names = json::array();
  for (Variant v : variants) {
    specs.push_back({v, hyper, net_for(ds, v, a.seed), a.epochs, a.seed});
    names.push_back(variant_name(v));
  }
  json cfg = base_config("ablate", a.dataset, a.out, a.seed);
  cfg["epochs"] = a.epochs;
  cfg["variants"] = names;
  cfg["hyper"] = hyper;
  cfg["net"] = net_for(ds, Variant::kSpAen, a.seed);
  write_config(a.out, cfg);
  const AblationReport report = run_ablation(specs, ds, splits, a.out);
  for (const auto& r : report.rows) {
    os << variant_name(r.variant) << ": H " << r.metrics.h << "  AUSUC " << r.metrics.ausuc;
    if (r.recon_mse) os << "  recon_mse " << *r.recon_mse;
    os << "\n";
  }
  return kExitOk;
}

struct AnalyzeArgs {
  std::string dataset;
  std::string classes;
  std::string splits;
  std::string out;
  std::string granularity = "class";
  std::uint64_t seed = 0;
};

int cmd_analyze_attributes(const AnalyzeArgs& a, std::ostream& os) {
  const bool from_dir = !a.dataset.empty();
  if (from_dir == (!a.classes.empty() || !a.splits.empty())) {
    throw UsageError("give either --dataset or both --classes and --splits");
  }
  if (!from_dir && (a.classes.empty() || a.splits.empty())) {
    throw UsageError("--classes and --splits go together");
  }
  const Granularity g = a.granularity == "image" ? Granularity::kPerImage : Granularity::kPerClass;

  Eigen::MatrixXd attributes;
  std::vector<int> train_labels, test_labels;
  if (from_dir) {
    const auto [ds, splits] = load_dataset(a.dataset);
    attributes = ds.class_attributes;
    if (g == Granularity::kPerImage) {
      for (auto id : splits.train_ids) train_labels.push_back(ds.labels[id]);
      for (auto id : splits.unseen_test_ids) test_labels.push_back(ds.labels[id]);
    } else {
      train_labels = splits.seen_classes;
      test_labels = splits.unseen_classes;
    }
  } else {
    const ExternalAttributes ext = load_external_attributes(a.classes, a.splits);
    attributes = ext.class_attributes;
    if (g == Granularity::kPerImage) {
      if (ext.train_image_labels.empty()) {
        throw UsageError("--granularity image needs an image-level split file");
      }
      train_labels = ext.train_image_labels;
      test_labels = ext.test_image_labels;
    } else {
      train_labels = ext.splits.seen_classes;
      test_labels = ext.splits.unseen_classes;
    }
  }

  const VarianceShift shift = variance_shift(attributes, train_labels, test_labels, g);
  json cfg = base_config("analyze-attributes", a.dataset, a.out, a.seed);
  cfg["classes"] = a.classes;
  cfg["splits"] = a.splits;
  cfg["granularity"] = a.granularity;
  write_config(a.out, cfg);
  std::ostringstream profile;
  profile << "attribute,train_variance,test_variance\n";
  for (std::size_t j = 0; j < shift.train.variance.size(); ++j) {
    profile << j << "," << fmt(shift.train.variance[j]) << "," << fmt(shift.test.variance[j])
            << "\n";
  }
  write_text(fs::path(a.out) / "variance_profile.csv", profile.str());
  write_text(fs::path(a.out) / "variance_cosine.txt", fmt(shift.cosine) + "\n");
  os << "variance cosine " << fmt(shift.cosine) << "\n";
  return kExitOk;
}

struct SweepArgs {
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  int epochs = 300;
  std::string alphas = "0,0.1,1,10";
  HyperFlags flags;
};

int cmd_sweep_alpha(const SweepArgs& a, std::ostream& os) {
  const HyperParams base = a.flags.resolve();
  const std::vector<double> alphas = usage_numbers(a.alphas, "--alphas");
  for (double alpha : alphas) {
    if (alpha < 0.0) throw UsageError("--alphas must be non-negative");
  }
  if (a.epochs < 0) throw UsageError("--epochs must be >= 0");
  const auto [ds, splits] = load_dataset(a.dataset);
  const fs::path out = a.out;
  json cfg = base_config("sweep-alpha", a.dataset, out, a.seed);
  cfg["epochs"] = a.epochs;
  cfg["alphas"] = alphas;
  cfg["hyper"] = base;
  write_config(out, cfg);

  const Tensor unseen = unseen_test_images(ds, splits);
  const Tensor sheet = unseen_test_images(ds, splits, 10);
  std::ostringstream csv;
  csv << "alpha,recon_mse\n";
  for (double alpha : alphas) {
    AblationSpec spec;
    spec.variant = Variant::kSpAen;
    spec.hyper = base;
    spec.hyper.alpha = alpha;
    spec.net = net_for(ds, Variant::kSpAen, a.seed);
    spec.epochs = a.epochs;
    spec.seed = a.seed;
    TrainOptions options;
    options.hyper = spec.hyper;
    options.epochs = spec.epochs;
    options.seed = spec.seed;
    const TrainResult r = train(ds, splits, spec.net, options);
    const double mse = *reconstruction_mse(r.bundle, unseen);
    csv << fmt(alpha) << "," << fmt(mse) << "\n";
    write_ppm(out / ("recon_alpha_" + fmt(alpha) + ".ppm"), reconstruction_sheet(r.bundle, sheet));
    os << "alpha " << alpha << ": recon_mse " << mse << "\n";
  }
  write_text(out / "recon_mse_vs_alpha.csv", csv.str());
  return kExitOk;
}

}  // namespace

std::vector<double> parse_number_list(const std::string& text) {
  auto to_double = [](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("not a number: '" + s + "'");
    }
    if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
  };
  if (text.empty()) throw std::invalid_argument("empty list");
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    if (parts.size() != 3) throw std::invalid_argument("expected start:stop:count");
    const double start = to_double(parts[0]);
    const double stop = to_double(parts[1]);
    const double count = to_double(parts[2]);
    if (count < 2 || count != static_cast<double>(static_cast<long>(count))) {
      throw std::invalid_argument("count must be an integer >= 2");
    }
    const auto n = static_cast<std::size_t>(count);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(start + (stop - start) * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return out;
  }
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(to_double(part));
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial embedding networks for zero-shot recognition"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Generate the synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.gen.seed, "Random seed")->capture_default_str();
  g->add_option("--classes", gen.gen.num_classes, "Number of classes")->capture_default_str();
  g->add_option("--attributes", gen.gen.num_attributes, "Attributes per class")->capture_default_str();
  g->add_option("--per-class", gen.gen.n_per_class, "Images per class")->capture_default_str();
  g->add_option("--noise", gen.gen.noise_std, "Pixel noise standard deviation")->capture_default_str();
  g->add_option("--low-variance-fraction", gen.gen.low_variance_fraction,
                "Fraction of attributes with engineered semantic loss")
      ->capture_default_str();
  g->add_option("--designated-unseen", gen.gen.designated_unseen,
                "Classes whose low-variance attributes are spread out")
      ->capture_default_str();
  g->add_option("--unseen", gen.unseen, "Unseen classes in the split")->capture_default_str();
  g->add_option("--val", gen.val, "Validation classes in the split")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one variant");
  t->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Total epochs")->capture_default_str();
  t->add_option("--variant", tr.variant, "spaen, cls-only, directmap, sae, splitbranch")
      ->capture_default_str();
  t->add_flag("--resume", tr.resume, "Continue from <out>/state");
  tr.flags.add(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--gamma-grid", ev.gamma_grid,
                "Calibration grid: a,b,c or start:stop:count (default: automatic)");
  e->add_option("--seed", ev.seed, "Random seed (recorded only)")->capture_default_str();

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and compare the variants");
  a->add_option("--dataset", ab.dataset, "Dataset directory")->required();
  a->add_option("--out", ab.out, "Output directory")->required();
  a->add_option("--seed", ab.seed, "Random seed")->capture_default_str();
  a->add_option("--epochs", ab.epochs, "Epochs per variant (and per DirectMap phase)")
      ->capture_default_str();
  a->add_option("--variants,--variant", ab.variants, "Comma-separated variants")
      ->capture_default_str();
  ab.flags.add(a);

  AnalyzeArgs an;
  auto* z = app.add_subcommand("analyze-attributes", "Attribute variance shift diagnostic");
  z->add_option("--dataset", an.dataset, "Dataset directory");
  z->add_option("--classes", an.classes, "Class attribute CSV");
  z->add_option("--splits", an.splits, "Split CSV (class- or image-level)");
  z->add_option("--out", an.out, "Output directory")->required();
  z->add_option("--granularity", an.granularity, "class or image")
      ->check(CLI::IsMember({"class", "image"}))
      ->capture_default_str();
  z->add_option("--seed", an.seed, "Random seed (recorded only)")->capture_default_str();

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep-alpha", "Reconstruction error against alpha");
  s->add_option("--dataset", sw.dataset, "Dataset directory")->required();
  s->add_option("--out", sw.out, "Output directory")->required();
  s->add_option("--seed", sw.seed, "Random seed")->capture_default_str();
  s->add_option("--epochs", sw.epochs, "Epochs per alpha")->capture_default_str();
  s->add_option("--alphas", sw.alphas, "a,b,c or start:stop:count")->capture_default_str();
  sw.flags.add(s);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_generate_data(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (a->parsed()) return cmd_ablate(ab, out);
    if (z->parsed()) return cmd_analyze_attributes(an, out);
    if (s->parsed()) return cmd_sweep_alpha(sw, out);
  } catch (const UsageError& ue) {
    err << "usage error: " << ue.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace spaen
