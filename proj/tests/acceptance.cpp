#include <CLI11.hpp>

#include <array>
#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "eval_oracles.hpp"
#include "spaen/ablations.hpp"
#include "spaen/spaces.hpp"
#include "spaen/trainer.hpp"
#include "test_util.hpp"

namespace spaen {
namespace {

namespace fs = std::filesystem;
using testing::fd_max_error;
using testing::Instance;
using testing::random_hyper;
using testing::random_instance;

enum class Status { kPass, kFail, kSkip };

struct Verdict {
  Status status = Status::kFail;
  std::string detail;
};

struct Options {
  int epochs = 100;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<int> allow_fail;
  std::string benchmark_dir;
  std::string benchmark_granularity = "class";
  bool skip_training = false;
};

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

Verdict verdict(bool ok, std::string detail) {
  return {ok ? Status::kPass : Status::kFail, std::move(detail)};
}

Verdict metric_arithmetic() {
  const std::array<std::array<double, 3>, 4> rows{
      {{24.9, 38.6, 30.3}, {34.7, 70.6, 46.6}, {23.3, 90.9, 37.1}, {13.7, 63.4, 22.6}}};
  double worst = 0.0;
  std::string detail;
  for (const auto& [ut, st, printed] : rows) {
    const double h = harmonic_mean(st, ut);
    worst = std::max(worst, std::abs(h - printed));
    detail += num(h, 2) + " ";
  }
  return verdict(worst <= 0.15, "H = " + detail + "max |dH| " + num(worst, 3));
}

double fd_group(Instance& inst, ParamMap& map, std::span<const double> analytic,
                const HyperParams& h, std::uint64_t seed,
                const std::function<double(const LossBreakdown&)>& pick) {
  if (analytic.empty()) return 0.0;
  return fd_max_error(
      map.mutable_params(), analytic,
      [&] { return pick(full_objective(inst.bundle, inst.batch, inst.targets, h, seed)); }, 12,
      seed);
}

Verdict gradient_correctness() {
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double err) {
    worst[name] = std::max(worst[name], err);
  };
  constexpr std::uint64_t kInstances = 20;
  for (std::uint64_t t = 0; t < kInstances; ++t) {
    {
      Instance inst = random_instance(Variant::kSpAen, t);
      HyperParams h = random_hyper(t);
      h.cls_mode = ClsMode::kFullSum;
      BundleGrads g;
      generator_gradients(inst.bundle, inst.batch, inst.targets, h, t, &g, {true, false, false});
      note("cls", fd_group(inst, inst.bundle.e_head, g.e_head, h, t,
                           [](const LossBreakdown& l) { return l.cls; }));
    }
    {
      Instance inst = random_instance(Variant::kSpAen, t);
      HyperParams with = random_hyper(t), without = with;
      without.lambda_p = 0.0;
      BundleGrads a, b;
      generator_gradients(inst.bundle, inst.batch, inst.targets, without, t, &b,
                          {false, true, false});
      auto feat = [&](const LossBreakdown& l) { return without.alpha * l.feat; };
      note("feat", fd_group(inst, inst.bundle.f, b.f, without, t, feat));
      note("feat", fd_group(inst, inst.bundle.g, b.g, without, t, feat));
      generator_gradients(inst.bundle, inst.batch, inst.targets, with, t, &a, {false, true, false});
      for (std::size_t i = 0; i < a.f.size(); ++i) a.f[i] -= b.f[i];
      for (std::size_t i = 0; i < a.g.size(); ++i) a.g[i] -= b.g[i];
      auto pixel = [&](const LossBreakdown& l) { return with.alpha * with.lambda_p * l.pixel; };
      note("pixel", fd_group(inst, inst.bundle.f, a.f, with, t, pixel));
      note("pixel", fd_group(inst, inst.bundle.g, a.g, with, t, pixel));
    }
    for (auto form : {AdvForm::kWgan, AdvForm::kLog}) {
      Instance inst = random_instance(Variant::kSpAen, t);
      HyperParams h = random_hyper(t);
      h.adv_form = form;
      BundleGrads g;
      generator_gradients(inst.bundle, inst.batch, inst.targets, h, t, &g, {false, false, true});
      note("adv_E", fd_group(inst, inst.bundle.e_head, g.e_head, h, t,
                             [&](const LossBreakdown& l) { return h.beta * l.adv_E; }));
      const Tensor real = testing::random_tensor({5, inst.bundle.config.embedding_dim}, t + 1,
                                                 -2.0, 2.0);
      const Tensor fake = testing::random_tensor({4, inst.bundle.config.embedding_dim}, t + 2,
                                                 -2.0, 2.0);
      Buffer grad;
      critic_gradients(inst.bundle.d, real, fake, form, &grad);
      note("adv_D", fd_max_error(
                        inst.bundle.d.mutable_params(), grad,
                        [&] { return adv_critic_loss(inst.bundle.d, real, fake, form); }, 16, t));
    }
    for (auto v : {Variant::kSpAen, Variant::kSae, Variant::kSplitBranch}) {
      Instance inst = random_instance(v, t);
      HyperParams h = random_hyper(t);
      h.cls_mode = ClsMode::kFullSum;
      BundleGrads g;
      generator_gradients(inst.bundle, inst.batch, inst.targets, h, t, &g);
      auto total = [](const LossBreakdown& l) { return l.total; };
      note("total", fd_group(inst, inst.bundle.e_head, g.e_head, h, t, total));
      if (v == Variant::kSpAen) note("total", fd_group(inst, inst.bundle.f, g.f, h, t, total));
      note("total", fd_group(inst, inst.bundle.g, g.g, h, t, total));
      if (v == Variant::kSplitBranch) {
        auto& m = *inst.bundle.merge;
        note("total", fd_group(inst, m.cls_branch, g.merge_cls, h, t, total));
        note("total", fd_group(inst, m.rec_branch, g.merge_rec, h, t, total));
        note("total", fd_group(inst, m.fuse, g.merge_fuse, h, t, total));
      }
    }
  }
  double overall = 0.0;
  std::string detail = std::to_string(kInstances) + " instances, max rel err";
  for (const auto& [name, err] : worst) {
    overall = std::max(overall, err);
    detail += " " + name + " " + sci(err);
  }
  return verdict(overall < 1e-4, detail);
}

// Every read during training must be a seen-class training image or a seen
// class embedding.
std::string audit(const AccessLog& log, const SplitSpec& splits) {
  const std::set<std::size_t> train(splits.train_ids.begin(), splits.train_ids.end());
  const std::set<int> unseen(splits.unseen_classes.begin(), splits.unseen_classes.end());
  if (log.reads() == 0) return "no reads recorded";
  for (std::size_t id : log.image_ids()) {
    if (!train.count(id)) return "read image " + std::to_string(id) + " outside the train split";
  }
  for (int c : log.classes()) {
    if (unseen.count(c)) return "read unseen class " + std::to_string(c);
  }
  return {};
}

struct AuditTally {
  std::size_t runs = 0;
  std::size_t reads = 0;
  std::vector<std::string> violations;

  void add(const AccessLog& log, const SplitSpec& splits, const std::string& what) {
    ++runs;
    reads += log.reads();
    const std::string v = audit(log, splits);
    if (!v.empty()) violations.push_back(what + ": " + v);
  }
};

void smoke_audit(AuditTally& tally) {
  const auto t = testing::tiny_data();
  for (auto v : {Variant::kSpAen, Variant::kClsOnly, Variant::kDirectMap, Variant::kSae,
                 Variant::kSplitBranch}) {
    AblationSpec spec;
    spec.variant = v;
    spec.net = testing::tiny_net(v);
    spec.epochs = 2;
    spec.seed = 1;
    spec.hyper.batch_size = 4;
    AccessLog log;
    run_variant(spec, t.dataset, t.splits, &log);
    tally.add(log, t.splits, "smoke " + variant_name(v));
  }
}

Verdict zsl_audit(const AuditTally& tally) {
  if (!tally.violations.empty()) return verdict(false, tally.violations.front());
  return verdict(tally.runs > 0, std::to_string(tally.runs) + " training runs, " +
                                     std::to_string(tally.reads) +
                                     " logged reads, none unseen");
}

Verdict clip_invariant() {
  const auto t = testing::tiny_data();
  TrainOptions o = variant_options(Variant::kSpAen, {});
  o.epochs = 10;
  o.seed = 2;
  o.hyper.batch_size = 4;
  std::size_t updates = 0, violations = 0;
  double worst = 0.0;
  o.step.on_critic_update = [&](const ParamMap& d) {
    ++updates;
    double m = 0.0;
    for (double v : d.params()) m = std::max(m, std::abs(v));
    worst = std::max(worst, m);
    violations += m > o.hyper.clip_c;
  };
  TrainState s = TrainState::fresh(build_models(testing::tiny_net()), o.hyper, o.seed);
  train(s, t.dataset, t.splits, o);
  const bool ok = s.step >= 50 && violations == 0 && updates == s.step * o.hyper.n_critic;
  return verdict(ok, std::to_string(s.step) + " steps, " + std::to_string(updates) +
                         " critic updates, max |D param| " + num(worst, 6) + " <= " +
                         num(o.hyper.clip_c, 6));
}

Verdict gradient_partition() {
  auto zero = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
  };
  std::size_t checked = 0;
  std::string failure;
  for (std::uint64_t t = 0; t < 20; ++t) {
    Instance inst = random_instance(Variant::kSpAen, t);
    const HyperParams h = random_hyper(t);
    BundleGrads cls, rec;
    generator_gradients(inst.bundle, inst.batch, inst.targets, h, t, &cls, {true, false, false});
    generator_gradients(inst.bundle, inst.batch, inst.targets, h, t, &rec, {false, true, false});
    if (zero(cls.e_head) || zero(rec.f) || zero(rec.g)) failure = "degenerate instance";
    if (!zero(cls.f) || !zero(cls.g)) failure = "dcls/d(F,G) nonzero at seed " + std::to_string(t);
    if (!zero(rec.e_head)) failure = "drec/dE-head nonzero at seed " + std::to_string(t);
    ++checked;
  }
  if (!failure.empty()) return verdict(false, failure);
  return verdict(true, std::to_string(checked) +
                           " instances, dcls/d(F,G) and drec/dE-head exactly zero");
}

struct SeedRuns {
  std::uint64_t seed = 0;
  std::map<Variant, AblationRow> rows;
};

std::vector<SeedRuns> run_experiments(const Options& opt, AuditTally& tally) {
  std::vector<SeedRuns> out;
  for (std::uint64_t seed : opt.seeds) {
    GenConfig g;
    g.seed = seed;
    const Dataset ds = generate_synthetic(g);
    const SplitSpec splits = make_splits(ds, 5, 3, seed);
    SeedRuns runs;
    runs.seed = seed;
    for (auto v : {Variant::kSpAen, Variant::kClsOnly, Variant::kSae, Variant::kDirectMap,
                   Variant::kSplitBranch}) {
      const auto start = std::chrono::steady_clock::now();
      AblationSpec spec;
      spec.variant = v;
      spec.epochs = opt.epochs;
      spec.seed = seed;
      spec.net.seed = seed;
      AccessLog log;
      runs.rows[v] = run_variant(spec, ds, splits, &log).row;
      tally.add(log, splits, variant_name(v) + " seed " + std::to_string(seed));
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const MetricsReport& m = runs.rows[v].metrics;
      std::cerr << "  seed " << seed << " " << variant_name(v) << ": U->T " << num(m.acc_ut)
                << " S->T " << num(m.acc_st) << " H " << num(m.h) << " AUSUC " << num(m.ausuc)
                << " (" << num(secs, 1) << " s)\n";
    }
    out.push_back(std::move(runs));
  }
  return out;
}

double mean_of(const std::vector<SeedRuns>& runs, Variant v,
               double (*field)(const AblationRow&)) {
  double s = 0.0;
  for (const auto& r : runs) s += field(r.rows.at(v));
  return s / static_cast<double>(runs.size());
}

double acc_ut(const AblationRow& r) { return r.metrics.acc_ut; }
double h_of(const AblationRow& r) { return r.metrics.h; }
double ausuc_of(const AblationRow& r) { return r.metrics.ausuc; }

Verdict directional_full_vs_cls(const std::vector<SeedRuns>& runs) {
  std::size_t wins = 0;
  std::string detail;
  for (const auto& r : runs) {
    const auto& sp = r.rows.at(Variant::kSpAen).metrics;
    const auto& cl = r.rows.at(Variant::kClsOnly).metrics;
    wins += sp.acc_ut > cl.acc_ut && sp.h > cl.h;
    detail += "seed " + std::to_string(r.seed) + " U->T " + num(sp.acc_ut, 3) + "/" +
              num(cl.acc_ut, 3) + " H " + num(sp.h, 3) + "/" + num(cl.h, 3) + "; ";
  }
  const double ut_sp = mean_of(runs, Variant::kSpAen, acc_ut);
  const double ut_cl = mean_of(runs, Variant::kClsOnly, acc_ut);
  const double h_sp = mean_of(runs, Variant::kSpAen, h_of);
  const double h_cl = mean_of(runs, Variant::kClsOnly, h_of);
  detail += "mean U->T " + num(ut_sp, 3) + "/" + num(ut_cl, 3) + " H " + num(h_sp, 3) + "/" +
            num(h_cl, 3) + " (full/cls-only), wins " + std::to_string(wins) + "/" +
            std::to_string(runs.size());
  return verdict(wins >= 2 && ut_sp > ut_cl && h_sp > h_cl, detail);
}

Verdict reconstruction_ordering(const std::vector<SeedRuns>& runs) {
  std::size_t wins = 0, paper_order = 0;
  std::string detail;
  for (const auto& r : runs) {
    const double sp = *r.rows.at(Variant::kSpAen).recon_mse;
    const double sae = *r.rows.at(Variant::kSae).recon_mse;
    const double dm = *r.rows.at(Variant::kDirectMap).recon_mse;
    const double sb = *r.rows.at(Variant::kSplitBranch).recon_mse;
    wins += sp < sae;
    paper_order += sp <= sb && sb <= dm && dm < sae;
    detail += "seed " + std::to_string(r.seed) + " spaen " + num(sp) + " splitbranch " +
              num(sb) + " directmap " + num(dm) + " sae " + num(sae) + "; ";
  }
  detail += "spaen<sae in " + std::to_string(wins) + "/" + std::to_string(runs.size()) +
            ", full ordering in " + std::to_string(paper_order);
  return verdict(wins >= 2, detail);
}

Verdict suc_properties(const std::vector<SeedRuns>& runs) {
  std::string failure;
  std::size_t curves = 0;
  for (const auto& r : runs) {
    for (const auto& [v, row] : r.rows) {
      const MetricsReport& m = row.metrics;
      const auto zero = std::find_if(m.suc.begin(), m.suc.end(),
                                     [](const SucPoint& p) { return p.gamma == 0.0; });
      if (zero == m.suc.end() || zero->acc_ut != m.acc_ut || zero->acc_st != m.acc_st) {
        failure = variant_name(v) + ": gamma 0 differs from direct stacking";
      }
      for (std::size_t i = 1; i < m.suc.size(); ++i) {
        if (m.suc[i].acc_ut < m.suc[i - 1].acc_ut || m.suc[i].acc_st > m.suc[i - 1].acc_st) {
          failure = variant_name(v) + ": sweep not monotone";
        }
      }
      ++curves;
    }
  }
  const double full = mean_of(runs, Variant::kSpAen, ausuc_of);
  const double cls = mean_of(runs, Variant::kClsOnly, ausuc_of);
  std::string detail = std::to_string(curves) + " curves monotone, gamma 0 exact; mean AUSUC " +
                       num(full) + " full vs " + num(cls) + " cls-only";
  if (!failure.empty()) return verdict(false, failure);
  return verdict(full >= cls, detail);
}

Verdict oracle_equivalence() {
  constexpr int kTrials = 120;
  int mismatches = 0;
  std::map<std::string, int> counts;
  for (int trial = 0; trial < kTrials; ++trial) {
    const testing::Toy t = testing::random_toy(trial);
    const std::set<int> seen(t.seen.begin(), t.seen.end());
    mismatches += predict(t.scores) != testing::oracle_predict(t.scores, {}, 0.0);
    ++counts["predict"];

    Rng rng(trial);
    std::uniform_int_distribution<int> label(0, 5), len(1, 40);
    std::vector<int> pred, truth;
    for (int i = 0, n = len(rng); i < n; ++i) {
      pred.push_back(label(rng));
      truth.push_back(label(rng));
    }
    mismatches +=
        std::abs(per_class_top1(pred, truth) - testing::oracle_top1(pred, truth)) > 1e-15;
    ++counts["per_class_top1"];

    const auto grid = default_gamma_grid(t.scores, 41);
    const auto curve = suc_curve(t.scores, t.seen, grid);
    bool curve_ok = curve.size() == grid.size();
    for (std::size_t g = 0; curve_ok && g < grid.size(); ++g) {
      const auto p = testing::oracle_predict(t.scores, seen, grid[g]);
      std::vector<int> ps, ts, pu, tu;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const bool s = seen.count(t.scores.labels[i]);
        (s ? ps : pu).push_back(p[i]);
        (s ? ts : tu).push_back(t.scores.labels[i]);
      }
      curve_ok = curve[g].gamma == grid[g] &&
                 std::abs(curve[g].acc_st - testing::oracle_top1(ps, ts)) <= 1e-15 &&
                 std::abs(curve[g].acc_ut - testing::oracle_top1(pu, tu)) <= 1e-15;
    }
    mismatches += !curve_ok;
    ++counts["suc_curve"];

    const auto full = suc_curve(t.scores, t.seen, default_gamma_grid(t.scores));
    mismatches += std::abs(ausuc(full) - testing::oracle_area(full)) > 1e-12;
    ++counts["ausuc"];
  }
  std::string detail;
  for (const auto& [name, n] : counts) detail += name + " " + std::to_string(n) + " trials, ";
  return verdict(mismatches == 0, detail + std::to_string(mismatches) + " mismatches");
}

Verdict benchmark_cosines(const Options& opt) {
  if (opt.benchmark_dir.empty()) return {Status::kSkip, "no benchmark directory given"};
  const std::vector<std::pair<std::string, double>> expected{
      {"SUN", 0.9851}, {"CUB", 0.9575}, {"AWA", 0.7459}, {"aPY", 0.5847}};
  const Granularity g =
      opt.benchmark_granularity == "image" ? Granularity::kPerImage : Granularity::kPerClass;
  std::size_t found = 0;
  bool ok = true;
  std::string detail;
  for (const auto& [name, target] : expected) {
    const fs::path dir = fs::path(opt.benchmark_dir) / name;
    if (!fs::exists(dir / "classes.csv") || !fs::exists(dir / "splits.csv")) continue;
    ++found;
    const ExternalAttributes ext =
        load_external_attributes(dir / "classes.csv", dir / "splits.csv");
    const bool image = g == Granularity::kPerImage;
    const VarianceShift shift = variance_shift(
        ext.class_attributes, image ? ext.train_image_labels : ext.splits.seen_classes,
        image ? ext.test_image_labels : ext.splits.unseen_classes, g);
    ok &= std::abs(shift.cosine - target) <= 0.001;
    detail += name + " " + num(shift.cosine) + " (" + num(target) + ") ";
  }
  if (found == 0) return {Status::kSkip, "no benchmark files under " + opt.benchmark_dir};
  return verdict(ok, detail);
}

int run(const Options& opt) {
  std::vector<std::pair<int, std::string>> titles{
      {1, "harmonic mean reproduces printed H"},
      {2, "finite-difference gradient checks"},
      {3, "training never reads unseen-class data"},
      {4, "critic weights stay clipped"},
      {5, "gradient partition"},
      {6, "full objective beats cls-only on U->T and H"},
      {7, "reconstruction MSE spaen < sae"},
      {8, "SUC properties and AUSUC full >= cls-only"},
      {9, "eval matches brute-force oracles"},
      {10, "benchmark attribute variance cosines"},
  };
  std::map<int, Verdict> verdicts;
  verdicts[1] = metric_arithmetic();
  verdicts[2] = gradient_correctness();
  AuditTally tally;
  smoke_audit(tally);
  verdicts[4] = clip_invariant();
  verdicts[5] = gradient_partition();
  verdicts[9] = oracle_equivalence();
  verdicts[10] = benchmark_cosines(opt);
  if (opt.skip_training) {
    for (int c : {6, 7, 8}) verdicts[c] = {Status::kSkip, "training runs disabled"};
  } else {
    std::cerr << "training " << opt.seeds.size() << " seeds x 5 variants, " << opt.epochs
              << " epochs\n";
    const auto runs = run_experiments(opt, tally);
    verdicts[6] = directional_full_vs_cls(runs);
    verdicts[7] = reconstruction_ordering(runs);
    verdicts[8] = suc_properties(runs);
  }
  verdicts[3] = zsl_audit(tally);

  const std::set<int> allowed(opt.allow_fail.begin(), opt.allow_fail.end());
  int unexpected = 0;
  for (const auto& [id, title] : titles) {
    const Verdict& v = verdicts[id];
    const char* tag = v.status == Status::kPass ? "PASS" : v.status == Status::kFail ? "FAIL"
                                                                                     : "SKIP";
    std::cout << tag << " " << id << " " << title << ": " << v.detail;
    if (v.status == Status::kFail && allowed.count(id)) std::cout << " [known failure]";
    std::cout << "\n";
    unexpected += v.status == Status::kFail && !allowed.count(id);
  }
  return unexpected == 0 ? 0 : 1;
}

}  // namespace
}  // namespace spaen

int main(int argc, char** argv) {
  spaen::Options opt;
  if (const char* dir = std::getenv("SPAEN_BENCHMARK_DIR")) opt.benchmark_dir = dir;
  CLI::App app{"Acceptance checks"};
  app.add_option("--epochs", opt.epochs, "Epochs per variant in the ablation runs")
      ->check(CLI::PositiveNumber);
  app.add_option("--seeds", opt.seeds, "Seeds for the ablation runs");
  app.add_option("--allow-fail", opt.allow_fail,
                 "Criteria whose failure does not change the exit status");
  app.add_option("--benchmark-dir", opt.benchmark_dir,
                 "Directory with <NAME>/classes.csv and <NAME>/splits.csv");
  app.add_option("--benchmark-granularity", opt.benchmark_granularity, "class or image")
      ->check(CLI::IsMember({"class", "image"}));
  app.add_flag("--skip-training", opt.skip_training, "Skip the ablation runs");
  CLI11_PARSE(app, argc, argv);
  try {
    return spaen::run(opt);
  } catch (const std::exception& e) {
    std::cerr << "acceptance: " << e.what() << "\n";
    return 2;
  }
}
