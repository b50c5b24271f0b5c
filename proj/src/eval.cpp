#include "spaen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace spaen {

ScoreMatrix score(const Tensor& embeddings, const ClassEmbeddings& candidates,
                  std::vector<int> labels) {
  const std::size_t n = embeddings.batch();
  const std::size_t d = embeddings.sample_size();
  if (candidates.size() == 0) throw std::invalid_argument("score: empty candidate set");
  if (candidates.dim() != d) {
    throw std::invalid_argument("score: embedding width " + std::to_string(d) +
                                " does not match class embeddings " +
                                std::to_string(candidates.dim()));
  }
  if (!labels.empty() && labels.size() != n) {
    throw std::invalid_argument("score: labels do not match rows");
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> e(embeddings.data.data(), static_cast<Eigen::Index>(n),
                             static_cast<Eigen::Index>(d));
  ScoreMatrix out;
  out.scores = e * candidates.vectors.transpose();
  out.class_ids = candidates.class_ids;
  out.labels = std::move(labels);
  if (!out.scores.allFinite()) throw std::runtime_error("score: non-finite scores");
  return out;
}

ScoreMatrix score(const ModelBundle& bundle, const Tensor& images,
                  const ClassEmbeddings& candidates, std::vector<int> labels) {
  return score(classification_embedding(bundle, images), candidates, std::move(labels));
}

namespace {

std::vector<int> biased_argmax(const ScoreMatrix& s, const std::vector<double>& bias) {
  const Eigen::Index rows = s.scores.rows();
  const Eigen::Index cols = s.scores.cols();
  if (cols == 0) throw std::invalid_argument("predict: no candidate classes");
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    int best = -1;
    double best_score = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double v = s.scores(r, c) - bias[static_cast<std::size_t>(c)];
      const int id = s.class_ids[static_cast<std::size_t>(c)];
      if (best < 0 || v > best_score || (v == best_score && id < best)) {
        best = id;
        best_score = v;
      }
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

}  // namespace

std::vector<int> predict(const ScoreMatrix& scores) {
  return biased_argmax(scores, std::vector<double>(scores.class_ids.size(), 0.0));
}

std::vector<int> predict_calibrated(const ScoreMatrix& scores,
                                    const std::vector<int>& seen_class_ids,
                                    double gamma_cal) {
  const std::set<int> seen(seen_class_ids.begin(), seen_class_ids.end());
  std::vector<double> bias(scores.class_ids.size(), 0.0);
  bool has_unseen = false;
  for (std::size_t c = 0; c < scores.class_ids.size(); ++c) {
    if (seen.count(scores.class_ids[c])) {
      bias[c] = gamma_cal;
    } else {
      has_unseen = true;
    }
  }
  if (!has_unseen) {
    throw std::invalid_argument("predict_calibrated: candidate set has no unseen class");
  }
  return biased_argmax(scores, bias);
}

double per_class_top1(const std::vector<int>& predictions,
                      const std::vector<int>& ground_truth,
                      const std::vector<int>& classes) {
  if (predictions.size() != ground_truth.size()) {
    throw std::invalid_argument("per_class_top1: prediction/label count mismatch");
  }
  if (classes.empty()) throw std::invalid_argument("per_class_top1: no classes");
  std::map<int, std::pair<std::size_t, std::size_t>> tally;  // class -> (correct, total)
  for (int c : classes) tally[c] = {0, 0};
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    auto it = tally.find(ground_truth[i]);
    if (it == tally.end()) continue;
    it->second.second += 1;
    if (predictions[i] == ground_truth[i]) it->second.first += 1;
  }
  double sum = 0.0;
  for (const auto& [c, ct] : tally) {
    if (ct.second == 0) {
      throw std::invalid_argument("per_class_top1: class " + std::to_string(c) +
                                  " has no test images");
    }
    sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
  }
  return sum / static_cast<double>(tally.size());
}

double per_class_top1(const std::vector<int>& predictions,
                      const std::vector<int>& ground_truth) {
  const std::set<int> classes(ground_truth.begin(), ground_truth.end());
  return per_class_top1(predictions, ground_truth,
                        std::vector<int>(classes.begin(), classes.end()));
}

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::kUnseenUnseen: return "U->U";
    case Setting::kUnseenAll: return "U->T";
    case Setting::kSeenAll: return "S->T";
  }
  return "?";
}

namespace {

std::vector<int> all_classes(const SplitSpec& splits) {
  std::vector<int> all = splits.seen_classes;
  all.insert(all.end(), splits.unseen_classes.begin(), splits.unseen_classes.end());
  std::sort(all.begin(), all.end());
  return all;
}

Tensor gather_images(const Dataset& ds, const std::vector<std::size_t>& ids,
                     std::vector<int>* labels) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(ids.size());
  for (auto id : ids) {
    ptrs.push_back(&ds.images[id]);
    if (labels) labels->push_back(ds.labels[id]);
  }
  return stack_images(ptrs);
}

}  // namespace

double evaluate(const ModelBundle& bundle, const Dataset& dataset, const SplitSpec& splits,
                Setting setting) {
  const auto& ids =
      setting == Setting::kSeenAll ? splits.seen_test_ids : splits.unseen_test_ids;
  if (ids.empty()) {
    throw std::invalid_argument("evaluate: " + setting_name(setting) +
                                " needs a non-empty test split");
  }
  const std::vector<int> candidates = setting == Setting::kUnseenUnseen
                                          ? splits.unseen_classes
                                          : all_classes(splits);
  std::vector<int> labels;
  const Tensor images = gather_images(dataset, ids, &labels);
  const ScoreMatrix s =
      score(bundle, images, class_embeddings(dataset.class_attributes, candidates), labels);
  return per_class_top1(predict(s), s.labels);
}

double harmonic_mean(double acc_seen, double acc_unseen) {
  const double sum = acc_seen + acc_unseen;
  if (sum == 0.0) return 0.0;
  return 2.0 * acc_seen * acc_unseen / sum;
}

std::vector<SucPoint> suc_curve(const ScoreMatrix& scores,
                                const std::vector<int>& seen_class_ids,
                                const std::vector<double>& gamma_grid) {
  if (gamma_grid.empty()) throw std::invalid_argument("suc_curve: empty gamma grid");
  const std::set<int> seen(seen_class_ids.begin(), seen_class_ids.end());
  std::vector<std::size_t> seen_rows, unseen_rows;
  for (std::size_t i = 0; i < scores.labels.size(); ++i) {
    (seen.count(scores.labels[i]) ? seen_rows : unseen_rows).push_back(i);
  }
  if (seen_rows.empty() || unseen_rows.empty()) {
    throw std::invalid_argument("suc_curve: need both seen and unseen test rows");
  }
  auto subset_accuracy = [&](const std::vector<int>& pred, const std::vector<std::size_t>& rows) {
    std::vector<int> p, g;
    for (auto r : rows) {
      p.push_back(pred[r]);
      g.push_back(scores.labels[r]);
    }
    return per_class_top1(p, g);
  };
  std::vector<SucPoint> curve;
  curve.reserve(gamma_grid.size());
  for (double gamma : gamma_grid) {
    const auto pred = predict_calibrated(scores, seen_class_ids, gamma);
    curve.push_back({gamma, subset_accuracy(pred, unseen_rows), subset_accuracy(pred, seen_rows)});
  }
  return curve;
}

std::vector<double> default_gamma_grid(const ScoreMatrix& scores, std::size_t points) {
  if (points < 2) throw std::invalid_argument("default_gamma_grid: need >= 2 points");
  double spread = scores.scores.size() ? scores.scores.maxCoeff() - scores.scores.minCoeff() : 0.0;
  // A strictly larger half-width guarantees every prediction flips at the ends.
  spread = spread > 0.0 ? spread * 1.01 + 1e-9 : 1.0;
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = -spread + 2.0 * spread * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  // Exact zero in the middle so direct stacking is always on the curve.
  if (points % 2 == 1) grid[points / 2] = 0.0;
  return grid;
}

double ausuc(const std::vector<SucPoint>& curve) {
  if (curve.size() < 2) throw std::invalid_argument("ausuc: need at least two points");
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : curve) pts.emplace_back(p.acc_ut, p.acc_st);
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.first < b.first || (a.first == b.first && a.second > b.second);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
  }
  return std::clamp(area, 0.0, 1.0);
}

MetricsReport evaluate_all(const ModelBundle& bundle, const Dataset& dataset,
                           const SplitSpec& splits,
                           const std::optional<std::vector<double>>& gamma_grid) {
  MetricsReport report;
  report.acc_uu = evaluate(bundle, dataset, splits, Setting::kUnseenUnseen);

  std::vector<std::size_t> ids = splits.seen_test_ids;
  ids.insert(ids.end(), splits.unseen_test_ids.begin(), splits.unseen_test_ids.end());
  std::vector<int> labels;
  const Tensor images = gather_images(dataset, ids, &labels);
  const ScoreMatrix s = score(bundle, images,
                              class_embeddings(dataset.class_attributes, all_classes(splits)),
                              labels);
  const auto direct = suc_curve(s, splits.seen_classes, {0.0}).front();
  report.acc_ut = direct.acc_ut;
  report.acc_st = direct.acc_st;
  report.h = harmonic_mean(report.acc_st, report.acc_ut);
  report.suc = suc_curve(s, splits.seen_classes, gamma_grid ? *gamma_grid : default_gamma_grid(s));
  report.ausuc = ausuc(report.suc);
  return report;
}

}  // namespace spaen
