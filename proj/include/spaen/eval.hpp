#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spaen/data.hpp"
#include "spaen/nets.hpp"
#include "spaen/objectives.hpp"

namespace spaen {

// Rows are test images, columns candidate classes; entry = y_l . E(x).
struct ScoreMatrix {
  Eigen::MatrixXd scores;
  std::vector<int> class_ids;
  std::vector<int> labels;  // ground truth per row
};

ScoreMatrix score(const Tensor& embeddings, const ClassEmbeddings& candidates,
                  std::vector<int> labels);
ScoreMatrix score(const ModelBundle& bundle, const Tensor& images,
                  const ClassEmbeddings& candidates, std::vector<int> labels);

// Row-wise argmax; ties go to the smallest class id.
std::vector<int> predict(const ScoreMatrix& scores);

// Argmax after subtracting gamma_cal from the seen-class columns. Throws if
// every candidate is seen.
std::vector<int> predict_calibrated(const ScoreMatrix& scores,
                                    const std::vector<int>& seen_class_ids,
                                    double gamma_cal);

// Mean over classes of the fraction of that class's images predicted
// correctly. Classes are taken from the ground truth.
double per_class_top1(const std::vector<int>& predictions,
                      const std::vector<int>& ground_truth);
// Same over an explicit class list; throws if a listed class has no image.
double per_class_top1(const std::vector<int>& predictions,
                      const std::vector<int>& ground_truth,
                      const std::vector<int>& classes);

enum class Setting { kUnseenUnseen, kUnseenAll, kSeenAll };

std::string setting_name(Setting s);  // "U->U", "U->T", "S->T"

double evaluate(const ModelBundle& bundle, const Dataset& dataset, const SplitSpec& splits,
                Setting setting);

// 2ab / (a + b), defined as 0 when both are 0.
double harmonic_mean(double acc_seen, double acc_unseen);

struct SucPoint {
  double gamma = 0.0;
  double acc_ut = 0.0;
  double acc_st = 0.0;
};

// Sweeps the calibration factor. Rows whose label is in seen_class_ids count
// toward acc_st, the others toward acc_ut.
std::vector<SucPoint> suc_curve(const ScoreMatrix& scores,
                                const std::vector<int>& seen_class_ids,
                                const std::vector<double>& gamma_grid);

// `points` uniform values over [-spread, +spread], spread = max - min score.
std::vector<double> default_gamma_grid(const ScoreMatrix& scores, std::size_t points = 201);

// Trapezoidal area under the (acc_ut, acc_st) curve after sorting by acc_ut
// and dropping duplicate points.
double ausuc(const std::vector<SucPoint>& curve);

struct MetricsReport {
  double acc_uu = 0.0;
  double acc_ut = 0.0;
  double acc_st = 0.0;
  double h = 0.0;
  std::vector<SucPoint> suc;
  double ausuc = 0.0;
};

MetricsReport evaluate_all(const ModelBundle& bundle, const Dataset& dataset,
                           const SplitSpec& splits,
                           const std::optional<std::vector<double>>& gamma_grid = std::nullopt);

}  // namespace spaen
