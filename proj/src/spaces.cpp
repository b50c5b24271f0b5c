#include "spaen/spaces.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace spaen {

std::vector<double> l2_normalize(std::span<const double> v) {
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (!(norm2 > 0.0) || !std::isfinite(norm2)) {
    throw std::invalid_argument("l2_normalize: vector has zero or non-finite norm");
  }
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x *= inv;
  return out;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& rows) {
  Eigen::MatrixXd out(rows.rows(), rows.cols());
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const double norm = rows.row(r).norm();
    if (!(norm > 0.0)) {
      throw std::invalid_argument("normalize_rows: row " + std::to_string(r) +
                                  " is all zeros");
    }
    out.row(r) = rows.row(r) / norm;
  }
  return out;
}

VarianceProfile attribute_variance(const Eigen::MatrixXd& attribute_rows,
                                   std::string source) {
  const Eigen::Index n = attribute_rows.rows();
  if (n < 2) {
    throw std::invalid_argument("attribute_variance: need at least 2 rows, got " +
                                std::to_string(n));
  }
  // Welford accumulation per column.
  const Eigen::Index d = attribute_rows.cols();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  std::vector<double> m2(static_cast<std::size_t>(d), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double x = attribute_rows(i, j);
      const double delta = x - mean[j];
      mean[j] += delta / static_cast<double>(i + 1);
      m2[j] += delta * (x - mean[j]);
    }
  }
  VarianceProfile profile;
  profile.source = std::move(source);
  profile.variance.resize(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    profile.variance[j] = std::max(0.0, m2[j] / static_cast<double>(n));
  }
  return profile;
}

double variance_cosine(const VarianceProfile& a, const VarianceProfile& b) {
  if (a.variance.size() != b.variance.size()) {
    throw std::invalid_argument("variance_cosine: dimension mismatch (" +
                                std::to_string(a.variance.size()) + " vs " +
                                std::to_string(b.variance.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < a.variance.size(); ++j) {
    dot += a.variance[j] * b.variance[j];
    na += a.variance[j] * a.variance[j];
    nb += b.variance[j] * b.variance[j];
  }
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw std::invalid_argument("variance_cosine: zero variance profile");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& class_attributes,
                            const std::vector<int>& labels,
                            Granularity granularity) {
  std::vector<int> rows;
  if (granularity == Granularity::kPerClass) {
    const std::set<int> unique(labels.begin(), labels.end());
    rows.assign(unique.begin(), unique.end());
  } else {
    rows = labels;
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      class_attributes.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= class_attributes.rows()) {
      throw std::out_of_range("variance_shift: label " + std::to_string(rows[i]) +
                              " has no attribute row");
    }
    out.row(static_cast<Eigen::Index>(i)) = class_attributes.row(rows[i]);
  }
  return out;
}

}  // namespace

VarianceShift variance_shift(const Eigen::MatrixXd& class_attributes,
                             const std::vector<int>& train_labels,
                             const std::vector<int>& test_labels,
                             Granularity granularity) {
  VarianceShift shift;
  shift.train = attribute_variance(
      gather_rows(class_attributes, train_labels, granularity), "train");
  shift.test = attribute_variance(
      gather_rows(class_attributes, test_labels, granularity), "test");
  shift.cosine = variance_cosine(shift.train, shift.test);
  return shift;
}

}  // namespace spaen
