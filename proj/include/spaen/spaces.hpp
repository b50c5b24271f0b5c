#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spaen {

// A class label embedded in the shared semantic space; unit L2 norm.
struct ClassEmbedding {
  int class_id = -1;
  std::vector<double> vector;
};

// Per-attribute population variance over a set of attribute rows.
struct VarianceProfile {
  std::vector<double> variance;
  std::string source;
};

// Throws std::invalid_argument for the zero vector.
std::vector<double> l2_normalize(std::span<const double> v);

// Row-wise l2_normalize; a zero row is an error.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& rows);

// Column variances of an N x d matrix (1/N normalization). Requires N >= 2.
VarianceProfile attribute_variance(const Eigen::MatrixXd& attribute_rows,
                                   std::string source = {});

// Cosine of the angle between two variance vectors. 1 means the two sets
// agree on which attributes are discriminative; lower values mean a larger
// shift in attribute discriminability between them.
double variance_cosine(const VarianceProfile& a, const VarianceProfile& b);

enum class Granularity {
  kPerClass,  // one row per distinct class in the set
  kPerImage,  // one row per image, each inheriting its class row
};

struct VarianceShift {
  VarianceProfile train;
  VarianceProfile test;
  double cosine = 0.0;
};

// Compares attribute variance between a train and a test image population,
// where images carry only class-level attribute rows.
VarianceShift variance_shift(const Eigen::MatrixXd& class_attributes,
                             const std::vector<int>& train_labels,
                             const std::vector<int>& test_labels,
                             Granularity granularity);

}  // namespace spaen
