#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spaen/tensor.hpp"

namespace spaen {

// Image with values in [0, 1], stored channel-major (C x H x W).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(c * height + y) * width + x];
  }
  Shape shape() const { return {channels, height, width}; }

  bool operator==(const Image&) const = default;
};

Image image_from_sample(std::span<const double> chw, const Shape& shape);
Tensor stack_images(const std::vector<const Image*>& images);

struct Dataset {
  std::vector<Image> images;
  std::vector<int> labels;
  // K x d, entries in [0, 1].
  Eigen::MatrixXd class_attributes;
  std::vector<std::string> class_names;
  // Filled by the generator: classes whose low-variance attributes were
  // spread out, and the indices of those attributes.
  std::vector<int> designated_unseen;
  std::vector<int> low_variance_attributes;

  int num_classes() const { return static_cast<int>(class_attributes.rows()); }
  int num_attributes() const { return static_cast<int>(class_attributes.cols()); }
  Shape image_shape() const;

  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

struct SplitSpec {
  std::vector<int> seen_classes;
  std::vector<int> unseen_classes;
  std::vector<int> val_classes;  // subset of seen_classes
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> seen_test_ids;
  std::vector<std::size_t> unseen_test_ids;

  // Seen classes that are not held out for validation.
  std::vector<int> train_classes() const;
  void validate(const Dataset& dataset) const;
  bool operator==(const SplitSpec&) const = default;
};

struct GenConfig {
  int num_classes = 20;
  int num_attributes = 24;
  int n_per_class = 60;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  double noise_std = 0.05;
  // Per-image attribute jitter, as a multiple of noise_std.
  double attribute_jitter_ratio = 2.0;
  double low_variance_fraction = 0.25;
  int designated_unseen = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Error raised while reading dataset files; message carries path and line.
class DataError : public std::runtime_error {
 public:
  DataError(const std::filesystem::path& path, std::size_t line,
            const std::string& what);
  DataError(const std::filesystem::path& path, const std::string& what);
};

Dataset generate_synthetic(const GenConfig& config);

// Renders one image from an attribute vector. Attribute j drives color
// channel (j mod C) inside grid cell (j div C).
Image render_attributes(std::span<const double> attributes, std::size_t height,
                        std::size_t width, std::size_t channels);

SplitSpec make_splits(const Dataset& dataset, int unseen_count, int val_count,
                      std::uint64_t seed, double seen_test_fraction = 0.2);

void save_dataset(const Dataset& dataset, const SplitSpec& splits,
                  const std::filesystem::path& dir,
                  const std::optional<GenConfig>& config = std::nullopt);
std::pair<Dataset, SplitSpec> load_dataset(const std::filesystem::path& dir);

// Binary PPM (P6) for 3 channels, PGM (P5) for 1 channel; 8-bit.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// Tiles images into a grid, row-major, `columns` per row.
Image contact_sheet(const std::vector<Image>& images, std::size_t columns);

struct ExternalAttributes {
  std::vector<int> class_ids;  // as listed in the file; row i <-> class_ids[i]
  std::vector<std::string> class_names;
  Eigen::MatrixXd class_attributes;
  // Class sets refer to row indices. Image id lists are filled only when the
  // split file is image-level.
  SplitSpec splits;
  // Row index for every image in the split file (image-level files only),
  // parallel to the union of the image id lists.
  std::vector<int> train_image_labels;
  std::vector<int> test_image_labels;
};

// classes_file: class_id,name,a_1..a_d. splits_file is either class-level
// (class_id,role with role in {seen,unseen,val}) or image-level
// (image_id,split,class_id as written by save_dataset).
ExternalAttributes load_external_attributes(const std::filesystem::path& classes_file,
                                            const std::filesystem::path& splits_file);

// Records every image and class embedding read through a DatasetAccessor.
class AccessLog {
 public:
  void record_image(std::size_t id, int label);
  void record_class(int class_id);

  const std::set<std::size_t>& image_ids() const { return image_ids_; }
  // Labels of all images read plus all class embeddings read.
  const std::set<int>& classes() const { return classes_; }
  std::size_t reads() const { return reads_; }

 private:
  std::set<std::size_t> image_ids_;
  std::set<int> classes_;
  std::size_t reads_ = 0;
};

// Read-only view of a Dataset that reports every access to an AccessLog.
class DatasetAccessor {
 public:
  explicit DatasetAccessor(const Dataset& dataset, AccessLog* log = nullptr)
      : dataset_(dataset), log_(log) {}

  const Image& image(std::size_t id) const;
  int label(std::size_t id) const;
  // Unit-norm attribute row of a class.
  std::vector<double> class_embedding(int class_id) const;

  std::size_t num_images() const { return dataset_.images.size(); }
  int num_attributes() const { return dataset_.num_attributes(); }
  Shape image_shape() const { return dataset_.image_shape(); }

 private:
  const Dataset& dataset_;
  AccessLog* log_;
};

}  // namespace spaen
