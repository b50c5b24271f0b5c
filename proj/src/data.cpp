#include "spaen/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "spaen/json_io.hpp"
#include "spaen/spaces.hpp"

namespace spaen {

namespace fs = std::filesystem;
using nlohmann::json;

Shape Dataset::image_shape() const {
  if (images.empty()) return {};
  return images.front().shape();
}

void Dataset::validate() const {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("Dataset: " + std::to_string(images.size()) +
                                " images but " + std::to_string(labels.size()) +
                                " labels");
  }
  const int k = num_classes();
  if (!class_names.empty() && static_cast<int>(class_names.size()) != k) {
    throw std::invalid_argument("Dataset: class_names does not match class count");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw std::invalid_argument("Dataset: image " + std::to_string(i) +
                                  " has label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(k) + ")");
    }
  }
  for (int c = 0; c < k; ++c) {
    if (class_attributes.row(c).cwiseAbs().maxCoeff() == 0.0) {
      throw std::invalid_argument("Dataset: class " + std::to_string(c) +
                                  " has an all-zero attribute row");
    }
  }
  const Shape shape = image_shape();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != shape) {
      throw std::invalid_argument("Dataset: image " + std::to_string(i) +
                                  " has shape " + shape_string(images[i].shape()) +
                                  ", expected " + shape_string(shape));
    }
  }
}

std::vector<int> SplitSpec::train_classes() const {
  std::vector<int> out;
  for (int c : seen_classes) {
    if (std::find(val_classes.begin(), val_classes.end(), c) == val_classes.end()) {
      out.push_back(c);
    }
  }
  return out;
}

void SplitSpec::validate(const Dataset& dataset) const {
  const std::set<int> seen(seen_classes.begin(), seen_classes.end());
  const std::set<int> unseen(unseen_classes.begin(), unseen_classes.end());
  for (int c : unseen) {
    if (seen.count(c)) {
      throw std::invalid_argument("SplitSpec: class " + std::to_string(c) +
                                  " is both seen and unseen");
    }
  }
  for (int c : val_classes) {
    if (!seen.count(c)) {
      throw std::invalid_argument("SplitSpec: validation class " +
                                  std::to_string(c) + " is not seen");
    }
  }
  std::set<std::size_t> all_ids;
  auto check = [&](const std::vector<std::size_t>& ids, const std::set<int>& allowed,
                   const char* name) {
    for (std::size_t id : ids) {
      if (id >= dataset.images.size()) {
        throw std::invalid_argument(std::string("SplitSpec: ") + name + " id " +
                                    std::to_string(id) + " out of range");
      }
      if (!all_ids.insert(id).second) {
        throw std::invalid_argument("SplitSpec: image " + std::to_string(id) +
                                    " appears in more than one split");
      }
      if (!allowed.count(dataset.labels[id])) {
        throw std::invalid_argument(std::string("SplitSpec: ") + name + " image " +
                                    std::to_string(id) + " has class " +
                                    std::to_string(dataset.labels[id]) +
                                    " outside its partition");
      }
    }
  };
  check(train_ids, seen, "train");
  check(seen_test_ids, seen, "seen_test");
  check(unseen_test_ids, unseen, "unseen_test");
}

void GenConfig::validate() const {
  if (num_classes <= 0) throw std::invalid_argument("GenConfig: K must be positive");
  if (num_attributes <= 0) throw std::invalid_argument("GenConfig: d must be positive");
  if (n_per_class <= 0) {
    throw std::invalid_argument("GenConfig: n_per_class must be positive");
  }
  if (height == 0 || width == 0 || channels == 0) {
    throw std::invalid_argument("GenConfig: image dimensions must be positive");
  }
  if (!(noise_std >= 0.0)) throw std::invalid_argument("GenConfig: noise_std < 0");
  if (!(attribute_jitter_ratio >= 0.0)) {
    throw std::invalid_argument("GenConfig: attribute_jitter_ratio < 0");
  }
  if (!(low_variance_fraction >= 0.0 && low_variance_fraction <= 1.0)) {
    throw std::invalid_argument("GenConfig: low_variance_fraction outside [0, 1]");
  }
  if (designated_unseen < 0 || designated_unseen >= num_classes) {
    throw std::invalid_argument(
        "GenConfig: designated_unseen must leave at least one seen class");
  }
}

DataError::DataError(const fs::path& path, std::size_t line, const std::string& what)
    : std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what) {}

DataError::DataError(const fs::path& path, const std::string& what)
    : std::runtime_error(path.string() + ": " + what) {}

Image image_from_sample(std::span<const double> chw, const Shape& shape) {
  if (shape.size() != 3 || shape_size(shape) != chw.size()) {
    throw std::invalid_argument("image_from_sample: bad shape " + shape_string(shape));
  }
  Image img(shape[1], shape[2], shape[0]);
  std::copy(chw.begin(), chw.end(), img.pixels.begin());
  return img;
}

Tensor stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Shape s = images.front()->shape();
  Shape batch_shape = s;
  batch_shape.insert(batch_shape.begin(), images.size());
  Tensor out(batch_shape);
  const std::size_t n = shape_size(s);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) {
      throw std::invalid_argument("stack_images: mixed image shapes");
    }
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

namespace {

struct CellGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

CellGrid cell_grid(std::size_t cells) {
  CellGrid g;
  g.cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(cells))));
  g.rows = (cells + g.cols - 1) / g.cols;
  return g;
}

}  // namespace

Image render_attributes(std::span<const double> attributes, std::size_t height,
                        std::size_t width, std::size_t channels) {
  Image img(height, width, channels);
  const std::size_t cells = (attributes.size() + channels - 1) / channels;
  const CellGrid grid = cell_grid(cells);
  const std::size_t cell_h = height / grid.rows;
  const std::size_t cell_w = width / grid.cols;
  if (cell_h == 0 || cell_w == 0) {
    throw std::invalid_argument("render_attributes: image too small for " +
                                std::to_string(attributes.size()) + " attributes");
  }
  const std::size_t margin_y = cell_h >= 3 ? 1 : 0;
  const std::size_t margin_x = cell_w >= 3 ? 1 : 0;
  for (std::size_t j = 0; j < attributes.size(); ++j) {
    const std::size_t cell = j / channels;
    const std::size_t channel = j % channels;
    const std::size_t y0 = (cell / grid.cols) * cell_h;
    const std::size_t x0 = (cell % grid.cols) * cell_w;
    for (std::size_t y = y0 + margin_y; y < y0 + cell_h - margin_y; ++y) {
      for (std::size_t x = x0 + margin_x; x < x0 + cell_w - margin_x; ++x) {
        img.at(y, x, channel) = attributes[j];
      }
    }
  }
  return img;
}

Dataset generate_synthetic(const GenConfig& config) {
  config.validate();
  const int k = config.num_classes;
  const int d = config.num_attributes;
  Rng rng(derive_seed(config.seed, 0));

  Dataset ds;
  std::vector<int> classes(static_cast<std::size_t>(k));
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  ds.designated_unseen.assign(classes.begin(), classes.begin() + config.designated_unseen);
  std::sort(ds.designated_unseen.begin(), ds.designated_unseen.end());

  const int low_count =
      static_cast<int>(std::lround(config.low_variance_fraction * static_cast<double>(d)));
  std::vector<int> attrs(static_cast<std::size_t>(d));
  std::iota(attrs.begin(), attrs.end(), 0);
  std::shuffle(attrs.begin(), attrs.end(), rng);
  ds.low_variance_attributes.assign(attrs.begin(), attrs.begin() + low_count);
  std::sort(ds.low_variance_attributes.begin(), ds.low_variance_attributes.end());

  std::uniform_real_distribution<double> regular(0.05, 1.0);
  std::uniform_real_distribution<double> center_dist(0.35, 0.65);
  std::uniform_real_distribution<double> tight(-0.02, 0.02);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ds.class_attributes.resize(k, d);
  for (int c = 0; c < k; ++c) {
    for (int j = 0; j < d; ++j) ds.class_attributes(c, j) = regular(rng);
  }
  const std::set<int> unseen(ds.designated_unseen.begin(), ds.designated_unseen.end());
  const int n_unseen = config.designated_unseen;
  for (int j : ds.low_variance_attributes) {
    const double center = center_dist(rng);
    // Stratified over [0.05, 0.95] so the designated classes are guaranteed
    // to spread.
    std::vector<int> strata(static_cast<std::size_t>(n_unseen));
    std::iota(strata.begin(), strata.end(), 0);
    std::shuffle(strata.begin(), strata.end(), rng);
    int u = 0;
    for (int c = 0; c < k; ++c) {
      if (unseen.count(c)) {
        const double pos = (strata[static_cast<std::size_t>(u++)] + unit(rng)) / n_unseen;
        ds.class_attributes(c, j) = 0.05 + 0.9 * pos;
      } else {
        ds.class_attributes(c, j) = center + tight(rng);
      }
    }
  }

  for (int c = 0; c < k; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02d", c);
    ds.class_names.emplace_back(name);
  }

  const std::size_t total = static_cast<std::size_t>(k) * config.n_per_class;
  ds.images.resize(total);
  ds.labels.resize(total);
  const double jitter_std = config.attribute_jitter_ratio * config.noise_std;
  for (std::size_t id = 0; id < total; ++id) {
    const int c = static_cast<int>(id / static_cast<std::size_t>(config.n_per_class));
    ds.labels[id] = c;
    std::vector<double> a(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) a[j] = ds.class_attributes(c, j);
    if (config.noise_std > 0.0) {
      Rng image_rng(derive_seed(config.seed, 1'000'003ULL + id));
      std::normal_distribution<double> jitter(0.0, jitter_std);
      for (double& v : a) v = std::clamp(v + jitter(image_rng), 0.0, 1.0);
      Image img = render_attributes(a, config.height, config.width, config.channels);
      std::normal_distribution<double> noise(0.0, config.noise_std);
      for (double& p : img.pixels) p = std::clamp(p + noise(image_rng), 0.0, 1.0);
      ds.images[id] = std::move(img);
    } else {
      ds.images[id] = render_attributes(a, config.height, config.width, config.channels);
    }
  }
  return ds;
}

SplitSpec make_splits(const Dataset& dataset, int unseen_count, int val_count,
                      std::uint64_t seed, double seen_test_fraction) {
  const int k = dataset.num_classes();
  if (unseen_count < 0 || val_count < 0) {
    throw std::invalid_argument("make_splits: counts must be non-negative");
  }
  if (unseen_count + val_count >= k) {
    throw std::invalid_argument(
        "make_splits: unseen_count + val_count = " +
        std::to_string(unseen_count + val_count) + " leaves no seen training class (K=" +
        std::to_string(k) + ")");
  }
  if (!(seen_test_fraction >= 0.0 && seen_test_fraction < 1.0)) {
    throw std::invalid_argument("make_splits: seen_test_fraction outside [0, 1)");
  }

  SplitSpec split;
  if (static_cast<int>(dataset.designated_unseen.size()) >= unseen_count) {
    split.unseen_classes.assign(dataset.designated_unseen.begin(),
                                dataset.designated_unseen.begin() + unseen_count);
  } else {
    Rng rng(derive_seed(seed, 0));
    std::vector<int> classes(static_cast<std::size_t>(k));
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    split.unseen_classes.assign(classes.begin(), classes.begin() + unseen_count);
  }
  std::sort(split.unseen_classes.begin(), split.unseen_classes.end());
  const std::set<int> unseen(split.unseen_classes.begin(), split.unseen_classes.end());
  for (int c = 0; c < k; ++c) {
    if (!unseen.count(c)) split.seen_classes.push_back(c);
  }

  {
    Rng rng(derive_seed(seed, 1));
    std::vector<int> pool = split.seen_classes;
    std::shuffle(pool.begin(), pool.end(), rng);
    split.val_classes.assign(pool.begin(), pool.begin() + val_count);
    std::sort(split.val_classes.begin(), split.val_classes.end());
  }

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t id = 0; id < dataset.labels.size(); ++id) {
    by_class[dataset.labels[id]].push_back(id);
  }
  for (auto& [c, ids] : by_class) {
    if (unseen.count(c)) {
      split.unseen_test_ids.insert(split.unseen_test_ids.end(), ids.begin(), ids.end());
      continue;
    }
    Rng rng(derive_seed(seed, 2 + static_cast<std::uint64_t>(c)));
    std::shuffle(ids.begin(), ids.end(), rng);
    std::size_t n_test = static_cast<std::size_t>(
        std::lround(seen_test_fraction * static_cast<double>(ids.size())));
    n_test = std::min(n_test, ids.size() - 1);
    split.seen_test_ids.insert(split.seen_test_ids.end(), ids.begin(),
                               ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train_ids.insert(split.train_ids.end(),
                           ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  }
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.seen_test_ids.begin(), split.seen_test_ids.end());
  std::sort(split.unseen_test_ids.begin(), split.unseen_test_ids.end());
  return split;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
    while (!f.empty() && f.front() == ' ') f.erase(f.begin());
  }
  return fields;
}

bool parse_int(const std::string& s, long long* out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    *out = std::stoll(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    *out = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

struct CsvLine {
  std::size_t number;
  std::vector<std::string> fields;
};

// Reads non-empty lines; drops a header line whose first field is not an
// integer.
std::vector<CsvLine> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path, "cannot open file");
  std::vector<CsvLine> lines;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line == "\r") continue;
    CsvLine l{number, split_csv_line(line)};
    long long dummy = 0;
    if (lines.empty() && number == 1 && !l.fields.empty() &&
        !parse_int(l.fields[0], &dummy)) {
      continue;
    }
    lines.push_back(std::move(l));
  }
  return lines;
}

struct ClassTable {
  std::vector<int> ids;
  std::vector<std::string> names;
  Eigen::MatrixXd attributes;
};

ClassTable read_class_table(const fs::path& path) {
  if (!fs::exists(path)) throw DataError(path, "missing file");
  const auto lines = read_csv(path);
  if (lines.empty()) throw DataError(path, "no class rows");
  const std::size_t cols = lines.front().fields.size();
  if (cols < 3) {
    throw DataError(path, lines.front().number,
                    "expected class_id,name,a_1..a_d (at least 3 columns)");
  }
  ClassTable t;
  t.attributes.resize(static_cast<Eigen::Index>(lines.size()),
                      static_cast<Eigen::Index>(cols - 2));
  std::set<int> seen_ids;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto& l = lines[r];
    if (l.fields.size() != cols) {
      throw DataError(path, l.number,
                      "row " + std::to_string(r) + " has " +
                          std::to_string(l.fields.size()) + " columns, expected " +
                          std::to_string(cols));
    }
    long long id = 0;
    if (!parse_int(l.fields[0], &id)) {
      throw DataError(path, l.number, "bad class_id '" + l.fields[0] + "'");
    }
    if (!seen_ids.insert(static_cast<int>(id)).second) {
      throw DataError(path, l.number, "duplicate class_id " + l.fields[0]);
    }
    t.ids.push_back(static_cast<int>(id));
    t.names.push_back(l.fields[1]);
    for (std::size_t j = 2; j < cols; ++j) {
      double v = 0.0;
      if (!parse_double(l.fields[j], &v)) {
        throw DataError(path, l.number, "bad attribute value '" + l.fields[j] + "'");
      }
      t.attributes(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j - 2)) = v;
    }
  }
  return t;
}

struct ImageSplitRow {
  std::size_t line;
  std::size_t image_id;
  std::string split;
  int class_id;
};

std::vector<ImageSplitRow> read_image_splits(const fs::path& path,
                                             const std::vector<CsvLine>& lines) {
  std::vector<ImageSplitRow> rows;
  for (const auto& l : lines) {
    if (l.fields.size() != 3) {
      throw DataError(path, l.number, "expected image_id,split,class_id");
    }
    long long id = 0, c = 0;
    if (!parse_int(l.fields[0], &id) || id < 0) {
      throw DataError(path, l.number, "bad image_id '" + l.fields[0] + "'");
    }
    if (!parse_int(l.fields[2], &c)) {
      throw DataError(path, l.number, "bad class_id '" + l.fields[2] + "'");
    }
    const std::string& s = l.fields[1];
    if (s != "train" && s != "seen_test" && s != "unseen_test") {
      throw DataError(path, l.number, "unknown split '" + s + "'");
    }
    rows.push_back({l.number, static_cast<std::size_t>(id), s, static_cast<int>(c)});
  }
  return rows;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_ppm(const fs::path& path, const Image& image) {
  if (image.channels != 3 && image.channels != 1) {
    throw std::invalid_argument("write_ppm: only 1 or 3 channels supported");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path, "cannot open for writing");
  out << (image.channels == 3 ? "P6" : "P5") << "\n"
      << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.pixels.size());
  std::size_t k = 0;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
        bytes[k++] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(path, "write failed");
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path, "cannot open file");
  auto next_token = [&]() {
    std::string tok;
    while (tok.empty()) {
      int ch = in.get();
      if (ch == EOF) throw DataError(path, "truncated header");
      if (ch == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (std::isspace(ch)) continue;
      tok.push_back(static_cast<char>(ch));
      while (true) {
        ch = in.peek();
        if (ch == EOF || std::isspace(ch)) break;
        tok.push_back(static_cast<char>(in.get()));
      }
    }
    return tok;
  };
  const std::string magic = next_token();
  std::size_t channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw DataError(path, 1, "not a binary PPM/PGM (magic '" + magic + "')");
  }
  long long w = 0, h = 0, maxval = 0;
  if (!parse_int(next_token(), &w) || !parse_int(next_token(), &h) ||
      !parse_int(next_token(), &maxval) || w <= 0 || h <= 0 || maxval != 255) {
    throw DataError(path, "bad header (expected positive size and maxval 255)");
  }
  in.get();  // single whitespace before raster
  Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels);
  std::vector<unsigned char> bytes(img.pixels.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError(path, "truncated raster");
  }
  std::size_t k = 0;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        img.at(y, x, c) = bytes[k++] / 255.0;
      }
    }
  }
  return img;
}

Image contact_sheet(const std::vector<Image>& images, std::size_t columns) {
  if (images.empty() || columns == 0) {
    throw std::invalid_argument("contact_sheet: nothing to tile");
  }
  const Image& first = images.front();
  const std::size_t rows = (images.size() + columns - 1) / columns;
  Image sheet(rows * first.height, columns * first.width, first.channels);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != first.shape()) {
      throw std::invalid_argument("contact_sheet: mixed image shapes");
    }
    const std::size_t oy = (i / columns) * first.height;
    const std::size_t ox = (i % columns) * first.width;
    for (std::size_t c = 0; c < first.channels; ++c) {
      for (std::size_t y = 0; y < first.height; ++y) {
        for (std::size_t x = 0; x < first.width; ++x) {
          sheet.at(oy + y, ox + x, c) = images[i].at(y, x, c);
        }
      }
    }
  }
  return sheet;
}

void save_dataset(const Dataset& dataset, const SplitSpec& splits, const fs::path& dir,
                  const std::optional<GenConfig>& config) {
  dataset.validate();
  splits.validate(dataset);
  const std::size_t covered =
      splits.train_ids.size() + splits.seen_test_ids.size() + splits.unseen_test_ids.size();
  if (covered != dataset.images.size()) {
    throw std::invalid_argument("save_dataset: every image must belong to a split (" +
                                std::to_string(covered) + " of " +
                                std::to_string(dataset.images.size()) + ")");
  }
  fs::create_directories(dir / "images");

  {
    std::ofstream out(dir / "classes.csv");
    if (!out) throw DataError(dir / "classes.csv", "cannot open for writing");
    out << "class_id,name";
    for (int j = 0; j < dataset.num_attributes(); ++j) out << ",a_" << (j + 1);
    out << "\n";
    for (int c = 0; c < dataset.num_classes(); ++c) {
      std::string name = dataset.class_names.empty() ? "class_" + std::to_string(c)
                                                     : dataset.class_names[c];
      if (name.find(',') != std::string::npos) {
        throw std::invalid_argument("save_dataset: class name contains a comma");
      }
      out << c << "," << name;
      for (int j = 0; j < dataset.num_attributes(); ++j) {
        out << "," << format_double(dataset.class_attributes(c, j));
      }
      out << "\n";
    }
  }

  {
    std::vector<std::pair<std::size_t, const char*>> rows;
    for (auto id : splits.train_ids) rows.emplace_back(id, "train");
    for (auto id : splits.seen_test_ids) rows.emplace_back(id, "seen_test");
    for (auto id : splits.unseen_test_ids) rows.emplace_back(id, "unseen_test");
    std::sort(rows.begin(), rows.end());
    std::ofstream out(dir / "splits.csv");
    if (!out) throw DataError(dir / "splits.csv", "cannot open for writing");
    out << "image_id,split,class_id\n";
    for (const auto& [id, name] : rows) {
      out << id << "," << name << "," << dataset.labels[id] << "\n";
    }
  }

  for (std::size_t id = 0; id < dataset.images.size(); ++id) {
    write_ppm(dir / "images" / (std::to_string(id) + ".ppm"), dataset.images[id]);
  }

  json meta;
  meta["config"] = config ? json(*config) : json(nullptr);
  meta["num_images"] = dataset.images.size();
  meta["image_shape"] = dataset.image_shape();
  meta["seen_classes"] = splits.seen_classes;
  meta["unseen_classes"] = splits.unseen_classes;
  meta["val_classes"] = splits.val_classes;
  meta["designated_unseen"] = dataset.designated_unseen;
  meta["low_variance_attributes"] = dataset.low_variance_attributes;
  std::ofstream out(dir / "gen_config.json");
  if (!out) throw DataError(dir / "gen_config.json", "cannot open for writing");
  out << meta.dump(2) << "\n";
}

std::pair<Dataset, SplitSpec> load_dataset(const fs::path& dir) {
  Dataset ds;
  const ClassTable table = read_class_table(dir / "classes.csv");
  for (std::size_t r = 0; r < table.ids.size(); ++r) {
    if (table.ids[r] != static_cast<int>(r)) {
      throw DataError(dir / "classes.csv", r + 2,
                      "class ids must be 0..K-1 in order, found " +
                          std::to_string(table.ids[r]));
    }
  }
  ds.class_attributes = table.attributes;
  ds.class_names = table.names;

  const fs::path splits_path = dir / "splits.csv";
  if (!fs::exists(splits_path)) throw DataError(splits_path, "missing file");
  const auto rows = read_image_splits(splits_path, read_csv(splits_path));

  std::size_t num_images = 0;
  for (const auto& r : rows) num_images = std::max(num_images, r.image_id + 1);
  SplitSpec split;
  std::vector<bool> present(num_images, false);
  ds.images.resize(num_images);
  ds.labels.assign(num_images, -1);
  std::set<int> seen, unseen;
  for (const auto& r : rows) {
    if (present[r.image_id]) {
      throw DataError(splits_path, r.line, "duplicate image_id " + std::to_string(r.image_id));
    }
    if (r.class_id < 0 || r.class_id >= ds.num_classes()) {
      throw DataError(splits_path, r.line, "class_id " + std::to_string(r.class_id) +
                                               " not in classes.csv");
    }
    present[r.image_id] = true;
    ds.labels[r.image_id] = r.class_id;
    if (r.split == "train") {
      split.train_ids.push_back(r.image_id);
      seen.insert(r.class_id);
    } else if (r.split == "seen_test") {
      split.seen_test_ids.push_back(r.image_id);
      seen.insert(r.class_id);
    } else {
      split.unseen_test_ids.push_back(r.image_id);
      unseen.insert(r.class_id);
    }
    const fs::path img_path = dir / "images" / (std::to_string(r.image_id) + ".ppm");
    if (!fs::exists(img_path)) throw DataError(img_path, "missing image file");
    ds.images[r.image_id] = read_ppm(img_path);
  }
  for (std::size_t id = 0; id < num_images; ++id) {
    if (!present[id]) {
      throw DataError(splits_path, "image ids are not contiguous; missing " +
                                       std::to_string(id));
    }
  }

  const fs::path meta_path = dir / "gen_config.json";
  if (fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    json meta;
    try {
      in >> meta;
      split.seen_classes = meta.at("seen_classes").get<std::vector<int>>();
      split.unseen_classes = meta.at("unseen_classes").get<std::vector<int>>();
      split.val_classes = meta.at("val_classes").get<std::vector<int>>();
      ds.designated_unseen = meta.value("designated_unseen", std::vector<int>{});
      ds.low_variance_attributes =
          meta.value("low_variance_attributes", std::vector<int>{});
    } catch (const json::exception& e) {
      throw DataError(meta_path, std::string("malformed metadata: ") + e.what());
    }
  } else {
    split.seen_classes.assign(seen.begin(), seen.end());
    split.unseen_classes.assign(unseen.begin(), unseen.end());
  }
  try {
    ds.validate();
    split.validate(ds);
  } catch (const std::invalid_argument& e) {
    throw DataError(dir, e.what());
  }
  return {std::move(ds), std::move(split)};
}

ExternalAttributes load_external_attributes(const fs::path& classes_file,
                                            const fs::path& splits_file) {
  ExternalAttributes ext;
  const ClassTable table = read_class_table(classes_file);
  ext.class_ids = table.ids;
  ext.class_names = table.names;
  ext.class_attributes = table.attributes;
  std::map<int, int> row_of;
  for (std::size_t r = 0; r < table.ids.size(); ++r) {
    row_of[table.ids[r]] = static_cast<int>(r);
  }
  auto lookup = [&](int id, std::size_t line) {
    auto it = row_of.find(id);
    if (it == row_of.end()) {
      throw DataError(splits_file, line,
                      "class_id " + std::to_string(id) + " not in " + classes_file.string());
    }
    return it->second;
  };

  if (!fs::exists(splits_file)) throw DataError(splits_file, "missing file");
  const auto lines = read_csv(splits_file);
  if (lines.empty()) throw DataError(splits_file, "no split rows");
  const std::size_t cols = lines.front().fields.size();
  if (cols == 2) {
    std::set<int> seen, unseen, val;
    for (const auto& l : lines) {
      if (l.fields.size() != 2) {
        throw DataError(splits_file, l.number, "expected class_id,role");
      }
      long long id = 0;
      if (!parse_int(l.fields[0], &id)) {
        throw DataError(splits_file, l.number, "bad class_id '" + l.fields[0] + "'");
      }
      const int row = lookup(static_cast<int>(id), l.number);
      const std::string& role = l.fields[1];
      if (role == "seen") {
        seen.insert(row);
      } else if (role == "val") {
        seen.insert(row);
        val.insert(row);
      } else if (role == "unseen") {
        unseen.insert(row);
      } else {
        throw DataError(splits_file, l.number, "unknown role '" + role + "'");
      }
    }
    ext.splits.seen_classes.assign(seen.begin(), seen.end());
    ext.splits.unseen_classes.assign(unseen.begin(), unseen.end());
    ext.splits.val_classes.assign(val.begin(), val.end());
  } else if (cols == 3) {
    std::set<int> seen, unseen;
    for (const auto& r : read_image_splits(splits_file, lines)) {
      const int row = lookup(r.class_id, r.line);
      if (r.split == "train") {
        ext.splits.train_ids.push_back(r.image_id);
        ext.train_image_labels.push_back(row);
        seen.insert(row);
      } else if (r.split == "seen_test") {
        ext.splits.seen_test_ids.push_back(r.image_id);
        ext.test_image_labels.push_back(row);
        seen.insert(row);
      } else {
        ext.splits.unseen_test_ids.push_back(r.image_id);
        ext.test_image_labels.push_back(row);
        unseen.insert(row);
      }
    }
    ext.splits.seen_classes.assign(seen.begin(), seen.end());
    ext.splits.unseen_classes.assign(unseen.begin(), unseen.end());
  } else {
    throw DataError(splits_file, lines.front().number,
                    "expected 2 (class_id,role) or 3 (image_id,split,class_id) columns");
  }
  for (int c : ext.splits.unseen_classes) {
    if (std::find(ext.splits.seen_classes.begin(), ext.splits.seen_classes.end(), c) !=
        ext.splits.seen_classes.end()) {
      throw DataError(splits_file, "class row " + std::to_string(c) +
                                       " is both seen and unseen");
    }
  }
  return ext;
}

void AccessLog::record_image(std::size_t id, int label) {
  image_ids_.insert(id);
  classes_.insert(label);
  ++reads_;
}

void AccessLog::record_class(int class_id) {
  classes_.insert(class_id);
  ++reads_;
}

const Image& DatasetAccessor::image(std::size_t id) const {
  if (id >= dataset_.images.size()) {
    throw std::out_of_range("DatasetAccessor: image id " + std::to_string(id));
  }
  if (log_) log_->record_image(id, dataset_.labels[id]);
  return dataset_.images[id];
}

int DatasetAccessor::label(std::size_t id) const {
  if (id >= dataset_.labels.size()) {
    throw std::out_of_range("DatasetAccessor: image id " + std::to_string(id));
  }
  if (log_) log_->record_image(id, dataset_.labels[id]);
  return dataset_.labels[id];
}

std::vector<double> DatasetAccessor::class_embedding(int class_id) const {
  if (class_id < 0 || class_id >= dataset_.num_classes()) {
    throw std::out_of_range("DatasetAccessor: class id " + std::to_string(class_id));
  }
  if (log_) log_->record_class(class_id);
  const Eigen::VectorXd row = dataset_.class_attributes.row(class_id).transpose();
  return l2_normalize(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
}

}  // namespace spaen
