#include "spaen/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace spaen {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::span<const double> values)
    : Tensor(std::move(s), Buffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape s, Buffer values)
    : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw std::invalid_argument("Tensor: " + std::to_string(data.size()) +
                                " values do not fill shape " +
                                shape_string(shape));
  }
}

Shape Tensor::sample_shape() const {
  if (shape.empty()) return {};
  return Shape(shape.begin() + 1, shape.end());
}

std::size_t Tensor::sample_size() const {
  return batch() == 0 ? 0 : data.size() / batch();
}

std::span<double> Tensor::sample(std::size_t n) {
  const std::size_t s = sample_size();
  return std::span<double>(data).subspan(n * s, s);
}

std::span<const double> Tensor::sample(std::size_t n) const {
  const std::size_t s = sample_size();
  return std::span<const double>(data).subspan(n * s, s);
}

Tensor stack(std::span<const Tensor> samples) {
  if (samples.empty()) throw std::invalid_argument("stack: no samples");
  Shape shape = samples.front().shape;
  shape.insert(shape.begin(), samples.size());
  Tensor out(shape);
  const std::size_t s = samples.front().size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].shape != samples.front().shape) {
      throw std::invalid_argument("stack: mismatched sample shapes " +
                                  shape_string(samples[i].shape) + " vs " +
                                  shape_string(samples.front().shape));
    }
    std::copy(samples[i].data.begin(), samples[i].data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * s));
  }
  return out;
}

Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const std::size_t d = rows.front().size();
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) {
      throw std::invalid_argument("stack_rows: row " + std::to_string(i) +
                                  " has wrong length");
    }
    std::copy(rows[i].begin(), rows[i].end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace spaen
