#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace spaen {

// Allocator with a fixed 64-byte alignment, so vectorized kernels split
// every buffer the same way and results do not depend on heap addresses.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

// Per-sample shape (no batch axis), e.g. {C, H, W} or {D}.
using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Batched tensors carry the batch size as
// the leading axis: {N, C, H, W} for images, {N, D} for vectors.
struct Tensor {
  Shape shape;
  Buffer data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::span<const double> values);
  Tensor(Shape s, Buffer values);

  std::size_t size() const { return data.size(); }
  std::size_t batch() const { return shape.empty() ? 0 : shape[0]; }
  // Shape with the batch axis dropped.
  Shape sample_shape() const;
  std::size_t sample_size() const;

  std::span<double> sample(std::size_t n);
  std::span<const double> sample(std::size_t n) const;

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool operator==(const Tensor&) const = default;
};

// Stacks equally-shaped samples into a batch tensor.
Tensor stack(std::span<const Tensor> samples);
Tensor stack_rows(const std::vector<std::vector<double>>& rows);

// Derives an independent 64-bit seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

using Rng = std::mt19937_64;

}  // namespace spaen
