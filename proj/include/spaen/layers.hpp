#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spaen/tensor.hpp"

namespace spaen {

// A stateless differentiable op. Parameters live outside the layer, in the
// owning ParamMap's flat parameter vector, and are passed in as a span.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  // Throws std::invalid_argument if the layer cannot accept `input`.
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual std::size_t param_count() const { return 0; }
  virtual void initialize(std::span<double> /*params*/, Rng& /*rng*/) const {}

  virtual Tensor forward(std::span<const double> params, const Tensor& x) const = 0;
  // Returns dL/dx. Adds dL/dparams into grad_params when it is non-empty.
  virtual Tensor backward(std::span<const double> params, const Tensor& x,
                          const Tensor& y, const Tensor& grad_y,
                          std::span<double> grad_params) const = 0;
};

using LayerPtr = std::shared_ptr<const Layer>;

// y = x W^T + b, W is out x in.
class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out) : in_(in), out_(out) {}
  std::string kind() const override { return "linear"; }
  Shape output_shape(const Shape& input) const override;
  std::size_t param_count() const override { return out_ * in_ + out_; }
  void initialize(std::span<double> params, Rng& rng) const override;
  Tensor forward(std::span<const double> params, const Tensor& x) const override;
  Tensor backward(std::span<const double> params, const Tensor& x, const Tensor& y,
                  const Tensor& grad_y, std::span<double> grad_params) const override;

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::size_t in_;
  std::size_t out_;
};

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation, weights out x (in*k*k).
class Conv2d final : public Layer {
 public:
  explicit Conv2d(ConvGeometry g) : g_(g) {}
  std::string kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& input) const override;
  std::size_t param_count() const override;
  void initialize(std::span<double> params, Rng& rng) const override;
  Tensor forward(std::span<const double> params, const Tensor& x) const override;
  Tensor backward(std::span<const double> params, const Tensor& x, const Tensor& y,
                  const Tensor& grad_y, std::span<double> grad_params) const override;

 private:
  ConvGeometry g_;
};

// Up-convolution: the adjoint of Conv2d with the same geometry, weights
// in x (out*k*k). Output side is (in - 1) * stride - 2 * padding + kernel.
class ConvTranspose2d final : public Layer {
 public:
  explicit ConvTranspose2d(ConvGeometry g) : g_(g) {}
  std::string kind() const override { return "conv_transpose2d"; }
  Shape output_shape(const Shape& input) const override;
  std::size_t param_count() const override;
  void initialize(std::span<double> params, Rng& rng) const override;
  Tensor forward(std::span<const double> params, const Tensor& x) const override;
  Tensor backward(std::span<const double> params, const Tensor& x, const Tensor& y,
                  const Tensor& grad_y, std::span<double> grad_params) const override;

 private:
  ConvGeometry g_;
};

// Leaky ReLU; slope 0 gives a plain ReLU.
class LeakyRelu final : public Layer {
 public:
  explicit LeakyRelu(double slope) : slope_(slope) {}
  std::string kind() const override { return slope_ == 0.0 ? "relu" : "leaky_relu"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(std::span<const double> params, const Tensor& x) const override;
  Tensor backward(std::span<const double> params, const Tensor& x, const Tensor& y,
                  const Tensor& grad_y, std::span<double> grad_params) const override;

 private:
  double slope_;
};

class Sigmoid final : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(std::span<const double> params, const Tensor& x) const override;
  Tensor backward(std::span<const double> params, const Tensor& x, const Tensor& y,
                  const Tensor& grad_y, std::span<double> grad_params) const override;
};

class Reshape final : public Layer {
 public:
  explicit Reshape(Shape target) : target_(std::move(target)) {}
  std::string kind() const override { return "reshape"; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(std::span<const double> params, const Tensor& x) const override;
  Tensor backward(std::span<const double> params, const Tensor& x, const Tensor& y,
                  const Tensor& grad_y, std::span<double> grad_params) const override;

 private:
  Shape target_;
};

// Gathers conv patches: col is (C*k*k) x (out_h*out_w), row-major.
void im2col(const double* image, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t out_h, std::size_t out_w, double* col);
// Adjoint of im2col; accumulates into image.
void col2im(const double* col, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t out_h, std::size_t out_w, double* image);

}  // namespace spaen
