#include "spaen/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace spaen {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

void fill_normal(std::span<double> w, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : w) v = dist(rng);
}

void require_rank(const Shape& input, std::size_t rank, const char* who) {
  if (input.size() != rank) {
    throw std::invalid_argument(std::string(who) + ": expected rank-" +
                                std::to_string(rank) + " input, got " +
                                shape_string(input));
  }
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) return 0;
  return (in + 2 * p - k) / s + 1;
}

Shape with_batch(std::size_t n, const Shape& s) {
  Shape out = s;
  out.insert(out.begin(), n);
  return out;
}

}  // namespace

void im2col(const double* image, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t out_h, std::size_t out_w, double* col) {
  const std::size_t cols = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        double* row = col + ((c * kernel + ky) * kernel + kx) * cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<long>(height)) {
            for (std::size_t ox = 0; ox < out_w; ++ox) dst[ox] = 0.0;
            continue;
          }
          const double* src = image + (c * height + static_cast<std::size_t>(iy)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t out_h, std::size_t out_w, double* image) {
  const std::size_t cols = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const double* row = col + ((c * kernel + ky) * kernel + kx) * cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          double* dst = image + (c * height + static_cast<std::size_t>(iy)) * width;
          const double* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
            if (ix >= 0 && ix < static_cast<long>(width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Linear

Shape Linear::output_shape(const Shape& input) const {
  require_rank(input, 1, "linear");
  if (input[0] != in_) {
    throw std::invalid_argument("linear: expected " + std::to_string(in_) +
                                " inputs, got " + std::to_string(input[0]));
  }
  return {out_};
}

void Linear::initialize(std::span<double> params, Rng& rng) const {
  fill_normal(params.subspan(0, out_ * in_), std::sqrt(2.0 / static_cast<double>(in_)), rng);
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(out_ * in_), params.end(), 0.0);
}

Tensor Linear::forward(std::span<const double> params, const Tensor& x) const {
  const std::size_t n = x.batch();
  Tensor y({n, out_});
  ConstMapMat w(params.data(), out_, in_);
  ConstMapVec b(params.data() + out_ * in_, out_);
  ConstMapMat xm(x.data.data(), n, in_);
  MapMat ym(y.data.data(), n, out_);
  ym.noalias() = xm * w.transpose();
  ym.rowwise() += b.transpose();
  return y;
}

Tensor Linear::backward(std::span<const double> params, const Tensor& x, const Tensor&,
                        const Tensor& grad_y, std::span<double> grad_params) const {
  const std::size_t n = x.batch();
  ConstMapMat w(params.data(), out_, in_);
  ConstMapMat xm(x.data.data(), n, in_);
  ConstMapMat gy(grad_y.data.data(), n, out_);
  if (!grad_params.empty()) {
    MapMat gw(grad_params.data(), out_, in_);
    MapVec gb(grad_params.data() + out_ * in_, out_);
    gw.noalias() += gy.transpose() * xm;
    gb += gy.colwise().sum().transpose();
  }
  Tensor gx(x.shape);
  MapMat gxm(gx.data.data(), n, in_);
  gxm.noalias() = gy * w;
  return gx;
}

// ---------------------------------------------------------------------------
// Conv2d

Shape Conv2d::output_shape(const Shape& input) const {
  require_rank(input, 3, "conv2d");
  if (input[0] != g_.in_channels) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(g_.in_channels) +
                                " channels, got " + std::to_string(input[0]));
  }
  const std::size_t oh = conv_out(input[1], g_.kernel, g_.stride, g_.padding);
  const std::size_t ow = conv_out(input[2], g_.kernel, g_.stride, g_.padding);
  if (oh == 0 || ow == 0) throw std::invalid_argument("conv2d: input too small");
  return {g_.out_channels, oh, ow};
}

std::size_t Conv2d::param_count() const {
  return g_.out_channels * g_.in_channels * g_.kernel * g_.kernel + g_.out_channels;
}

void Conv2d::initialize(std::span<double> params, Rng& rng) const {
  const std::size_t fan_in = g_.in_channels * g_.kernel * g_.kernel;
  const std::size_t nw = g_.out_channels * fan_in;
  fill_normal(params.subspan(0, nw), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), 0.0);
}

Tensor Conv2d::forward(std::span<const double> params, const Tensor& x) const {
  const Shape in = x.sample_shape();
  const Shape out = output_shape(in);
  const std::size_t n = x.batch();
  const std::size_t ckk = g_.in_channels * g_.kernel * g_.kernel;
  const std::size_t hw = out[1] * out[2];
  Tensor y(with_batch(n, out));
  ConstMapMat w(params.data(), g_.out_channels, ckk);
  ConstMapVec b(params.data() + g_.out_channels * ckk, g_.out_channels);
  Buffer col(ckk * hw);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.sample(i).data(), in[0], in[1], in[2], g_.kernel, g_.stride, g_.padding,
           out[1], out[2], col.data());
    MapMat ym(y.sample(i).data(), g_.out_channels, hw);
    ym.noalias() = w * ConstMapMat(col.data(), ckk, hw);
    ym.colwise() += b;
  }
  return y;
}

Tensor Conv2d::backward(std::span<const double> params, const Tensor& x, const Tensor&,
                        const Tensor& grad_y, std::span<double> grad_params) const {
  const Shape in = x.sample_shape();
  const Shape out = output_shape(in);
  const std::size_t n = x.batch();
  const std::size_t ckk = g_.in_channels * g_.kernel * g_.kernel;
  const std::size_t hw = out[1] * out[2];
  ConstMapMat w(params.data(), g_.out_channels, ckk);
  Tensor gx(x.shape);
  Buffer col(ckk * hw);
  Buffer gcol(ckk * hw);
  for (std::size_t i = 0; i < n; ++i) {
    ConstMapMat gy(grad_y.sample(i).data(), g_.out_channels, hw);
    if (!grad_params.empty()) {
      im2col(x.sample(i).data(), in[0], in[1], in[2], g_.kernel, g_.stride, g_.padding,
             out[1], out[2], col.data());
      MapMat gw(grad_params.data(), g_.out_channels, ckk);
      MapVec gb(grad_params.data() + g_.out_channels * ckk, g_.out_channels);
      gw.noalias() += gy * ConstMapMat(col.data(), ckk, hw).transpose();
      gb += gy.rowwise().sum();
    }
    MapMat gc(gcol.data(), ckk, hw);
    gc.noalias() = w.transpose() * gy;
    col2im(gcol.data(), in[0], in[1], in[2], g_.kernel, g_.stride, g_.padding, out[1],
           out[2], gx.sample(i).data());
  }
  return gx;
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

Shape ConvTranspose2d::output_shape(const Shape& input) const {
  require_rank(input, 3, "conv_transpose2d");
  if (input[0] != g_.in_channels) {
    throw std::invalid_argument("conv_transpose2d: expected " +
                                std::to_string(g_.in_channels) + " channels, got " +
                                std::to_string(input[0]));
  }
  const long oh = static_cast<long>((input[1] - 1) * g_.stride + g_.kernel) -
                  2 * static_cast<long>(g_.padding);
  const long ow = static_cast<long>((input[2] - 1) * g_.stride + g_.kernel) -
                  2 * static_cast<long>(g_.padding);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv_transpose2d: bad geometry");
  return {g_.out_channels, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
}

std::size_t ConvTranspose2d::param_count() const {
  return g_.in_channels * g_.out_channels * g_.kernel * g_.kernel + g_.out_channels;
}

void ConvTranspose2d::initialize(std::span<double> params, Rng& rng) const {
  // Each output pixel receives about in*k*k/stride^2 contributions.
  const double fan_in = static_cast<double>(g_.in_channels * g_.kernel * g_.kernel) /
                        static_cast<double>(g_.stride * g_.stride);
  const std::size_t nw = g_.in_channels * g_.out_channels * g_.kernel * g_.kernel;
  fill_normal(params.subspan(0, nw), std::sqrt(2.0 / fan_in), rng);
  std::fill(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), 0.0);
}

Tensor ConvTranspose2d::forward(std::span<const double> params, const Tensor& x) const {
  const Shape in = x.sample_shape();
  const Shape out = output_shape(in);
  const std::size_t n = x.batch();
  const std::size_t okk = g_.out_channels * g_.kernel * g_.kernel;
  const std::size_t hw_in = in[1] * in[2];
  const std::size_t hw_out = out[1] * out[2];
  ConstMapMat w(params.data(), g_.in_channels, okk);
  ConstMapVec b(params.data() + g_.in_channels * okk, g_.out_channels);
  Tensor y(with_batch(n, out));
  Buffer col(okk * hw_in);
  for (std::size_t i = 0; i < n; ++i) {
    MapMat cm(col.data(), okk, hw_in);
    cm.noalias() = w.transpose() * ConstMapMat(x.sample(i).data(), g_.in_channels, hw_in);
    double* dst = y.sample(i).data();
    col2im(col.data(), out[0], out[1], out[2], g_.kernel, g_.stride, g_.padding, in[1],
           in[2], dst);
    MapMat ym(dst, g_.out_channels, hw_out);
    ym.colwise() += b;
  }
  return y;
}

Tensor ConvTranspose2d::backward(std::span<const double> params, const Tensor& x,
                                 const Tensor&, const Tensor& grad_y,
                                 std::span<double> grad_params) const {
  const Shape in = x.sample_shape();
  const Shape out = output_shape(in);
  const std::size_t n = x.batch();
  const std::size_t okk = g_.out_channels * g_.kernel * g_.kernel;
  const std::size_t hw_in = in[1] * in[2];
  const std::size_t hw_out = out[1] * out[2];
  ConstMapMat w(params.data(), g_.in_channels, okk);
  Tensor gx(x.shape);
  Buffer gcol(okk * hw_in);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(grad_y.sample(i).data(), out[0], out[1], out[2], g_.kernel, g_.stride,
           g_.padding, in[1], in[2], gcol.data());
    ConstMapMat gc(gcol.data(), okk, hw_in);
    ConstMapMat xm(x.sample(i).data(), g_.in_channels, hw_in);
    if (!grad_params.empty()) {
      MapMat gw(grad_params.data(), g_.in_channels, okk);
      MapVec gb(grad_params.data() + g_.in_channels * okk, g_.out_channels);
      gw.noalias() += xm * gc.transpose();
      gb += ConstMapMat(grad_y.sample(i).data(), g_.out_channels, hw_out).rowwise().sum();
    }
    MapMat gxm(gx.sample(i).data(), g_.in_channels, hw_in);
    gxm.noalias() = w * gc;
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Pointwise and shape ops

Tensor LeakyRelu::forward(std::span<const double>, const Tensor& x) const {
  Tensor y = x;
  for (double& v : y.data) {
    if (v < 0.0) v *= slope_;
  }
  return y;
}

Tensor LeakyRelu::backward(std::span<const double>, const Tensor& x, const Tensor&,
                           const Tensor& grad_y, std::span<double>) const {
  Tensor gx = grad_y;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    if (x.data[i] < 0.0) gx.data[i] *= slope_;
  }
  return gx;
}

Tensor Sigmoid::forward(std::span<const double>, const Tensor& x) const {
  Tensor y = x;
  for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

Tensor Sigmoid::backward(std::span<const double>, const Tensor&, const Tensor& y,
                         const Tensor& grad_y, std::span<double>) const {
  Tensor gx = grad_y;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx.data[i] *= y.data[i] * (1.0 - y.data[i]);
  }
  return gx;
}

Shape Reshape::output_shape(const Shape& input) const {
  if (shape_size(input) != shape_size(target_)) {
    throw std::invalid_argument("reshape: cannot reshape " + shape_string(input) + " to " +
                                shape_string(target_));
  }
  return target_;
}

Tensor Reshape::forward(std::span<const double>, const Tensor& x) const {
  return Tensor(with_batch(x.batch(), output_shape(x.sample_shape())), x.data);
}

Tensor Reshape::backward(std::span<const double>, const Tensor& x, const Tensor&,
                         const Tensor& grad_y, std::span<double>) const {
  return Tensor(x.shape, grad_y.data);
}

}  // namespace spaen
