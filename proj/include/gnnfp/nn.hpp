// Copyright 2026 The gnnfp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal layer library with hand-written backward passes.
//
// Activations are row-major matrices with one row per spatial position (or
// graph node) and one column per channel. A batch of B grids of H x W is
// stored as B * H * W rows ordered (example, row, column), which makes a
// flattened grid directly usable as a node set.
//
// Every layer exposes
//   forward(x, cache)   cache == nullptr selects inference mode
//   backward(dy, cache) accumulates parameter gradients, returns dx
// and is templated on the scalar so the same code runs in float for training
// and in double for gradient checks.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnnfp::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

template <typename T>
struct Param {
  Mat<T> value;
  Mat<T> grad;
  /// Buffers (running statistics) are serialised but never optimised.
  bool buffer = false;

  void resize(Index rows, Index cols) {
    value = Mat<T>::Zero(rows, cols);
    grad = Mat<T>::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

/// Grid layout of a batch of activations.
struct GridShape {
  int batch = 0;
  int height = 0;
  int width = 0;

  int nodes() const { return height * width; }
  Index rows() const { return static_cast<Index>(batch) * height * width; }
  bool operator==(const GridShape&) const = default;
};

enum class Activation { kGelu, kRelu };

template <typename T>
void init_uniform(Mat<T>& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------

/// x * w with every output row computed by the same operation sequence, so
/// the result for a row does not depend on its position in x. Blocked GEMM
/// does not guarantee this.
template <typename T>
Mat<T> rowwise_product(const Mat<T>& x, const Mat<T>& w) {
  const Index n = x.rows(), depth = x.cols(), out = w.cols();
  Mat<T> y = Mat<T>::Zero(n, out);
  for (Index i = 0; i < n; ++i) {
    T* __restrict yi = y.data() + i * out;
    for (Index k = 0; k < depth; ++k) {
      const T a = x(i, k);
      const T* __restrict wk = w.data() + k * out;
      for (Index j = 0; j < out; ++j) yi[j] += a * wk[j];
    }
  }
  return y;
}

template <typename T>
class Linear {
 public:
  struct Cache {
    Mat<T> input;
  };

  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng) {
    weight.resize(in, out);
    bias.resize(1, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    init_uniform(weight.value, bound, rng);
    init_uniform(bias.value, bound, rng);
  }

  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    if (x.cols() != weight.value.rows()) {
      throw std::invalid_argument("Linear: expected " +
                                  std::to_string(weight.value.rows()) +
                                  " input features, got " + std::to_string(x.cols()));
    }
    if (cache) cache->input = x;
    Mat<T> y = row_invariant ? rowwise_product(x, weight.value) : Mat<T>(x * weight.value);
    y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& cache) {
    weight.grad.noalias() += cache.input.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }

  Param<T> weight;
  Param<T> bias;
  /// Use rowwise_product instead of blocked GEMM in forward.
  bool row_invariant = false;
};

// ---------------------------------------------------------------------------

/// Per-channel normalisation over all rows of the batch. Training mode uses
/// batch statistics and updates the running estimates; inference mode uses
/// the running estimates. A disabled layer is the identity.
template <typename T>
class BatchNorm {
 public:
  struct Cache {
    Mat<T> x_hat;
    RowVec<T> inv_std;
  };

  BatchNorm() = default;
  BatchNorm(int channels, bool enabled, double momentum = 0.1, double eps = 1e-5)
      : enabled_(enabled), momentum_(momentum), eps_(eps) {
    gamma.resize(1, channels);
    gamma.value.setOnes();
    beta.resize(1, channels);
    running_mean.resize(1, channels);
    running_mean.buffer = true;
    running_var.resize(1, channels);
    running_var.value.setOnes();
    running_var.buffer = true;
  }

  bool enabled() const { return enabled_; }

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    if (!enabled_) return x;
    const auto n = static_cast<T>(x.rows());
    RowVec<T> mean, var;
    if (cache) {
      mean = x.colwise().sum() / n;
      var = (x.rowwise() - mean).array().square().colwise().sum().matrix() / n;
      if (update_running) {
        const T m = static_cast<T>(momentum_);
        const T unbias = x.rows() > 1 ? n / (n - T(1)) : T(1);
        running_mean.value.row(0) = (T(1) - m) * running_mean.value.row(0) + m * mean;
        running_var.value.row(0) = (T(1) - m) * running_var.value.row(0) + m * unbias * var;
      }
    } else {
      mean = running_mean.value.row(0);
      var = running_var.value.row(0);
    }
    const RowVec<T> inv_std = (var.array() + static_cast<T>(eps_)).rsqrt().matrix();
    Mat<T> x_hat = (x.rowwise() - mean).array().rowwise() * inv_std.array();
    Mat<T> y = (x_hat.array().rowwise() * gamma.value.row(0).array()).matrix();
    y.rowwise() += beta.value.row(0);
    if (cache) {
      cache->x_hat = std::move(x_hat);
      cache->inv_std = inv_std;
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& cache) {
    if (!enabled_) return dy;
    const auto n = static_cast<T>(dy.rows());
    const RowVec<T> sum_dy = dy.colwise().sum();
    const RowVec<T> sum_dy_xhat = (dy.array() * cache.x_hat.array()).colwise().sum().matrix();
    gamma.grad.row(0) += sum_dy_xhat;
    beta.grad.row(0) += sum_dy;
    const RowVec<T> scale = (gamma.value.row(0).array() * cache.inv_std.array() / n).matrix();
    Mat<T> dx = ((dy.array() * n).rowwise() - sum_dy.array()).matrix();
    dx.array() -= cache.x_hat.array().rowwise() * sum_dy_xhat.array();
    dx.array().rowwise() *= scale.array();
    return dx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    if (!enabled_) return;
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
    f(prefix + ".running_mean", running_mean);
    f(prefix + ".running_var", running_var);
  }

  Param<T> gamma;
  Param<T> beta;
  mutable Param<T> running_mean;
  mutable Param<T> running_var;
  /// Cleared by gradient checks so repeated forwards leave no trace.
  bool update_running = true;

 private:
  bool enabled_ = false;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
};

// ---------------------------------------------------------------------------

template <typename T>
class Act {
 public:
  struct Cache {
    Mat<T> input;
  };

  Act() = default;
  explicit Act(Activation kind) : kind_(kind) {}

  static T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  }
  static T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
    const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    return cdf + x * pdf;
  }

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    if (cache) cache->input = x;
    if (kind_ == Activation::kRelu) return x.cwiseMax(T(0));
    return x.unaryExpr([](T v) { return gelu(v); });
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& cache) const {
    if (kind_ == Activation::kRelu) {
      return (cache.input.array() > T(0)).select(dy.array(), T(0)).matrix();
    }
    return (dy.array() * cache.input.unaryExpr([](T v) { return gelu_grad(v); }).array()).matrix();
  }

 private:
  Activation kind_ = Activation::kGelu;
};

// ---------------------------------------------------------------------------

/// 3x3 convolution with padding 1 and independent strides along the two
/// grid axes, computed as im2col followed by one matrix product.
template <typename T>
class Conv2d {
 public:
  struct Cache {
    Mat<T> columns;
    GridShape in_shape;
  };

  static constexpr int kKernel = 3;

  Conv2d() = default;
  Conv2d(int in, int out, int stride_h, int stride_w, std::mt19937_64& rng)
      : in_(in), out_(out), stride_h_(stride_h), stride_w_(stride_w) {
    if (stride_h < 1 || stride_w < 1) throw std::invalid_argument("Conv2d: stride must be >= 1");
    weight.resize(kKernel * kKernel * in, out);
    bias.resize(1, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(kKernel * kKernel * in));
    init_uniform(weight.value, bound, rng);
    init_uniform(bias.value, bound, rng);
  }

  int out_channels() const { return out_; }

  GridShape output_shape(const GridShape& in) const {
    return {in.batch, (in.height - 1) / stride_h_ + 1, (in.width - 1) / stride_w_ + 1};
  }

  Mat<T> forward(const Mat<T>& x, const GridShape& in, Cache* cache) const {
    if (x.cols() != in_ || x.rows() != in.rows()) {
      throw std::invalid_argument("Conv2d: input does not match declared shape");
    }
    const GridShape out = output_shape(in);
    Mat<T> cols = Mat<T>::Zero(out.rows(), kKernel * kKernel * in_);
    for (int b = 0; b < out.batch; ++b) {
      for (int oh = 0; oh < out.height; ++oh) {
        for (int ow = 0; ow < out.width; ++ow) {
          const Index row = (static_cast<Index>(b) * out.height + oh) * out.width + ow;
          for (int kh = 0; kh < kKernel; ++kh) {
            const int ih = oh * stride_h_ + kh - 1;
            if (ih < 0 || ih >= in.height) continue;
            for (int kw = 0; kw < kKernel; ++kw) {
              const int iw = ow * stride_w_ + kw - 1;
              if (iw < 0 || iw >= in.width) continue;
              const Index src = (static_cast<Index>(b) * in.height + ih) * in.width + iw;
              cols.row(row).segment((kh * kKernel + kw) * in_, in_) = x.row(src);
            }
          }
        }
      }
    }
    Mat<T> y = cols * weight.value;
    y.rowwise() += bias.value.row(0);
    if (cache) {
      cache->columns = std::move(cols);
      cache->in_shape = in;
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& cache) {
    weight.grad.noalias() += cache.columns.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    const Mat<T> dcols = dy * weight.value.transpose();
    const GridShape in = cache.in_shape;
    const GridShape out = output_shape(in);
    Mat<T> dx = Mat<T>::Zero(in.rows(), in_);
    for (int b = 0; b < out.batch; ++b) {
      for (int oh = 0; oh < out.height; ++oh) {
        for (int ow = 0; ow < out.width; ++ow) {
          const Index row = (static_cast<Index>(b) * out.height + oh) * out.width + ow;
          for (int kh = 0; kh < kKernel; ++kh) {
            const int ih = oh * stride_h_ + kh - 1;
            if (ih < 0 || ih >= in.height) continue;
            for (int kw = 0; kw < kKernel; ++kw) {
              const int iw = ow * stride_w_ + kw - 1;
              if (iw < 0 || iw >= in.width) continue;
              const Index dst = (static_cast<Index>(b) * in.height + ih) * in.width + iw;
              dx.row(dst) += dcols.row(row).segment((kh * kKernel + kw) * in_, in_);
            }
          }
        }
      }
    }
    return dx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  int in_ = 0;
  int out_ = 0;
  int stride_h_ = 1;
  int stride_w_ = 1;
};

}  // namespace gnnfp::nn
