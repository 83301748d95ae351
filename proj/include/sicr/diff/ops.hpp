#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "sicr/diff/tensor.hpp"

// Differentiable primitives. Spatial tensors are NHWC: [batch, height, width,
// depth]. Kernels are [kh, kw, depth_in, depth_out].
namespace sicr::diff {

enum class Mode { Train, Eval };

enum class Padding {
  Valid,  // no padding
  Same,   // explicit zero padding so that out = ceil(in / stride)
};

struct Stride2 {
  std::size_t h = 1;
  std::size_t w = 1;
};

struct Window2 {
  std::size_t h = 1;
  std::size_t w = 1;
};

// Output extent of a strided window sweep; throws ShapeError naming `axis`
// when the window does not fit.
std::size_t sweep_extent(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad,
                         const char* axis);

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& kernel, Stride2 stride = {},
                    Padding padding = Padding::Valid);

// kernel [kh, kw, depth_in, multiplier]; output channel c*multiplier+m reads
// input channel c only.
template <typename Real>
Tensor<Real> depthwise_conv2d(const Tensor<Real>& input, const Tensor<Real>& kernel,
                              Stride2 stride = {}, Padding padding = Padding::Valid);

// Depthwise followed by a 1x1 pointwise conv2d.
template <typename Real>
Tensor<Real> separable_conv2d(const Tensor<Real>& input, const Tensor<Real>& depthwise_kernel,
                              const Tensor<Real>& pointwise_kernel, Stride2 stride = {},
                              Padding padding = Padding::Valid);

// Adds bias[D] along the last axis.
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& input, const Tensor<Real>& bias);

// Ties route to the lowest linear input index.
template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, Window2 window, Stride2 stride);

template <typename Real>
Tensor<Real> avg_pool2d(const Tensor<Real>& input, Window2 window, Stride2 stride);

template <typename Real>
struct BatchNormStats {
  std::vector<Real> mean;
  std::vector<Real> var;
};

// Normalizes over every axis but the last. Train mode uses batch statistics
// and updates `running` as running = momentum*running + (1-momentum)*batch.
template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& input, const Tensor<Real>& scale,
                        const Tensor<Real>& shift, BatchNormStats<Real>& running, Mode mode,
                        Real momentum = Real(0.99), Real eps = Real(1e-3));

template <typename Real>
Tensor<Real> elu(const Tensor<Real>& input, Real alpha = Real(1));

// log(1 + e^z), evaluated as max(z, 0) + log1p(e^-|z|).
template <typename Real>
Tensor<Real> softplus(const Tensor<Real>& input);

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& input);

template <typename Real>
Tensor<Real> log(const Tensor<Real>& input);

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& input);

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& input, Real factor);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& input);

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& input);

template <typename Real>
Tensor<Real> sum_squares(const Tensor<Real>& input);

// input [B, I], weights [I, O], bias [O] (bias may be undefined).
template <typename Real>
Tensor<Real> dense(const Tensor<Real>& input, const Tensor<Real>& weights, const Tensor<Real>& bias);

// Mean over the batch of -log softmax(logits)[label].
template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, std::span<const int> labels);

// Same, with labels given as a one-hot [B, K] tensor.
template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits, const Tensor<Real>& one_hot);

// Row-wise softmax; not differentiable.
template <typename Real>
std::vector<Real> softmax_rows(const Tensor<Real>& logits);

template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& input, Real rate, Mode mode, std::mt19937_64& rng);

// Identity forward; backward multiplies the incoming gradient by -factor.
template <typename Real>
Tensor<Real> gradient_reversal(const Tensor<Real>& input, Real factor = Real(1));

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& input, Shape shape);

// [B, ...] -> [B, prod(...)]
template <typename Real>
Tensor<Real> flatten(const Tensor<Real>& input);

// Concatenates along the last axis; all leading extents must agree.
template <typename Real>
Tensor<Real> concat_last(const std::vector<Tensor<Real>>& parts);

// Slice [begin, end) of the last axis.
template <typename Real>
Tensor<Real> slice_last(const Tensor<Real>& input, std::size_t begin, std::size_t end);

// out[i] = input[order[i]] along axis 0.
template <typename Real>
Tensor<Real> gather_batch(const Tensor<Real>& input, std::span<const std::size_t> order);

// [B, D] -> [B, H, W, D] by replication over the spatial grid.
template <typename Real>
Tensor<Real> broadcast_spatial(const Tensor<Real>& input, std::size_t height, std::size_t width);

// log(mean(e^x)) over all elements, stabilized by subtracting the maximum.
template <typename Real>
Tensor<Real> log_mean_exp(const Tensor<Real>& input);

}  // namespace sicr::diff
