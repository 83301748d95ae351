#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sicr/diff/ops.hpp"
#include "sicr/diff/parameter.hpp"

namespace sicr::model {

using diff::Mode;
using diff::Shape;
using diff::Tensor;

struct ForwardContext {
  Mode mode = Mode::Eval;
  std::mt19937_64* rng = nullptr;  // required for dropout in train mode
};

// How relevance crosses a layer during epsilon-LRP.
enum class LayerKind {
  Linear,         // affine map; epsilon rule (may be merged with following Norm)
  Normalization,  // affine in eval mode; folded into the preceding Linear
  Activation,     // relevance passes through unchanged
  Routing,        // relevance follows the Jacobian transpose (pooling argmax, reshape, dropout)
};

// Named non-trainable state saved with checkpoints.
template <typename Real>
struct Buffer {
  std::string name;
  std::vector<Real>* values;
};

template <typename Real>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<Real> forward(const Tensor<Real>& x, ForwardContext& ctx) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual LayerKind kind() const = 0;
  virtual std::string type_name() const = 0;
  virtual void collect_parameters(std::vector<diff::Parameter<Real>*>&) {}
  virtual void collect_buffers(std::vector<Buffer<Real>>&) {}
};

template <typename Real>
class Conv2D : public Layer<Real> {
 public:
  Conv2D(std::string name, std::size_t kh, std::size_t kw, std::size_t depth_in,
         std::size_t depth_out, bool use_bias, std::mt19937_64& rng, diff::Stride2 stride = {},
         diff::Padding padding = diff::Padding::Valid, Real l2 = Real(0.1));
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override;
  LayerKind kind() const override { return LayerKind::Linear; }
  std::string type_name() const override { return "conv2d"; }
  void collect_parameters(std::vector<diff::Parameter<Real>*>& out) override;

  diff::Parameter<Real>& kernel() { return kernel_; }
  diff::Parameter<Real>& bias() { return bias_; }
  bool has_bias() const { return bias_.tensor.defined(); }

 private:
  diff::Parameter<Real> kernel_;
  diff::Parameter<Real> bias_;
  diff::Stride2 stride_;
  diff::Padding padding_;
};

template <typename Real>
class DepthwiseConv2D : public Layer<Real> {
 public:
  DepthwiseConv2D(std::string name, std::size_t kh, std::size_t kw, std::size_t depth_in,
                  std::size_t multiplier, std::mt19937_64& rng, Real l2 = Real(0.1));
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override;
  LayerKind kind() const override { return LayerKind::Linear; }
  std::string type_name() const override { return "depthwise_conv2d"; }
  void collect_parameters(std::vector<diff::Parameter<Real>*>& out) override;

  diff::Parameter<Real>& kernel() { return kernel_; }

 private:
  diff::Parameter<Real> kernel_;
};

// Depthwise (multiplier 1) then 1x1 pointwise.
template <typename Real>
class SeparableConv2D : public Layer<Real> {
 public:
  SeparableConv2D(std::string name, std::size_t kh, std::size_t kw, std::size_t depth_in,
                  std::size_t depth_out, std::mt19937_64& rng, Real l2 = Real(0.1));
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override;
  LayerKind kind() const override { return LayerKind::Linear; }
  std::string type_name() const override { return "separable_conv2d"; }
  void collect_parameters(std::vector<diff::Parameter<Real>*>& out) override;

  diff::Parameter<Real>& depthwise_kernel() { return depthwise_; }
  diff::Parameter<Real>& pointwise_kernel() { return pointwise_; }

 private:
  diff::Parameter<Real> depthwise_;
  diff::Parameter<Real> pointwise_;
};

template <typename Real>
class BatchNorm : public Layer<Real> {
 public:
  BatchNorm(std::string name, std::size_t depth, Real momentum = Real(0.99), Real eps = Real(1e-3));
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override { return in; }
  LayerKind kind() const override { return LayerKind::Normalization; }
  std::string type_name() const override { return "batch_norm"; }
  void collect_parameters(std::vector<diff::Parameter<Real>*>& out) override;
  void collect_buffers(std::vector<Buffer<Real>>& out) override;

  diff::Parameter<Real>& scale() { return scale_; }
  diff::Parameter<Real>& shift() { return shift_; }
  diff::BatchNormStats<Real>& running() { return running_; }
  Real eps() const { return eps_; }

 private:
  std::string name_;
  diff::Parameter<Real> scale_;
  diff::Parameter<Real> shift_;
  diff::BatchNormStats<Real> running_;
  Real momentum_;
  Real eps_;
};

template <typename Real>
class Elu : public Layer<Real> {
 public:
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext&) override { return diff::elu(x); }
  Shape output_shape(const Shape& in) const override { return in; }
  LayerKind kind() const override { return LayerKind::Activation; }
  std::string type_name() const override { return "elu"; }
};

template <typename Real>
class MaxPool : public Layer<Real> {
 public:
  MaxPool(diff::Window2 window, diff::Stride2 stride) : window_(window), stride_(stride) {}
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext&) override {
    return diff::max_pool2d(x, window_, stride_);
  }
  Shape output_shape(const Shape& in) const override;
  LayerKind kind() const override { return LayerKind::Routing; }
  std::string type_name() const override { return "max_pool"; }

 private:
  diff::Window2 window_;
  diff::Stride2 stride_;
};

template <typename Real>
class AvgPool : public Layer<Real> {
 public:
  AvgPool(diff::Window2 window, diff::Stride2 stride) : window_(window), stride_(stride) {}
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext&) override {
    return diff::avg_pool2d(x, window_, stride_);
  }
  Shape output_shape(const Shape& in) const override;
  LayerKind kind() const override { return LayerKind::Linear; }
  std::string type_name() const override { return "avg_pool"; }

 private:
  diff::Window2 window_;
  diff::Stride2 stride_;
};

template <typename Real>
class Dropout : public Layer<Real> {
 public:
  explicit Dropout(Real rate);
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override { return in; }
  LayerKind kind() const override { return LayerKind::Routing; }
  std::string type_name() const override { return "dropout"; }

 private:
  Real rate_;
};

template <typename Real>
class Flatten : public Layer<Real> {
 public:
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext&) override { return diff::flatten(x); }
  Shape output_shape(const Shape& in) const override;
  LayerKind kind() const override { return LayerKind::Routing; }
  std::string type_name() const override { return "flatten"; }
};

template <typename Real>
class Dense : public Layer<Real> {
 public:
  Dense(std::string name, std::size_t in, std::size_t out, bool use_bias, std::mt19937_64& rng,
        Real l2 = Real(0.1));
  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& in) const override;
  LayerKind kind() const override { return LayerKind::Linear; }
  std::string type_name() const override { return "dense"; }
  void collect_parameters(std::vector<diff::Parameter<Real>*>& out) override;

  diff::Parameter<Real>& weights() { return weights_; }
  diff::Parameter<Real>& bias() { return bias_; }

 private:
  diff::Parameter<Real> weights_;
  diff::Parameter<Real> bias_;
};

// Ordered stack of layers with shape inference.
template <typename Real>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<Real> forward(const Tensor<Real>& x, ForwardContext& ctx) const;
  // Input of every layer followed by the final output (size() + 1 tensors).
  std::vector<Tensor<Real>> forward_trace(const Tensor<Real>& x, ForwardContext& ctx) const;
  Shape output_shape(const Shape& in) const;

  std::vector<diff::Parameter<Real>*> parameters() const;
  std::vector<Buffer<Real>> buffers() const;
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer<Real>& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer<Real>>> layers_;
};

template <typename Real>
std::size_t parameter_count(const std::vector<diff::Parameter<Real>*>& params);

}  // namespace sicr::model
