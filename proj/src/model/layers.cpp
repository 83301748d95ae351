#include "sicr/model/layers.hpp"

namespace sicr::model {

namespace {

template <typename Real>
diff::Parameter<Real> make_param(std::string name, Tensor<Real> tensor, Real l2) {
  diff::Parameter<Real> p;
  p.name = std::move(name);
  p.tensor = std::move(tensor);
  p.l2_coefficient = l2;
  return p;
}

template <typename Real>
diff::Parameter<Real> zero_param(std::string name, std::size_t n) {
  return make_param(std::move(name), Tensor<Real>::zeros({n}, true), Real(0));
}

void require_rank4(const Shape& in, const char* what) {
  if (in.size() != 4) {
    throw ShapeError(std::string(what) + ": expected [B,H,W,D], got " + diff::shape_string(in));
  }
}

}  // namespace

template <typename Real>
Conv2D<Real>::Conv2D(std::string name, std::size_t kh, std::size_t kw, std::size_t depth_in,
                     std::size_t depth_out, bool use_bias, std::mt19937_64& rng,
                     diff::Stride2 stride, diff::Padding padding, Real l2)
    : stride_(stride), padding_(padding) {
  kernel_ = make_param(name + ".kernel",
                       diff::glorot_uniform<Real>({kh, kw, depth_in, depth_out}, kh * kw * depth_in,
                                                  kh * kw * depth_out, rng),
                       l2);
  if (use_bias) bias_ = zero_param<Real>(name + ".bias", depth_out);
}

template <typename Real>
Tensor<Real> Conv2D<Real>::forward(const Tensor<Real>& x, ForwardContext&) {
  auto y = diff::conv2d(x, kernel_.tensor, stride_, padding_);
  return has_bias() ? diff::add_bias(y, bias_.tensor) : y;
}

template <typename Real>
Shape Conv2D<Real>::output_shape(const Shape& in) const {
  require_rank4(in, "conv2d");
  const auto& k = kernel_.tensor.shape();
  if (in[3] != k[2]) {
    throw ShapeError("conv2d: input depth " + std::to_string(in[3]) + " != kernel depth " +
                     std::to_string(k[2]));
  }
  if (padding_ == diff::Padding::Same) {
    return {in[0], (in[1] + stride_.h - 1) / stride_.h, (in[2] + stride_.w - 1) / stride_.w, k[3]};
  }
  return {in[0], diff::sweep_extent(in[1], k[0], stride_.h, 0, "height"),
          diff::sweep_extent(in[2], k[1], stride_.w, 0, "width"), k[3]};
}

template <typename Real>
void Conv2D<Real>::collect_parameters(std::vector<diff::Parameter<Real>*>& out) {
  out.push_back(&kernel_);
  if (has_bias()) out.push_back(&bias_);
}

template <typename Real>
DepthwiseConv2D<Real>::DepthwiseConv2D(std::string name, std::size_t kh, std::size_t kw,
                                       std::size_t depth_in, std::size_t multiplier,
                                       std::mt19937_64& rng, Real l2) {
  if (multiplier < 1) throw ConfigError("depthwise conv: depth multiplier must be >= 1");
  kernel_ = make_param(
      name + ".kernel",
      diff::glorot_uniform<Real>({kh, kw, depth_in, multiplier}, kh * kw, kh * kw * multiplier, rng),
      l2);
}

template <typename Real>
Tensor<Real> DepthwiseConv2D<Real>::forward(const Tensor<Real>& x, ForwardContext&) {
  return diff::depthwise_conv2d(x, kernel_.tensor);
}

template <typename Real>
Shape DepthwiseConv2D<Real>::output_shape(const Shape& in) const {
  require_rank4(in, "depthwise_conv2d");
  const auto& k = kernel_.tensor.shape();
  if (in[3] != k[2]) throw ShapeError("depthwise_conv2d: input depth mismatch");
  return {in[0], diff::sweep_extent(in[1], k[0], 1, 0, "height"),
          diff::sweep_extent(in[2], k[1], 1, 0, "width"), k[2] * k[3]};
}

template <typename Real>
void DepthwiseConv2D<Real>::collect_parameters(std::vector<diff::Parameter<Real>*>& out) {
  out.push_back(&kernel_);
}

template <typename Real>
SeparableConv2D<Real>::SeparableConv2D(std::string name, std::size_t kh, std::size_t kw,
                                       std::size_t depth_in, std::size_t depth_out,
                                       std::mt19937_64& rng, Real l2) {
  depthwise_ = make_param(name + ".depthwise",
                          diff::glorot_uniform<Real>({kh, kw, depth_in, 1}, kh * kw, kh * kw, rng), l2);
  pointwise_ = make_param(
      name + ".pointwise",
      diff::glorot_uniform<Real>({1, 1, depth_in, depth_out}, depth_in, depth_out, rng), l2);
}

template <typename Real>
Tensor<Real> SeparableConv2D<Real>::forward(const Tensor<Real>& x, ForwardContext&) {
  return diff::separable_conv2d(x, depthwise_.tensor, pointwise_.tensor);
}

template <typename Real>
Shape SeparableConv2D<Real>::output_shape(const Shape& in) const {
  require_rank4(in, "separable_conv2d");
  const auto& k = depthwise_.tensor.shape();
  if (in[3] != k[2]) throw ShapeError("separable_conv2d: input depth mismatch");
  return {in[0], diff::sweep_extent(in[1], k[0], 1, 0, "height"),
          diff::sweep_extent(in[2], k[1], 1, 0, "width"), pointwise_.tensor.dim(3)};
}

template <typename Real>
void SeparableConv2D<Real>::collect_parameters(std::vector<diff::Parameter<Real>*>& out) {
  out.push_back(&depthwise_);
  out.push_back(&pointwise_);
}

template <typename Real>
BatchNorm<Real>::BatchNorm(std::string name, std::size_t depth, Real momentum, Real eps)
    : name_(name), momentum_(momentum), eps_(eps) {
  scale_ = make_param(name + ".scale", Tensor<Real>::full({depth}, Real(1), true), Real(0));
  shift_ = zero_param<Real>(name + ".shift", depth);
  running_.mean.assign(depth, Real(0));
  running_.var.assign(depth, Real(1));
}

template <typename Real>
Tensor<Real> BatchNorm<Real>::forward(const Tensor<Real>& x, ForwardContext& ctx) {
  return diff::batch_norm(x, scale_.tensor, shift_.tensor, running_, ctx.mode, momentum_, eps_);
}

template <typename Real>
void BatchNorm<Real>::collect_parameters(std::vector<diff::Parameter<Real>*>& out) {
  out.push_back(&scale_);
  out.push_back(&shift_);
}

template <typename Real>
void BatchNorm<Real>::collect_buffers(std::vector<Buffer<Real>>& out) {
  out.push_back({name_ + ".running_mean", &running_.mean});
  out.push_back({name_ + ".running_var", &running_.var});
}

template <typename Real>
Shape MaxPool<Real>::output_shape(const Shape& in) const {
  require_rank4(in, "max_pool");
  return {in[0], diff::sweep_extent(in[1], window_.h, stride_.h, 0, "height"),
          diff::sweep_extent(in[2], window_.w, stride_.w, 0, "width"), in[3]};
}

template <typename Real>
Shape AvgPool<Real>::output_shape(const Shape& in) const {
  require_rank4(in, "avg_pool");
  return {in[0], diff::sweep_extent(in[1], window_.h, stride_.h, 0, "height"),
          diff::sweep_extent(in[2], window_.w, stride_.w, 0, "width"), in[3]};
}

template <typename Real>
Dropout<Real>::Dropout(Real rate) : rate_(rate) {
  if (!(rate >= Real(0) && rate < Real(1))) throw ConfigError("dropout rate must lie in [0, 1)");
}

template <typename Real>
Tensor<Real> Dropout<Real>::forward(const Tensor<Real>& x, ForwardContext& ctx) {
  if (ctx.mode == Mode::Train && rate_ > Real(0)) {
    if (ctx.rng == nullptr) throw ContractError("dropout in train mode needs an rng");
    return diff::dropout(x, rate_, ctx.mode, *ctx.rng);
  }
  std::mt19937_64 unused;
  return diff::dropout(x, rate_, Mode::Eval, unused);
}

template <typename Real>
Shape Flatten<Real>::output_shape(const Shape& in) const {
  return {in[0], diff::shape_volume(in) / in[0]};
}

template <typename Real>
Dense<Real>::Dense(std::string name, std::size_t in, std::size_t out, bool use_bias,
                   std::mt19937_64& rng, Real l2) {
  weights_ = make_param(name + ".weights", diff::glorot_uniform<Real>({in, out}, in, out, rng), l2);
  if (use_bias) bias_ = zero_param<Real>(name + ".bias", out);
}

template <typename Real>
Tensor<Real> Dense<Real>::forward(const Tensor<Real>& x, ForwardContext&) {
  return diff::dense(x, weights_.tensor, bias_.tensor);
}

template <typename Real>
Shape Dense<Real>::output_shape(const Shape& in) const {
  if (in.size() != 2 || in[1] != weights_.tensor.dim(0)) {
    throw ShapeError("dense: input " + diff::shape_string(in) + " incompatible with weights " +
                     diff::shape_string(weights_.tensor.shape()));
  }
  return {in[0], weights_.tensor.dim(1)};
}

template <typename Real>
void Dense<Real>::collect_parameters(std::vector<diff::Parameter<Real>*>& out) {
  out.push_back(&weights_);
  if (bias_.tensor.defined()) out.push_back(&bias_);
}

template <typename Real>
Tensor<Real> Sequential<Real>::forward(const Tensor<Real>& x, ForwardContext& ctx) const {
  Tensor<Real> h = x;
  for (const auto& layer : layers_) h = layer->forward(h, ctx);
  return h;
}

template <typename Real>
std::vector<Tensor<Real>> Sequential<Real>::forward_trace(const Tensor<Real>& x,
                                                          ForwardContext& ctx) const {
  std::vector<Tensor<Real>> trace{x};
  for (const auto& layer : layers_) trace.push_back(layer->forward(trace.back(), ctx));
  return trace;
}

template <typename Real>
Shape Sequential<Real>::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& layer : layers_) s = layer->output_shape(s);
  return s;
}

template <typename Real>
std::vector<diff::Parameter<Real>*> Sequential<Real>::parameters() const {
  std::vector<diff::Parameter<Real>*> out;
  for (const auto& layer : layers_) layer->collect_parameters(out);
  return out;
}

template <typename Real>
std::vector<Buffer<Real>> Sequential<Real>::buffers() const {
  std::vector<Buffer<Real>> out;
  for (const auto& layer : layers_) layer->collect_buffers(out);
  return out;
}

template <typename Real>
std::size_t parameter_count(const std::vector<diff::Parameter<Real>*>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->tensor.size();
  return n;
}

#define SICR_INSTANTIATE_LAYERS(R)                                            \
  template class Conv2D<R>;                                                   \
  template class DepthwiseConv2D<R>;                                          \
  template class SeparableConv2D<R>;                                          \
  template class BatchNorm<R>;                                                \
  template class MaxPool<R>;                                                  \
  template class AvgPool<R>;                                                  \
  template class Dropout<R>;                                                  \
  template class Flatten<R>;                                                  \
  template class Dense<R>;                                                    \
  template class Sequential<R>;                                               \
  template std::size_t parameter_count(const std::vector<diff::Parameter<R>*>&);

SICR_INSTANTIATE_LAYERS(float)
SICR_INSTANTIATE_LAYERS(double)

}  // namespace sicr::model
