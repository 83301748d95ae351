#include "sicr/model/network.hpp"

#include <algorithm>
#include <cmath>

namespace sicr::model {

std::string to_string(Backbone b) {
  return b == Backbone::DeepConvNet ? "deepconvnet" : "eegnet";
}

Backbone parse_backbone(const std::string& name) {
  if (name == "deepconvnet") return Backbone::DeepConvNet;
  if (name == "eegnet") return Backbone::EEGNet;
  throw ConfigError("unknown backbone '" + name + "' (expected deepconvnet|eegnet)");
}

std::size_t EncoderConfig::eegnet_temporal_kernel() const {
  return static_cast<std::size_t>(std::floor(sample_rate / 2.0));
}

std::size_t EncoderConfig::eegnet_separable_kernel() const {
  if (separable_kernel > 0) return separable_kernel;
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(sample_rate / 8.0)));
}

void EncoderConfig::validate() const {
  if (n_channels < 2) throw ConfigError("encoder needs at least 2 channels");
  if (n_classes < 2) throw ConfigError("encoder needs at least 2 classes");
  if (!(sample_rate > 0)) throw ConfigError("sample rate must be positive");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("dropout rate must lie in [0,1)");
  if (!(l2 >= 0)) throw ConfigError("l2 coefficient must be nonnegative");
  if (backbone == Backbone::DeepConvNet && base_depth == 0) throw ConfigError("base_depth must be >= 1");
  if (backbone == Backbone::EEGNet &&
      (temporal_filters == 0 || depth_multiplier == 0 || separable_filters == 0)) {
    throw ConfigError("EEGNet filter counts must be >= 1");
  }
  if (backbone == Backbone::EEGNet && eegnet_temporal_kernel() < 1) {
    throw ConfigError("sample rate too low for EEGNet temporal kernel");
  }
}

namespace {

template <typename Real>
void add_deepconv_block(Sequential<Real>& seq, const EncoderConfig& c, const std::string& name,
                        std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const Real l2 = Real(c.l2);
  seq.template add<Dropout<Real>>(Real(c.dropout_rate));
  seq.template add<Conv2D<Real>>(name + ".conv", 1, kDeepConvKernel, in, out, false, rng,
                                 diff::Stride2{}, diff::Padding::Valid, l2);
  seq.template add<BatchNorm<Real>>(name + ".bn", out);
  seq.template add<Elu<Real>>();
  seq.template add<MaxPool<Real>>(diff::Window2{1, kDeepConvPool}, diff::Stride2{1, kDeepConvPool});
}

template <typename Real>
void add_eegnet_global(Sequential<Real>& seq, const EncoderConfig& c, const std::string& name,
                       std::mt19937_64& rng) {
  const std::size_t d1 = c.temporal_filters * c.depth_multiplier;
  const std::size_t k = c.eegnet_separable_kernel();
  seq.template add<SeparableConv2D<Real>>(name + ".separable", 1, k, d1, c.separable_filters, rng,
                                          Real(c.l2));
  seq.template add<BatchNorm<Real>>(name + ".bn", c.separable_filters);
  seq.template add<Elu<Real>>();
  seq.template add<AvgPool<Real>>(diff::Window2{1, c.eegnet_pool_global},
                                  diff::Stride2{1, c.eegnet_pool_global});
  seq.template add<Dropout<Real>>(Real(c.dropout_rate));
  seq.template add<Flatten<Real>>();
}

}  // namespace

template <typename Real>
EncoderParts<Real> build_deepconvnet(const EncoderConfig& c, std::mt19937_64& rng) {
  c.validate();
  if (c.backbone != Backbone::DeepConvNet) throw ConfigError("config backbone is not deepconvnet");
  const std::size_t b = c.base_depth;
  const Real l2 = Real(c.l2);
  EncoderParts<Real> parts;
  auto& local = parts.local;
  local.template add<Conv2D<Real>>("block1.temporal", 1, kDeepConvKernel, 1, b, true, rng,
                                   diff::Stride2{}, diff::Padding::Valid, l2);
  local.template add<Conv2D<Real>>("block1.spatial", c.n_channels, 1, b, b, false, rng,
                                   diff::Stride2{}, diff::Padding::Valid, l2);
  local.template add<BatchNorm<Real>>("block1.bn", b);
  local.template add<Elu<Real>>();
  // Shape checks per block give precise error messages.
  Shape s{1, c.n_channels, c.n_times, 1};
  try {
    for (std::size_t i = 0; i < local.size(); ++i) s = local.layer(i).output_shape(s);
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("block 1: ") + e.what());
  }
  const std::size_t widths[] = {b, 2 * b, 4 * b, 8 * b};
  for (std::size_t blk = 2; blk <= 3; ++blk) {
    const std::size_t first = local.size();
    add_deepconv_block(local, c, "block" + std::to_string(blk), widths[blk - 2], widths[blk - 1], rng);
    try {
      for (std::size_t i = first; i < local.size(); ++i) s = local.layer(i).output_shape(s);
    } catch (const ShapeError& e) {
      throw ShapeError("block " + std::to_string(blk) + ": " + e.what());
    }
  }
  parts.global = build_global_block<Real>(c, "block4", rng);
  const std::size_t d1 = s[3];
  parts.splitter = std::make_unique<Conv2D<Real>>("splitter", 1, 1, d1, 2 * d1, false, rng,
                                                  diff::Stride2{}, diff::Padding::Valid, l2);
  Shape g = s;
  try {
    g = parts.global.output_shape(g);
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("block 4: ") + e.what());
  }
  parts.classifier.template add<Dense<Real>>("classifier", g[1], c.n_classes, true, rng, l2);
  return parts;
}

template <typename Real>
EncoderParts<Real> build_eegnet(const EncoderConfig& c, std::mt19937_64& rng) {
  c.validate();
  if (c.backbone != Backbone::EEGNet) throw ConfigError("config backbone is not eegnet");
  const Real l2 = Real(c.l2);
  const std::size_t f1 = c.temporal_filters, d1 = f1 * c.depth_multiplier;
  EncoderParts<Real> parts;
  auto& local = parts.local;
  local.template add<Conv2D<Real>>("layer1.temporal", 1, c.eegnet_temporal_kernel(), 1, f1, false,
                                   rng, diff::Stride2{}, diff::Padding::Valid, l2);
  local.template add<BatchNorm<Real>>("layer1.bn", f1);
  local.template add<DepthwiseConv2D<Real>>("layer2.depthwise", c.n_channels, 1, f1,
                                            c.depth_multiplier, rng, l2);
  local.template add<BatchNorm<Real>>("layer2.bn", d1);
  local.template add<Elu<Real>>();
  local.template add<AvgPool<Real>>(diff::Window2{1, c.eegnet_pool_local},
                                    diff::Stride2{1, c.eegnet_pool_local});
  local.template add<Dropout<Real>>(Real(c.dropout_rate));
  Shape s{1, c.n_channels, c.n_times, 1};
  try {
    s = local.output_shape(s);
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("layers 1-2: ") + e.what());
  }
  parts.global = build_global_block<Real>(c, "layer3", rng);
  parts.splitter = std::make_unique<Conv2D<Real>>("splitter", 1, 1, d1, 2 * d1, false, rng,
                                                  diff::Stride2{}, diff::Padding::Valid, l2);
  Shape g = s;
  try {
    g = parts.global.output_shape(g);
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("layer 3: ") + e.what());
  }
  parts.classifier.template add<Dense<Real>>("classifier", g[1], c.n_classes, true, rng, l2);
  return parts;
}

template <typename Real>
Sequential<Real> build_global_block(const EncoderConfig& c, const std::string& prefix,
                                    std::mt19937_64& rng) {
  Sequential<Real> seq;
  if (c.backbone == Backbone::DeepConvNet) {
    add_deepconv_block(seq, c, prefix, 4 * c.base_depth, 8 * c.base_depth, rng);
    seq.template add<Flatten<Real>>();
  } else {
    add_eegnet_global(seq, c, prefix, rng);
  }
  return seq;
}

Shape local_feature_shape(const EncoderConfig& config) {
  std::mt19937_64 rng(0);
  auto parts = config.backbone == Backbone::DeepConvNet ? build_deepconvnet<float>(config, rng)
                                                        : build_eegnet<float>(config, rng);
  const Shape s = parts.local.output_shape({1, config.n_channels, config.n_times, 1});
  return {s[1], s[2], s[3]};
}

std::size_t global_feature_dim(const EncoderConfig& config) {
  std::mt19937_64 rng(0);
  auto parts = config.backbone == Backbone::DeepConvNet ? build_deepconvnet<float>(config, rng)
                                                        : build_eegnet<float>(config, rng);
  const Shape s = parts.global.output_shape(parts.local.output_shape({1, config.n_channels, config.n_times, 1}));
  return s[1];
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> split_depth(const Tensor<Real>& v_out) {
  const std::size_t d = v_out.shape().back();
  if (d % 2 != 0) {
    throw ConfigError("splitter output depth " + std::to_string(d) + " is odd");
  }
  return {diff::slice_last(v_out, 0, d / 2), diff::slice_last(v_out, d / 2, d)};
}

template <typename Real>
Network<Real>::Network(const EncoderConfig& config, std::mt19937_64& rng)
    : config_(config),
      parts_(config.backbone == Backbone::DeepConvNet ? build_deepconvnet<Real>(config, rng)
                                                      : build_eegnet<Real>(config, rng)) {}

template <typename Real>
Tensor<Real> Network<Real>::as_input(const Tensor<Real>& batch) const {
  const auto& s = batch.shape();
  const bool ok3 = s.size() == 3 && s[1] == config_.n_channels && s[2] == config_.n_times;
  const bool ok4 = s.size() == 4 && s[1] == config_.n_channels && s[2] == config_.n_times && s[3] == 1;
  if (!ok3 && !ok4) {
    throw ShapeError("network input " + diff::shape_string(s) + " does not match [B," +
                     std::to_string(config_.n_channels) + "," + std::to_string(config_.n_times) + "]");
  }
  return ok4 ? batch : diff::reshape(batch, {s[0], s[1], s[2], 1});
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> Network<Real>::decompose(const Tensor<Real>& f_l,
                                                                ForwardContext& ctx) {
  return split_depth(parts_.splitter->forward(f_l, ctx));
}

template <typename Real>
FeatureBundle<Real> Network<Real>::forward(const Tensor<Real>& batch, ForwardContext& ctx) {
  FeatureBundle<Real> f;
  f.f_l = parts_.local.forward(as_input(batch), ctx);
  std::tie(f.f_re, f.f_ir) = decompose(f.f_l, ctx);
  f.f_g = parts_.global.forward(f.f_re, ctx);
  f.logits = parts_.classifier.forward(f.f_g, ctx);
  return f;
}

template <typename Real>
std::vector<Real> Network<Real>::predict_proba(const Tensor<Real>& batch) {
  diff::NoGradGuard<Real> guard;
  ForwardContext ctx{Mode::Eval, nullptr};
  return diff::softmax_rows(forward(batch, ctx).logits);
}

template <typename Real>
std::vector<diff::Parameter<Real>*> Network<Real>::parameters() const {
  auto out = parts_.local.parameters();
  parts_.splitter->collect_parameters(out);
  for (auto* p : parts_.global.parameters()) out.push_back(p);
  for (auto* p : parts_.classifier.parameters()) out.push_back(p);
  return out;
}

template <typename Real>
std::vector<Buffer<Real>> Network<Real>::buffers() const {
  auto out = parts_.local.buffers();
  for (auto& b : parts_.global.buffers()) out.push_back(b);
  return out;
}

#define SICR_INSTANTIATE_NETWORK(R)                                                             \
  template EncoderParts<R> build_deepconvnet(const EncoderConfig&, std::mt19937_64&);          \
  template EncoderParts<R> build_eegnet(const EncoderConfig&, std::mt19937_64&);               \
  template Sequential<R> build_global_block(const EncoderConfig&, const std::string&,          \
                                            std::mt19937_64&);                                  \
  template std::pair<Tensor<R>, Tensor<R>> split_depth(const Tensor<R>&);                      \
  template class Network<R>;

SICR_INSTANTIATE_NETWORK(float)
SICR_INSTANTIATE_NETWORK(double)

}  // namespace sicr::model
