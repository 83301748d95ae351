#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sicr/model/layers.hpp"

namespace sicr::model {

enum class Backbone { DeepConvNet, EEGNet };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& name);

struct EncoderConfig {
  Backbone backbone = Backbone::EEGNet;
  std::size_t n_channels = 8;
  std::size_t n_times = 128;
  double sample_rate = 64.0;
  std::size_t n_classes = 2;
  double dropout_rate = 0.5;
  double l2 = 0.1;
  // DeepConvNet widths are base, base, 2*base, 4*base, 8*base (temporal,
  // spatial, blocks 2-4).
  std::size_t base_depth = 25;
  // EEGNet widths.
  std::size_t temporal_filters = 8;
  std::size_t depth_multiplier = 2;
  std::size_t separable_filters = 16;
  std::size_t separable_kernel = 0;  // 0 selects max(2, floor(f_s / 8))
  std::size_t eegnet_pool_local = 4;
  std::size_t eegnet_pool_global = 8;

  // floor(f_s / 2) samples.
  std::size_t eegnet_temporal_kernel() const;
  std::size_t eegnet_separable_kernel() const;
  void validate() const;
};

constexpr std::size_t kDeepConvKernel = 10;
constexpr std::size_t kDeepConvPool = 3;

template <typename Real>
struct EncoderParts {
  Sequential<Real> local;   // E_l
  Sequential<Real> global;  // E_g, ends with Flatten
  std::unique_ptr<Conv2D<Real>> splitter;  // V: 1x1, d1 -> 2*d1
  Sequential<Real> classifier;             // C
};

template <typename Real>
EncoderParts<Real> build_deepconvnet(const EncoderConfig& config, std::mt19937_64& rng);

template <typename Real>
EncoderParts<Real> build_eegnet(const EncoderConfig& config, std::mt19937_64& rng);

// A freshly initialized block with the global encoder's architecture; the
// global MI scorer embeds f_re with it.
template <typename Real>
Sequential<Real> build_global_block(const EncoderConfig& config, const std::string& prefix,
                                    std::mt19937_64& rng);

// [h1, w1, d1] of the local feature.
Shape local_feature_shape(const EncoderConfig& config);
std::size_t global_feature_dim(const EncoderConfig& config);

template <typename Real>
struct FeatureBundle {
  Tensor<Real> f_l;     // [B, h1, w1, d1]
  Tensor<Real> f_re;    // [B, h1, w1, d1]
  Tensor<Real> f_ir;    // [B, h1, w1, d1]
  Tensor<Real> f_g;     // [B, d_g]
  Tensor<Real> logits;  // [B, K]
};

// Splits a [.., 2*d1] tensor into its first and last depth halves.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> split_depth(const Tensor<Real>& v_out);

template <typename Real>
class Network {
 public:
  Network(const EncoderConfig& config, std::mt19937_64& rng);

  // batch: [B, n_c, n_t] or [B, n_c, n_t, 1].
  FeatureBundle<Real> forward(const Tensor<Real>& batch, ForwardContext& ctx);
  // Class probabilities, eval mode, no tape.
  std::vector<Real> predict_proba(const Tensor<Real>& batch);

  std::pair<Tensor<Real>, Tensor<Real>> decompose(const Tensor<Real>& f_l, ForwardContext& ctx);

  const EncoderConfig& config() const { return config_; }
  Sequential<Real>& local_encoder() { return parts_.local; }
  Sequential<Real>& global_encoder() { return parts_.global; }
  Conv2D<Real>& splitter() { return *parts_.splitter; }
  Sequential<Real>& classifier() { return parts_.classifier; }

  std::vector<diff::Parameter<Real>*> parameters() const;
  std::vector<Buffer<Real>> buffers() const;

  Tensor<Real> as_input(const Tensor<Real>& batch) const;

 private:
  EncoderConfig config_;
  EncoderParts<Real> parts_;
};

}  // namespace sicr::model
