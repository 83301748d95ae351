#include "sicr/explain/lrp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <string>

#include "sicr/errors.hpp"
#include "sicr/log.hpp"

namespace sicr::explain {

using diff::Tensor;
using model::Layer;
using model::LayerKind;

namespace {

// Parameters stop requiring grad so relevance passes do not touch them.
template <typename Real>
class FrozenParameters {
 public:
  explicit FrozenParameters(const std::vector<Layer<Real>*>& layers) {
    for (auto* l : layers) l->collect_parameters(params_);
    for (auto* p : params_) {
      saved_.push_back(p->tensor.requires_grad());
      p->tensor.set_requires_grad(false);
    }
  }
  ~FrozenParameters() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->tensor.set_requires_grad(saved_[i]);
  }
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  std::vector<diff::Parameter<Real>*> params_;
  std::vector<bool> saved_;
};

// Vector-Jacobian product of layers[begin, end) at `input` with `weights`
// laid on the output. Returns (output, d<weights, output>/d input).
template <typename Real>
std::pair<Tensor<Real>, std::vector<Real>> vjp(const std::vector<Layer<Real>*>& layers, std::size_t begin,
                                               std::size_t end, const Tensor<Real>& input,
                                               const std::function<std::vector<Real>(const Tensor<Real>&)>& weights) {
  auto leaf = Tensor<Real>::from(input.shape(), input.values(), true);
  diff::Tape<Real> tape;
  model::ForwardContext ctx{diff::Mode::Eval, nullptr};
  Tensor<Real> z = leaf;
  for (std::size_t k = begin; k < end; ++k) z = layers[k]->forward(z, ctx);
  auto w = Tensor<Real>::from(z.shape(), weights(z));
  tape.backward(diff::sum(diff::mul(z, w)));
  std::vector<Real> g(leaf.size(), Real(0));
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), g.begin());
  return {z, std::move(g)};
}

template <typename Real>
double total(const Tensor<Real>& t) {
  double s = 0;
  for (Real v : t.data()) s += double(v);
  return s;
}

}  // namespace

template <typename Real>
std::vector<Layer<Real>*> layers_of(const model::Sequential<Real>& seq) {
  std::vector<Layer<Real>*> out;
  for (std::size_t i = 0; i < seq.size(); ++i) out.push_back(&seq.layer(i));
  return out;
}

template <typename Real>
Tensor<Real> lrp_chain(const std::vector<Layer<Real>*>& layers, const Tensor<Real>& input,
                       const Tensor<Real>& relevance, double eps, std::vector<double>* layer_sums) {
  if (!(eps >= 0)) throw ConfigError("LRP epsilon must be nonnegative");
  FrozenParameters<Real> frozen(layers);
  std::vector<Tensor<Real>> acts{input};
  {
    diff::NoGradGuard<Real> guard;
    model::ForwardContext ctx{diff::Mode::Eval, nullptr};
    for (auto* l : layers) acts.push_back(l->forward(acts.back(), ctx));
  }
  if (acts.back().shape() != relevance.shape()) {
    throw ShapeError("relevance " + diff::shape_string(relevance.shape()) + " does not match chain output " +
                     diff::shape_string(acts.back().shape()));
  }

  Tensor<Real> r = relevance;
  std::size_t k = layers.size();
  while (k > 0) {
    const std::size_t last = k - 1;
    const LayerKind kind = layers[last]->kind();
    if (kind == LayerKind::Activation) {
      k = last;
      continue;
    }
    const auto& r_out = r.values();
    if (kind == LayerKind::Routing) {
      auto [z, g] = vjp<Real>(layers, last, k, acts[last], [&](const Tensor<Real>&) { return r_out; });
      r = Tensor<Real>::from(acts[last].shape(), std::move(g));
      k = last;
    } else {
      // Linear layer plus the normalization layers that follow it.
      std::size_t first = last;
      while (first > 0 && layers[first]->kind() == LayerKind::Normalization &&
             (layers[first - 1]->kind() == LayerKind::Normalization ||
              layers[first - 1]->kind() == LayerKind::Linear)) {
        --first;
      }
      auto stabilized = [&](const Tensor<Real>& z) {
        std::vector<Real> s(z.size());
        for (std::size_t n = 0; n < s.size(); ++n) {
          const double zn = double(z[n]);
          const double den = zn + eps * (zn >= 0 ? 1.0 : -1.0);
          s[n] = den == 0 ? Real(0) : Real(double(r_out[n]) / den);
        }
        return s;
      };
      auto [z, g] = vjp<Real>(layers, first, k, acts[first], stabilized);
      const auto& a = acts[first].values();
      for (std::size_t n = 0; n < g.size(); ++n) g[n] *= a[n];
      r = Tensor<Real>::from(acts[first].shape(), std::move(g));
      k = first;
    }
    if (layer_sums) layer_sums->push_back(total(r));
  }
  return r;
}

template <typename Real>
RelevanceMap lrp_epsilon(model::Network<Real>& net, const signal::Trial& trial, int target, double eps,
                         LrpDetails* details) {
  const auto& cfg = net.config();
  if (trial.n_channels != cfg.n_channels || trial.n_times != cfg.n_times) {
    throw ShapeError("trial is " + std::to_string(trial.n_channels) + "x" + std::to_string(trial.n_times) +
                     ", model expects " + std::to_string(cfg.n_channels) + "x" + std::to_string(cfg.n_times));
  }
  if (target < 0 || std::size_t(target) >= cfg.n_classes) throw ConfigError("LRP target class out of range");
  if (!(eps > 0)) throw ConfigError("LRP epsilon must be positive");

  RelevanceMap map{trial.n_channels, trial.n_times, target, std::vector<double>(trial.x.size(), 0.0)};
  bool all_zero = true;
  for (auto* p : net.parameters()) {
    const auto& n = p->name;
    const bool is_weight = n.ends_with("kernel") || n.ends_with("weights");
    if (is_weight && std::any_of(p->tensor.data().begin(), p->tensor.data().end(), [](Real v) { return v != 0; })) {
      all_zero = false;
      break;
    }
  }
  if (all_zero) {
    warn("LRP on a degenerate model (all weights zero); returning an all-zero relevance map");
    return map;
  }

  std::vector<Real> xs(trial.x.begin(), trial.x.end());
  auto x = Tensor<Real>::from({1, trial.n_channels, trial.n_times, 1}, std::move(xs));
  model::FeatureBundle<Real> f;
  {
    diff::NoGradGuard<Real> guard;
    model::ForwardContext ctx{diff::Mode::Eval, nullptr};
    f = net.forward(x, ctx);
  }
  std::vector<Real> r_logits(f.logits.size(), Real(0));
  r_logits[std::size_t(target)] = f.logits[std::size_t(target)];
  std::vector<double> sums;
  auto r_fg = lrp_chain(layers_of(net.classifier()), f.f_g, Tensor<Real>::from(f.logits.shape(), r_logits), eps, &sums);
  auto r_re = lrp_chain(layers_of(net.global_encoder()), f.f_re, r_fg, eps, &sums);

  // V's output is [f_re | f_ir]; f_ir never reaches the classifier.
  const std::size_t d = f.f_re.shape().back();
  const std::size_t cells = f.f_re.size() / d;
  std::vector<Real> r_v(2 * f.f_re.size(), Real(0));
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t k = 0; k < d; ++k) r_v[c * 2 * d + k] = r_re[c * d + k];
  }
  auto v_shape = f.f_re.shape();
  v_shape.back() = 2 * d;
  std::vector<double> r_ir(f.f_ir.size());
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t k = 0; k < d; ++k) r_ir[c * d + k] = double(r_v[c * 2 * d + d + k]);
  }
  auto r_fl = lrp_chain(std::vector<Layer<Real>*>{&net.splitter()}, f.f_l,
                        Tensor<Real>::from(v_shape, std::move(r_v)), eps, &sums);
  auto r_x = lrp_chain(layers_of(net.local_encoder()), x, r_fl, eps, &sums);

  for (std::size_t i = 0; i < map.values.size(); ++i) map.values[i] = double(r_x[i]);
  if (details) {
    details->output = double(r_logits[std::size_t(target)]);
    details->layer_sums = std::move(sums);
    details->f_ir_relevance = std::move(r_ir);
  }
  return map;
}

std::vector<double> channel_relevance(const RelevanceMap& map, Aggregation how) {
  std::vector<double> out(map.n_channels, 0.0);
  for (std::size_t c = 0; c < map.n_channels; ++c) {
    for (std::size_t t = 0; t < map.n_times; ++t) {
      out[c] += how == Aggregation::Magnitude ? std::abs(map.at(c, t)) : map.at(c, t);
    }
    out[c] /= double(map.n_times);
  }
  return out;
}

std::vector<double> normalize_unit(std::vector<double> v) {
  if (v.empty()) return v;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, b = *hi;
  for (double& x : v) x = b > a ? (x - a) / (b - a) : 0.5;
  return v;
}

std::vector<double> topographic_relevance(const std::vector<RelevanceMap>& maps, Aggregation how) {
  if (maps.empty()) throw ConfigError("topographic relevance needs at least one map");
  std::vector<double> acc(maps.front().n_channels, 0.0);
  for (const auto& m : maps) {
    if (m.n_channels != maps.front().n_channels || m.n_times != maps.front().n_times) {
      throw ShapeError("relevance maps differ in shape");
    }
    const auto ch = channel_relevance(m, how);
    for (std::size_t c = 0; c < ch.size(); ++c) acc[c] += ch[c];
  }
  for (double& a : acc) a /= double(maps.size());
  return normalize_unit(std::move(acc));
}

namespace {

void put_float(std::string& line, float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  line.append(buf, res.ptr);
}

}  // namespace

template <typename Real>
void export_embeddings(std::ostream& out, model::Network<Real>& net, const std::vector<signal::Trial>& trials) {
  const std::size_t d_local = [&] {
    auto s = model::local_feature_shape(net.config());
    return s[0] * s[1] * s[2];
  }();
  const std::size_t d_global = model::global_feature_dim(net.config());
  const std::size_t width = std::max(d_local, d_global);
  out << "kind,subject_id,class";
  for (std::size_t i = 0; i < width; ++i) out << ",dim_" << i;
  out << '\n';

  const char* kinds[] = {"f_ir", "f_re", "f_g"};
  std::string rows[3];
  diff::NoGradGuard<Real> guard;
  model::ForwardContext ctx{diff::Mode::Eval, nullptr};
  for (const auto& t : trials) {
    std::vector<Real> xs(t.x.begin(), t.x.end());
    auto f = net.forward(Tensor<Real>::from({1, t.n_channels, t.n_times, 1}, std::move(xs)), ctx);
    const Tensor<Real>* feats[] = {&f.f_ir, &f.f_re, &f.f_g};
    for (int k = 0; k < 3; ++k) {
      std::string& line = rows[k];
      line += kinds[k];
      line += ',' + std::to_string(t.subject) + ',' + std::to_string(t.label);
      for (Real v : feats[k]->data()) {
        line += ',';
        put_float(line, static_cast<float>(v));
      }
      for (std::size_t i = feats[k]->size(); i < width; ++i) line += ',';
      line += '\n';
    }
  }
  for (const auto& r : rows) out << r;
  if (!out) throw IoError("failed writing embeddings");
}

#define SICR_INSTANTIATE_LRP(R)                                                                          \
  template std::vector<Layer<R>*> layers_of(const model::Sequential<R>&);                                \
  template Tensor<R> lrp_chain(const std::vector<Layer<R>*>&, const Tensor<R>&, const Tensor<R>&, double, \
                               std::vector<double>*);                                                    \
  template RelevanceMap lrp_epsilon(model::Network<R>&, const signal::Trial&, int, double, LrpDetails*);  \
  template void export_embeddings(std::ostream&, model::Network<R>&, const std::vector<signal::Trial>&);

SICR_INSTANTIATE_LRP(float)
SICR_INSTANTIATE_LRP(double)

}  // namespace sicr::explain
