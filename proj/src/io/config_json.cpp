#include "sicr/io/config_json.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "sicr/errors.hpp"

namespace sicr::io {

void merge(const Json& j, signal::NuisanceSpec& n, const std::string& path);

namespace {

// Tracks which keys of one object were consumed so leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    const std::string where = path_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(where + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError(where + ": expected a nonnegative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(where + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(where + ": expected a string");
    }
    out = it->template get<T>();
  }

  template <typename T>
  void nested(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    merge(*it, out, path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json to_json(const signal::NuisanceSpec& n) {
  return Json{{"tilt_range", n.tilt_range},
              {"mixing_strength", n.mixing_strength},
              {"noise_floor", n.noise_floor},
              {"noise_jitter", n.noise_jitter}};
}

}  // namespace

void merge(const Json& j, signal::NuisanceSpec& n, const std::string& path) {
  ObjectReader r(j, path);
  r.read("tilt_range", n.tilt_range);
  r.read("mixing_strength", n.mixing_strength);
  r.read("noise_floor", n.noise_floor);
  r.read("noise_jitter", n.noise_jitter);
  r.finish();
}

Json to_json(const model::EncoderConfig& c) {
  return Json{{"backbone", model::to_string(c.backbone)},
              {"n_channels", c.n_channels},
              {"n_times", c.n_times},
              {"sample_rate", c.sample_rate},
              {"n_classes", c.n_classes},
              {"dropout_rate", c.dropout_rate},
              {"l2", c.l2},
              {"base_depth", c.base_depth},
              {"temporal_filters", c.temporal_filters},
              {"depth_multiplier", c.depth_multiplier},
              {"separable_filters", c.separable_filters},
              {"separable_kernel", c.separable_kernel},
              {"eegnet_pool_local", c.eegnet_pool_local},
              {"eegnet_pool_global", c.eegnet_pool_global}};
}

void merge(const Json& j, model::EncoderConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  std::string backbone = model::to_string(c.backbone);
  r.read("backbone", backbone);
  c.backbone = model::parse_backbone(backbone);
  r.read("n_channels", c.n_channels);
  r.read("n_times", c.n_times);
  r.read("sample_rate", c.sample_rate);
  r.read("n_classes", c.n_classes);
  r.read("dropout_rate", c.dropout_rate);
  r.read("l2", c.l2);
  r.read("base_depth", c.base_depth);
  r.read("temporal_filters", c.temporal_filters);
  r.read("depth_multiplier", c.depth_multiplier);
  r.read("separable_filters", c.separable_filters);
  r.read("separable_kernel", c.separable_kernel);
  r.read("eegnet_pool_local", c.eegnet_pool_local);
  r.read("eegnet_pool_global", c.eegnet_pool_global);
  r.finish();
}

Json to_json(const train::EstimatorConfig& c) {
  return Json{{"pair_hidden", c.pair_hidden},
              {"local_hidden", c.local_hidden},
              {"global_hidden", c.global_hidden},
              {"l2", c.l2}};
}

void merge(const Json& j, train::EstimatorConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.read("pair_hidden", c.pair_hidden);
  r.read("local_hidden", c.local_hidden);
  r.read("global_hidden", c.global_hidden);
  r.read("l2", c.l2);
  r.finish();
}

Json to_json(const train::LossWeights& w) {
  return Json{{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}};
}

void merge(const Json& j, train::LossWeights& w, const std::string& path) {
  ObjectReader r(j, path);
  r.read("alpha", w.alpha);
  r.read("beta", w.beta);
  r.read("gamma", w.gamma);
  r.finish();
}

Json to_json(const train::TrainConfig& c) {
  return Json{{"encoder", to_json(c.encoder)},
              {"estimators", to_json(c.estimators)},
              {"weights", to_json(c.weights)},
              {"variant", train::to_string(c.variant)},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"lr_decay", c.lr_decay},
              {"patience", c.patience},
              {"seed", c.seed}};
}

void merge(const Json& j, train::TrainConfig& c, const std::string& path) {
  ObjectReader r(j, path);
  r.nested("encoder", c.encoder);
  r.nested("estimators", c.estimators);
  r.nested("weights", c.weights);
  std::string variant = train::to_string(c.variant);
  r.read("variant", variant);
  c.variant = train::parse_variant(variant);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("lr", c.lr);
  r.read("lr_decay", c.lr_decay);
  r.read("patience", c.patience);
  r.read("seed", c.seed);
  r.finish();
}

Json to_json(const signal::CohortSpec& s) {
  return Json{{"num_subjects", s.num_subjects},
              {"trials_per_class", s.trials_per_class},
              {"n_channels", s.n_channels},
              {"n_times", s.n_times},
              {"sample_rate", s.sample_rate},
              {"band_low", s.band_low},
              {"band_high", s.band_high},
              {"class_effect", s.class_effect},
              {"nuisance", to_json(s.nuisance)},
              {"seed", s.seed}};
}

void merge(const Json& j, signal::CohortSpec& s, const std::string& path) {
  ObjectReader r(j, path);
  r.read("num_subjects", s.num_subjects);
  r.read("trials_per_class", s.trials_per_class);
  r.read("n_channels", s.n_channels);
  r.read("n_times", s.n_times);
  r.read("sample_rate", s.sample_rate);
  r.read("band_low", s.band_low);
  r.read("band_high", s.band_high);
  r.read("class_effect", s.class_effect);
  r.nested("nuisance", s.nuisance);
  r.read("seed", s.seed);
  r.finish();
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON (" + e.what() + ")");
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str(), path);
}

}  // namespace sicr::io
