#include "sicr/io/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "sicr/errors.hpp"
#include "sicr/io/config_json.hpp"

namespace sicr::io {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

std::string payload_path(const std::string& manifest_path) {
  return std::filesystem::path(manifest_path).replace_extension(".bin").string();
}

namespace {

constexpr const char* kFormat = "SICR-CHECKPOINT v1";

template <typename Real>
void append_f32(std::string& out, const std::vector<Real>& values) {
  for (Real v : values) {
    const float f = static_cast<float>(v);
    char bytes[sizeof f];
    std::memcpy(bytes, &f, sizeof f);
    out.append(bytes, sizeof f);
  }
}

}  // namespace

template <typename Real>
void save_checkpoint(const std::string& manifest_path, const train::SicrModel<Real>& model,
                     const train::TrainConfig& config, std::size_t epoch) {
  Json params = Json::array();
  std::string payload;
  for (auto* p : model.parameters()) {
    params.push_back({{"name", p->name}, {"shape", p->tensor.shape()}});
    append_f32(payload, p->tensor.values());
  }
  Json buffers = Json::array();
  for (const auto& b : model.buffers()) {
    buffers.push_back({{"name", b.name}, {"size", b.values->size()}});
    append_f32(payload, *b.values);
  }
  const std::string bin = payload_path(manifest_path);
  Json manifest{{"format", kFormat},
                {"config", to_json(config)},
                {"seed", config.seed},
                {"epoch", epoch},
                {"payload", std::filesystem::path(bin).filename().string()},
                {"payload_floats", payload.size() / sizeof(float)},
                {"parameters", params},
                {"buffers", buffers}};
  std::ofstream m(manifest_path, std::ios::binary);
  if (!m) throw IoError("cannot write " + manifest_path);
  m << manifest.dump(2) << '\n';
  std::ofstream p(bin, std::ios::binary);
  if (!p) throw IoError("cannot write " + bin);
  p.write(payload.data(), std::streamsize(payload.size()));
  if (!m || !p) throw IoError("short write for checkpoint " + manifest_path);
}

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::string& manifest_path) {
  const Json manifest = read_json_file(manifest_path);
  if (!manifest.is_object() || manifest.value("format", std::string()) != kFormat) {
    throw ConfigError(manifest_path + ": not a " + std::string(kFormat) + " manifest");
  }
  LoadedCheckpoint<Real> out;
  try {
    merge(manifest.at("config"), out.config, "config");
    out.epoch = manifest.at("epoch").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw ConfigError(manifest_path + ": " + e.what());
  }
  out.config.validate();
  std::mt19937_64 rng(out.config.seed);
  out.model = std::make_unique<train::SicrModel<Real>>(out.config, rng);

  const std::string bin = payload_path(manifest_path);
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot open " + bin);
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t offset = 0;
  auto take = [&](std::vector<Real>& dst, const std::string& name) {
    const std::size_t bytes = dst.size() * sizeof(float);
    if (offset + bytes > payload.size()) throw ConfigError(bin + ": payload too short at " + name);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      float f;
      std::memcpy(&f, payload.data() + offset + i * sizeof f, sizeof f);
      dst[i] = static_cast<Real>(f);
    }
    offset += bytes;
  };

  const auto& entries = manifest.at("parameters");
  const auto params = out.model->parameters();
  if (entries.size() != params.size()) {
    throw ConfigError(manifest_path + ": " + std::to_string(entries.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = entries[i].at("name").get<std::string>();
    const auto shape = entries[i].at("shape").get<diff::Shape>();
    if (name != params[i]->name || shape != params[i]->tensor.shape()) {
      throw ConfigError(manifest_path + ": parameter " + std::to_string(i) + " is " + name + " " +
                        diff::shape_string(shape) + ", model expects " + params[i]->name + " " +
                        diff::shape_string(params[i]->tensor.shape()));
    }
    take(params[i]->tensor.values(), name);
  }
  const auto& buf_entries = manifest.at("buffers");
  auto bufs = out.model->buffers();
  if (buf_entries.size() != bufs.size()) throw ConfigError(manifest_path + ": buffer count mismatch");
  for (std::size_t i = 0; i < bufs.size(); ++i) {
    const auto name = buf_entries[i].at("name").get<std::string>();
    if (name != bufs[i].name || buf_entries[i].at("size").get<std::size_t>() != bufs[i].values->size()) {
      throw ConfigError(manifest_path + ": buffer " + name + " does not match " + bufs[i].name);
    }
    take(*bufs[i].values, name);
  }
  if (offset != payload.size()) throw ConfigError(bin + ": trailing bytes after the last buffer");
  return out;
}

template void save_checkpoint(const std::string&, const train::SicrModel<float>&, const train::TrainConfig&,
                              std::size_t);
template void save_checkpoint(const std::string&, const train::SicrModel<double>&, const train::TrainConfig&,
                              std::size_t);
template LoadedCheckpoint<float> load_checkpoint(const std::string&);
template LoadedCheckpoint<double> load_checkpoint(const std::string&);

}  // namespace sicr::io
