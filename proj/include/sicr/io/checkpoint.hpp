#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "sicr/train/trainer.hpp"

namespace sicr::io {

// A checkpoint is a JSON manifest (config, seed, epoch, parameter and buffer
// names with shapes) plus a payload of little-endian float32 values in
// manifest order: every parameter, then every buffer. The payload lives next
// to the manifest with the extension replaced by ".bin".
template <typename Real>
void save_checkpoint(const std::string& manifest_path, const train::SicrModel<Real>& model,
                     const train::TrainConfig& config, std::size_t epoch);

template <typename Real>
struct LoadedCheckpoint {
  train::TrainConfig config;
  std::size_t epoch = 0;
  std::unique_ptr<train::SicrModel<Real>> model;
};

// Rebuilds the model from the stored config and overwrites every value.
// Throws IoError on missing files and ConfigError when names, shapes or the
// payload length disagree with the rebuilt model.
template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::string& manifest_path);

std::string payload_path(const std::string& manifest_path);

}  // namespace sicr::io
