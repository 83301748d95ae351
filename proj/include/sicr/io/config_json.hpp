#pragma once

#include <string>

#include <json.hpp>

#include "sicr/model/network.hpp"
#include "sicr/signal/cohort.hpp"
#include "sicr/train/trainer.hpp"

// JSON form of the configuration structs. Readers merge a (possibly partial)
// document over the struct's current values and reject unknown keys and
// mistyped values with ConfigError naming the offending path.
namespace sicr::io {

using Json = nlohmann::ordered_json;

Json to_json(const model::EncoderConfig& c);
Json to_json(const train::EstimatorConfig& c);
Json to_json(const train::LossWeights& w);
Json to_json(const train::TrainConfig& c);
Json to_json(const signal::CohortSpec& s);

void merge(const Json& j, model::EncoderConfig& c, const std::string& path = "encoder");
void merge(const Json& j, train::EstimatorConfig& c, const std::string& path = "estimators");
void merge(const Json& j, train::LossWeights& w, const std::string& path = "weights");
void merge(const Json& j, train::TrainConfig& c, const std::string& path = "train");
void merge(const Json& j, signal::CohortSpec& s, const std::string& path = "cohort");

Json parse_json(const std::string& text, const std::string& what);
Json read_json_file(const std::string& path);

}  // namespace sicr::io
