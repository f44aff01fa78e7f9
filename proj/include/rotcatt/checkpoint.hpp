#pragma once

#include <string>

#include <json.hpp>

#include "rotcatt/model.hpp"
#include "rotcatt/optim.hpp"

namespace rotcatt {

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CheckpointHeader {
  int version = 0;
  std::string dtype;  // "f32" or "f64"
  ModelConfig model;
  nlohmann::json run;
  int64_t step = 0;
  int64_t adam_step = 0;
  std::string rng_state;
};

// Layout: "RCATCKPT", u32 version, u64 header length, JSON header, then the
// raw little-endian tensor payload in header order.
template <typename T>
void save_checkpoint(const std::string& path, RotCAttModel<T>& model, Adam<T>* adam, const nlohmann::json& run,
                     int64_t step);

CheckpointHeader read_checkpoint_header(const std::string& path);

// Restores parameters, buffers, optimizer moments and the dropout stream.
// The model must have been built from the header's configuration.
template <typename T>
CheckpointHeader load_checkpoint(const std::string& path, RotCAttModel<T>& model, Adam<T>* adam);

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace rotcatt
