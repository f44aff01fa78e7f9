#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rotcatt/tensor.hpp"

namespace rotcatt {

// Architecture and objective hyperparameters. Field names double as the keys
// of the `key = value` config file format.
struct ModelConfig {
  int depth = 4;              // D, number of resolution levels
  int base_channels = 16;     // C, channels at level 1
  int input_height = 64;      // H
  int input_width = 64;       // W
  int window = 8;             // B, consecutive slices per forward pass
  int num_classes = 4;        // includes background class 0
  int transformer_layers = 4; // N
  std::vector<int> embed_dims;  // d_f per level; empty selects C * 2^(i+1)
  int mlp_ratio = 4;
  int num_heads = 4;
  double alpha = 0.6;
  double epsilon = 1e-5;
  bool rotatory_enabled = true;
  bool tie_rotatory = false;   // share one SA parameter set across the four SA calls
  double embedding_dropout = 0.0;

  // d_f for level i in 1..D-1, honouring the default rule.
  int embed_dim(int level) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Reference model dimensions (C=64, H=W=256) used for parameter-count reports.
ModelConfig full_scale_config();

struct LevelPlan {
  int level = 0;             // 1-based
  int channels = 0;          // C * 2^(i-1)
  int height = 0, width = 0; // H / 2^(i-1), W / 2^(i-1)
  int patch = 0;             // p_i = 2^(D-i+1)
  int grid_h = 0, grid_w = 0;
  int64_t seq_len = 0;       // n_i
  int embed_dim = 0;         // d_f^i
  Shape feature;             // (B, C_i, H_i, W_i)
  Shape tokens;              // (B, n, d_f^i)

  friend bool operator==(const LevelPlan&, const LevelPlan&) = default;
};

// Every tensor shape the architecture produces, derived before any compute.
struct ShapePlan {
  int window = 0;
  std::vector<LevelPlan> levels;  // levels 1..D-1
  Shape bottleneck;               // (B, C * 2^(D-1), H / 2^(D-1), W / 2^(D-1))
  int64_t sequence_length = 0;
  Shape logits;                   // (B, num_classes, H, W)

  const LevelPlan& level(int i) const { return levels.at(static_cast<size_t>(i - 1)); }
  // Shape of grid node X_i^j (bottleneck for i == D).
  Shape node_shape(int i) const;

  friend bool operator==(const ShapePlan&, const ShapePlan&) = default;
};

// Throws ConfigError naming the first violated constraint.
void validate_config(const ModelConfig& config);
ShapePlan derive_shapes(const ModelConfig& config);

struct ShapeMismatch {
  Shape expected;
  Shape actual;
  std::optional<size_t> axis;  // first differing axis, empty on rank mismatch
  std::string message() const;
};

// std::nullopt when `actual` equals `expected` exactly.
std::optional<ShapeMismatch> validate_tensor(const Shape& actual, const Shape& expected);
// Throws ShapeError with `context` prepended on mismatch.
void expect_shape(const Shape& actual, const Shape& expected, const std::string& context);

// `key = value` lines, `#` starts a comment. Model keys are consumed by
// apply_model_keys; whatever remains belongs to the caller (run settings).
struct ConfigFile {
  std::map<std::string, std::string> values;
};
ConfigFile parse_config_text(const std::string& text);
ConfigFile read_config_file(const std::string& path);
// Applies recognised model keys and erases them from `file`.
void apply_model_keys(ConfigFile& file, ModelConfig& config);
std::string format_model_config(const ModelConfig& config);

// Value parsers shared by every config key; ConfigError names the key.
int parse_int(const std::string& key, const std::string& value);
int64_t parse_int64(const std::string& key, const std::string& value);
uint64_t parse_uint64(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace rotcatt
