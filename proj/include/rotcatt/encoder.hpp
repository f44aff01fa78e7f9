#pragma once

#include <map>
#include <utility>

#include "rotcatt/config.hpp"
#include "rotcatt/nn.hpp"

namespace rotcatt {

// Two (3x3 conv -> batch norm -> ReLU) stages; keeps the spatial size.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_channels, int out_channels, uint64_t seed);

  Var<T> forward(const Var<T>& x, bool training);
  void collect(ParamList<T>& out) const;

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }

 private:
  int in_channels_ = 0, out_channels_ = 0;
  Conv2d<T> conv1_, conv2_;
  BatchNorm2d<T> norm1_, norm2_;
};

// Nested encoder nodes X_i^j. Row i (1-based) holds D - i nodes for i < D;
// the bottleneck row D holds the single node X_D^1.
template <typename T>
struct FeatureGrid {
  int depth = 0;
  std::map<std::pair<int, int>, Var<T>> nodes;

  const Var<T>& node(int i, int j) const { return nodes.at({i, j}); }
  // X_i, the last node of row i, for i in 1..D-1.
  const Var<T>& output(int i) const { return node(i, depth - i); }
  const Var<T>& bottleneck() const { return node(depth, 1); }
  size_t node_count() const { return nodes.size(); }
};

// Dense-downsampling encoder with UNet++ style nested skips.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& config, uint64_t seed);

  FeatureGrid<T> encode(const Var<T>& slices, bool training);
  void collect(ParamList<T>& out) const;

  // Input channel count of block X_i^j.
  int block_in_channels(int i, int j) const { return blocks_.at({i, j}).in_channels(); }

 private:
  ShapePlan plan_;
  int depth_ = 0;
  std::map<std::pair<int, int>, ConvBlock<T>> blocks_;
};

// Bilinear x2 resize used inside the skip grid (channel count unchanged).
template <typename T>
Var<T> grid_upsample(const Var<T>& x);

}  // namespace rotcatt
