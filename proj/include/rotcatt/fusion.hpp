#pragma once

#include <vector>

#include "rotcatt/config.hpp"
#include "rotcatt/encoder.hpp"

namespace rotcatt {

// sqrt(n) for a perfect square n; ShapeError otherwise.
int64_t square_grid_side(int64_t seq_len);

// F (B, n, d) -> O (B, C, grid_h * p, grid_w * p): tokens back onto the patch
// grid, 1x1 projection d -> C, bilinear resize by p.
template <typename T>
class Reconstruct {
 public:
  Reconstruct() = default;
  Reconstruct(const std::string& name, const LevelPlan& level, uint64_t seed);

  Var<T> forward(const Var<T>& fused) const;
  void collect(ParamList<T>& out) const { proj_.collect(out); }
  Conv2d<T>& projection() { return proj_; }

 private:
  int64_t grid_h_ = 0, grid_w_ = 0;
  int patch_ = 1;
  Conv2d<T> proj_;
};

// Square-grid variant: the grid side is sqrt(n).
template <typename T>
Var<T> reconstruct(const Var<T>& fused, const Conv2d<T>& projection, int patch);

// Per-channel spatial mean, (B, C, H, W) -> (B, C).
template <typename T>
Var<T> gap(const Var<T>& x) {
  return ops::global_avg_pool(x);
}

template <typename T>
struct GateParams {
  Var<T> transformer_weight;  // L_1 (C, C)
  Var<T> decoder_weight;      // L_2 (C, C)
};

// O_hat = sigmoid(L_1 gap(O) + L_2 gap(D)) * O. `mask` receives the (B, C)
// sigmoid output when non-null.
template <typename T>
Var<T> channel_gate(const Var<T>& transformer_map, const Var<T>& decoder_map, const GateParams<T>& params,
                    Tensor<T>* mask = nullptr);

template <typename T>
class ChannelGate {
 public:
  ChannelGate() = default;
  ChannelGate(const std::string& name, int channels, uint64_t seed);

  Var<T> forward(const Var<T>& transformer_map, const Var<T>& decoder_map, Tensor<T>* mask = nullptr) const {
    return channel_gate(transformer_map, decoder_map, params_, mask);
  }
  void collect(ParamList<T>& out) const;
  GateParams<T>& params() { return params_; }

 private:
  std::string name_;
  GateParams<T> params_;
};

template <typename T>
struct DecoderState {
  std::vector<Var<T>> features;  // D_i for i = 1..D-1 (index i - 1), after upsampling
  std::vector<Tensor<T>> masks;  // gate output per level, (B, C_i)
  Var<T> logits;
};

// Upsampling path from the bottleneck to full resolution.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& config, uint64_t seed);

  // `reconstructed[i - 1]` is O_i for i = 1..D-1.
  DecoderState<T> decode(const Var<T>& bottleneck, const std::vector<Var<T>>& reconstructed, bool training);
  void collect(ParamList<T>& out) const;

  ChannelGate<T>& gate(int level) { return gates_.at(static_cast<size_t>(level - 1)); }

 private:
  int depth_ = 0;
  std::vector<ConvTranspose2d<T>> ups_;  // index i - 1: C_{i+1} -> C_i
  std::vector<ChannelGate<T>> gates_;
  std::vector<ConvBlock<T>> blocks_;
  Conv2d<T> head_;
};

}  // namespace rotcatt
