#include "rotcatt/fusion.hpp"

#include <cmath>

namespace rotcatt {

int64_t square_grid_side(int64_t seq_len) {
  auto side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(seq_len))));
  if (seq_len <= 0 || side * side != seq_len) {
    throw ShapeError("reconstruct: token count " + std::to_string(seq_len) + " is not a perfect square");
  }
  return side;
}

template <typename T>
Reconstruct<T>::Reconstruct(const std::string& name, const LevelPlan& level, uint64_t seed)
    : grid_h_(level.grid_h), grid_w_(level.grid_w), patch_(level.patch),
      proj_(name + ".proj", level.embed_dim, level.channels, 1, 1, 0, seed) {}

template <typename T>
Var<T> Reconstruct<T>::forward(const Var<T>& fused) const {
  if (fused.value().rank() != 3 || fused.shape()[1] != grid_h_ * grid_w_) {
    throw ShapeError("reconstruct: expected (B, " + std::to_string(grid_h_ * grid_w_) + ", d), got " +
                     shape_string(fused.shape()));
  }
  Var<T> grid = ops::tokens_to_map(fused, grid_h_, grid_w_);
  return ops::upsample_bilinear(proj_.forward(grid), patch_);
}

template <typename T>
Var<T> reconstruct(const Var<T>& fused, const Conv2d<T>& projection, int patch) {
  if (fused.value().rank() != 3) {
    throw ShapeError("reconstruct: expected (B, n, d), got " + shape_string(fused.shape()));
  }
  const int64_t side = square_grid_side(fused.shape()[1]);
  return ops::upsample_bilinear(projection.forward(ops::tokens_to_map(fused, side, side)), patch);
}

template <typename T>
Var<T> channel_gate(const Var<T>& transformer_map, const Var<T>& decoder_map, const GateParams<T>& params,
                    Tensor<T>* mask) {
  if (transformer_map.value().rank() != 4 || transformer_map.shape() != decoder_map.shape()) {
    throw ShapeError("channel_gate: O " + shape_string(transformer_map.shape()) + " vs D " +
                     shape_string(decoder_map.shape()));
  }
  Var<T> none;
  Var<T> m = ops::add(ops::linear(gap(transformer_map), params.transformer_weight, none),
                      ops::linear(gap(decoder_map), params.decoder_weight, none));
  Var<T> s = ops::sigmoid(m);
  if (mask) *mask = s.value();
  return ops::scale_channels(transformer_map, s);
}

template <typename T>
ChannelGate<T>::ChannelGate(const std::string& name, int channels, uint64_t seed) : name_(name) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  params_.transformer_weight =
      Var<T>::parameter(uniform_tensor<T>({channels, channels}, bound, param_seed(seed, name + ".l1")));
  params_.decoder_weight =
      Var<T>::parameter(uniform_tensor<T>({channels, channels}, bound, param_seed(seed, name + ".l2")));
}

template <typename T>
void ChannelGate<T>::collect(ParamList<T>& out) const {
  out.push_back({name_ + ".l1", params_.transformer_weight, true});
  out.push_back({name_ + ".l2", params_.decoder_weight, true});
}

template <typename T>
Decoder<T>::Decoder(const ModelConfig& config, uint64_t seed) : depth_(config.depth) {
  for (int i = 1; i < depth_; ++i) {
    const int c = config.base_channels << (i - 1);
    const std::string base = "decoder.level" + std::to_string(i);
    ups_.emplace_back(base + ".up", 2 * c, c, 2, seed);
    gates_.emplace_back(base + ".gate", c, seed);
    blocks_.emplace_back(base + ".block", 2 * c, c, seed);
  }
  head_ = Conv2d<T>("decoder.head", config.base_channels, config.num_classes, 1, 1, 0, seed);
}

template <typename T>
DecoderState<T> Decoder<T>::decode(const Var<T>& bottleneck, const std::vector<Var<T>>& reconstructed,
                                   bool training) {
  if (reconstructed.size() != static_cast<size_t>(depth_ - 1)) {
    throw ShapeError("decode: expected " + std::to_string(depth_ - 1) + " reconstructed maps, got " +
                     std::to_string(reconstructed.size()));
  }
  DecoderState<T> state;
  state.features.resize(reconstructed.size());
  state.masks.resize(reconstructed.size());
  Var<T> y = bottleneck;
  for (int i = depth_ - 1; i >= 1; --i) {
    const size_t k = static_cast<size_t>(i - 1);
    Var<T> up = ups_[k].forward(y);
    expect_shape(up.shape(), reconstructed[k].shape(), "decode level " + std::to_string(i));
    state.features[k] = up;
    Var<T> gated = gates_[k].forward(reconstructed[k], up, &state.masks[k]);
    y = blocks_[k].forward(ops::concat<T>({gated, up}, 1), training);
  }
  state.logits = head_.forward(y);
  return state;
}

template <typename T>
void Decoder<T>::collect(ParamList<T>& out) const {
  for (int i = depth_ - 1; i >= 1; --i) {
    const size_t k = static_cast<size_t>(i - 1);
    ups_[k].collect(out);
    gates_[k].collect(out);
    blocks_[k].collect(out);
  }
  head_.collect(out);
}

#define ROTCATT_INSTANTIATE_FUSION(T)                                                               \
  template class Reconstruct<T>;                                                                    \
  template Var<T> reconstruct(const Var<T>&, const Conv2d<T>&, int);                                \
  template Var<T> channel_gate(const Var<T>&, const Var<T>&, const GateParams<T>&, Tensor<T>*);     \
  template class ChannelGate<T>;                                                                    \
  template class Decoder<T>;

ROTCATT_INSTANTIATE_FUSION(float)
ROTCATT_INSTANTIATE_FUSION(double)

}  // namespace rotcatt
