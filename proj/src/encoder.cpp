#include "rotcatt/encoder.hpp"

namespace rotcatt {

template <typename T>
ConvBlock<T>::ConvBlock(const std::string& name, int in_channels, int out_channels, uint64_t seed)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      conv1_(name + ".conv1", in_channels, out_channels, 3, 1, 1, seed),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1, seed),
      norm1_(name + ".bn1", out_channels),
      norm2_(name + ".bn2", out_channels) {}

template <typename T>
Var<T> ConvBlock<T>::forward(const Var<T>& x, bool training) {
  if (x.value().rank() != 4 || x.shape()[1] != in_channels_) {
    throw ShapeError("conv_block: expected (B," + std::to_string(in_channels_) + ",H,W), got " +
                     shape_string(x.shape()));
  }
  Var<T> y = ops::relu(norm1_.forward(conv1_.forward(x), training));
  return ops::relu(norm2_.forward(conv2_.forward(y), training));
}

template <typename T>
void ConvBlock<T>::collect(ParamList<T>& out) const {
  conv1_.collect(out);
  norm1_.collect(out);
  conv2_.collect(out);
  norm2_.collect(out);
}

template <typename T>
Var<T> grid_upsample(const Var<T>& x) {
  return ops::upsample_bilinear(x, 2);
}

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, uint64_t seed)
    : plan_(derive_shapes(config)), depth_(config.depth) {
  auto channels = [&](int i) { return config.base_channels << (i - 1); };
  auto name = [](int i, int j) { return "encoder.x" + std::to_string(i) + "_" + std::to_string(j); };
  blocks_.emplace(std::pair{1, 1}, ConvBlock<T>(name(1, 1), 1, channels(1), seed));
  for (int i = 2; i <= depth_; ++i) {
    blocks_.emplace(std::pair{i, 1}, ConvBlock<T>(name(i, 1), channels(i - 1), channels(i), seed));
  }
  // X_i^j sees its j-1 row predecessors (C_i each) plus the upsampled
  // X_{i+1}^{j-1} (2 C_i), i.e. (j + 1) C_i input channels.
  for (int j = 2; j < depth_; ++j) {
    for (int i = 1; i <= depth_ - j; ++i) {
      blocks_.emplace(std::pair{i, j}, ConvBlock<T>(name(i, j), (j + 1) * channels(i), channels(i), seed));
    }
  }
}

template <typename T>
FeatureGrid<T> Encoder<T>::encode(const Var<T>& slices, bool training) {
  expect_shape(slices.shape(), {plan_.window, 1, plan_.level(1).height, plan_.level(1).width},
               "encoder input");
  FeatureGrid<T> grid;
  grid.depth = depth_;
  auto node_name = [](int i, int j) { return "X" + std::to_string(i) + "^" + std::to_string(j); };
  auto put = [&](int i, int j, Var<T> v) {
    expect_shape(v.shape(), plan_.node_shape(i), "encoder node " + node_name(i, j));
    grid.nodes.emplace(std::pair{i, j}, std::move(v));
  };
  put(1, 1, blocks_.at({1, 1}).forward(slices, training));
  for (int i = 2; i <= depth_; ++i) {
    put(i, 1, blocks_.at({i, 1}).forward(ops::max_pool2x2(grid.node(i - 1, 1)), training));
  }
  for (int j = 2; j < depth_; ++j) {
    for (int i = 1; i <= depth_ - j; ++i) {
      std::vector<Var<T>> inputs;
      for (int k = 1; k < j; ++k) inputs.push_back(grid.node(i, k));
      inputs.push_back(grid_upsample(grid.node(i + 1, j - 1)));
      put(i, j, blocks_.at({i, j}).forward(ops::concat(inputs, 1), training));
    }
  }
  return grid;
}

template <typename T>
void Encoder<T>::collect(ParamList<T>& out) const {
  for (const auto& [key, block] : blocks_) block.collect(out);
}

template class ConvBlock<float>;
template class ConvBlock<double>;
template class Encoder<float>;
template class Encoder<double>;
template Var<float> grid_upsample(const Var<float>&);
template Var<double> grid_upsample(const Var<double>&);

}  // namespace rotcatt
