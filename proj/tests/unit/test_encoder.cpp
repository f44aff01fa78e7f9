#include <doctest.h>

#include "../support/oracles.hpp"
#include "rotcatt/encoder.hpp"

using namespace rotcatt;
using oracle::random_tensor;

namespace {

ModelConfig tiny(int depth, int hw, int c, int b) {
  ModelConfig cfg;
  cfg.depth = depth;
  cfg.input_height = cfg.input_width = hw;
  cfg.base_channels = c;
  cfg.window = b;
  cfg.num_heads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("conv block keeps spatial size and maps channels") {
  ConvBlock<float> a("a", 1, 16, 1);
  CHECK(a.forward(Var<float>(Tensor<float>({3, 1, 64, 64})), true).shape() == Shape{3, 16, 64, 64});
  ConvBlock<float> b("b", 48, 16, 1);
  CHECK(b.forward(Var<float>(Tensor<float>({3, 48, 64, 64})), true).shape() == Shape{3, 16, 64, 64});
  CHECK_THROWS_AS(b.forward(Var<float>(Tensor<float>({3, 16, 64, 64})), true), ShapeError);
}

TEST_CASE("conv block on zero input is constant across the batch") {
  ConvBlock<double> block("z", 2, 4, 7);
  for (bool training : {true, false}) {
    Var<double> y = block.forward(Var<double>(Tensor<double>({3, 2, 8, 8})), training);
    const auto& v = y.value();
    const int64_t per = v.numel() / 3;
    for (int64_t b = 1; b < 3; ++b) {
      for (int64_t i = 0; i < per; ++i) REQUIRE(v[b * per + i] == v[i]);
    }
  }
}

TEST_CASE("desk encoder node shapes") {
  Encoder<float> enc(tiny(4, 64, 16, 3), 0);
  auto grid = enc.encode(Var<float>(Tensor<float>({3, 1, 64, 64})), true);
  CHECK(grid.output(1).shape() == Shape{3, 16, 64, 64});
  CHECK(grid.output(2).shape() == Shape{3, 32, 32, 32});
  CHECK(grid.output(3).shape() == Shape{3, 64, 16, 16});
  CHECK(grid.bottleneck().shape() == Shape{3, 128, 8, 8});
  CHECK(enc.block_in_channels(1, 2) == 3 * 16);
  CHECK_THROWS_AS(enc.encode(Var<float>(Tensor<float>({3, 1, 32, 64})), true), ShapeError);
}

TEST_CASE("grid node count per depth") {
  for (int d : {2, 3, 4}) {
    const int hw = 1 << d;
    Encoder<float> enc(tiny(d, hw, 2, 3), 0);
    auto grid = enc.encode(Var<float>(Tensor<float>({3, 1, hw, hw})), false);
    CHECK(grid.node_count() == size_t(d * (d + 1) / 2 - (d - 1)));
    if (d == 2) {
      CHECK(grid.nodes.count({1, 1}) == 1);
      CHECK(grid.nodes.count({2, 1}) == 1);
    }
  }
}

TEST_CASE("downsampling and skip upsampling are exact in size") {
  auto x = Var<double>(random_tensor({1, 2, 12, 10}, 3));
  auto down = ops::max_pool2x2(x);
  CHECK(down.shape() == Shape{1, 2, 6, 5});
  CHECK(grid_upsample(down).shape() == x.shape());
}

TEST_CASE("every encoder parameter receives a finite gradient") {
  ModelConfig cfg = tiny(4, 16, 2, 3);
  Encoder<double> enc(cfg, 5);
  auto grid = enc.encode(Var<double>(random_tensor({3, 1, 16, 16}, 8)), true);
  std::vector<Var<double>> parts;
  for (int i = 1; i < cfg.depth; ++i) parts.push_back(ops::sum(grid.output(i)));
  parts.push_back(ops::sum(grid.bottleneck()));
  Var<double> loss = ops::sum(ops::stack(parts));
  backward(loss);
  ParamList<double> params;
  enc.collect(params);
  int checked = 0;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    INFO(p.name);
    REQUIRE(p.var.has_grad());
    for (double g : p.var.grad().span()) REQUIRE(std::isfinite(g));
    ++checked;
  }
  CHECK(checked > 0);
}
