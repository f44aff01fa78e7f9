#include <doctest.h>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "rotcatt/fusion.hpp"

using namespace rotcatt;
using oracle::random_tensor;

namespace {

ModelConfig desk(int classes = 4) {
  ModelConfig cfg;
  cfg.num_classes = classes;
  return cfg;
}

}  // namespace

TEST_CASE("reconstruct restores level shapes") {
  const ShapePlan plan = derive_shapes(desk());
  Reconstruct<float> r3("r3", plan.level(3), 1);
  CHECK(r3.forward(Var<float>(Tensor<float>({8, 16, 256}))).shape() == plan.level(3).feature);
  for (const auto& lv : plan.levels) {
    Reconstruct<float> r("r", lv, 2);
    CHECK(r.forward(Var<float>(Tensor<float>(lv.tokens))).shape() == lv.feature);
  }
  LevelPlan l3;
  l3.channels = 64;
  l3.patch = 4;
  l3.grid_h = l3.grid_w = 4;
  l3.embed_dim = 128;
  Reconstruct<float> ref("ref", l3, 3);
  CHECK(ref.forward(Var<float>(Tensor<float>({3, 16, 128}))).shape() == Shape{3, 64, 16, 16});
  CHECK(square_grid_side(16) == 4);
  CHECK_THROWS_AS(square_grid_side(15), ShapeError);
}

TEST_CASE("constant tokens reconstruct to spatially constant channels") {
  Conv2d<double> proj("p", 3, 2, 1, 1, 0, 4);
  proj.bias().value_mut() = random_tensor({2}, 5);
  Tensor<double> f({2, 4, 3});
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t j = 0; j < 4; ++j) {
      for (int64_t c = 0; c < 3; ++c) f.at({b, j, c}) = 0.5 * double(c) - double(b);
    }
  }
  auto o = reconstruct(Var<double>(f), proj, 4).value();
  REQUIRE(o.shape() == Shape{2, 2, 8, 8});
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t c = 0; c < 2; ++c) {
      for (int64_t i = 0; i < 8; ++i) {
        for (int64_t j = 0; j < 8; ++j) CHECK(std::abs(o.at({b, c, i, j}) - o.at({b, c, 0, 0})) <= 1e-14);
      }
    }
  }
  CHECK_THROWS_AS(reconstruct(Var<double>(Tensor<double>({1, 5, 3})), proj, 2), ShapeError);
}

TEST_CASE("global average pooling") {
  auto c = gap(Var<double>(Tensor<double>({2, 3, 4, 5}, 1.25))).value();
  for (double v : c.span()) CHECK(v == 1.25);
  auto h = gap(Var<double>(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}))).value();
  CHECK(h[0] == 2.5);
  const auto x = random_tensor({3, 4, 6, 5}, 7);
  CHECK(oracle::max_abs_diff(gap(Var<double>(x)).value(), oracle::gap(x)) <= 1e-7);
}

TEST_CASE("channel gate") {
  const auto o = random_tensor({1, 2, 2, 2}, 8), d = random_tensor({1, 2, 2, 2}, 9);
  GateParams<double> zero{Var<double>(Tensor<double>({2, 2})), Var<double>(Tensor<double>({2, 2}))};
  Tensor<double> mask;
  auto half = channel_gate(Var<double>(o), Var<double>(d), zero, &mask).value();
  for (double m : mask.span()) CHECK(m == 0.5);
  for (int64_t i = 0; i < o.numel(); ++i) CHECK(half[i] == 0.5 * o[i]);

  const auto l1 = random_tensor({2, 2}, 10, -2, 2), l2 = random_tensor({2, 2}, 11, -2, 2);
  GateParams<double> p{Var<double>(l1), Var<double>(l2)};
  auto g = channel_gate(Var<double>(o), Var<double>(d), p, &mask).value();
  CHECK(oracle::max_abs_diff(g, oracle::channel_gate(o, d, l1, l2)) <= 1e-6);

  const auto big_o = random_tensor({3, 4, 5, 5}, 12, -5, 5), big_d = random_tensor({3, 4, 5, 5}, 13, -5, 5);
  ChannelGate<double> gate("g", 4, 14);
  auto gb = gate.forward(Var<double>(big_o), Var<double>(big_d), &mask).value();
  for (double m : mask.span()) {
    CHECK(m > 0.0);
    CHECK(m < 1.0);
  }
  for (int64_t i = 0; i < gb.numel(); ++i) CHECK(std::abs(gb[i]) <= std::abs(big_o[i]));
  CHECK_THROWS_AS(gate.forward(Var<double>(big_o), Var<double>(random_tensor({3, 4, 4, 4}, 1))), ShapeError);
}

TEST_CASE("channel gate gradient check") {
  Var<double> o(random_tensor({2, 3, 3, 3}, 20), true), d(random_tensor({2, 3, 3, 3}, 21), true);
  ChannelGate<double> gate("g", 3, 22);
  gate.params().transformer_weight.value_mut() = random_tensor({3, 3}, 23);
  gate.params().decoder_weight.value_mut() = random_tensor({3, 3}, 24);
  auto r = gradcheck::check({{"O", o},
                             {"D", d},
                             {"L1", gate.params().transformer_weight},
                             {"L2", gate.params().decoder_weight}},
                            [&] { return gate.forward(o, d); });
  INFO("worst " << r.worst << " rel " << r.max_rel_error);
  CHECK(r.max_rel_error <= 1e-4);
}

namespace {

std::vector<Var<float>> gated_inputs(const ShapePlan& plan) {
  std::vector<Var<float>> out;
  for (const auto& lv : plan.levels) out.emplace_back(random_tensor(lv.feature, 30 + uint64_t(lv.level)).cast<float>());
  return out;
}

}  // namespace

TEST_CASE("decoder produces full-resolution logits") {
  for (int k : {4, 1}) {
    const ModelConfig cfg = desk(k);
    const ShapePlan plan = derive_shapes(cfg);
    Decoder<float> dec(cfg, 3);
    auto state = dec.decode(Var<float>(random_tensor(plan.bottleneck, 40).cast<float>()), gated_inputs(plan), true);
    CHECK(state.logits.shape() == Shape{8, k, 64, 64});
    CHECK(state.features.size() == 3);
    CHECK(state.masks.size() == 3);
    for (const auto& lv : plan.levels) {
      CHECK(state.features[size_t(lv.level - 1)].shape()[2] == lv.height);
      CHECK(state.features[size_t(lv.level - 1)].shape()[3] == lv.width);
    }
  }
}

TEST_CASE("decoder with zeroed gates keeps finite logits") {
  const ModelConfig cfg = desk();
  const ShapePlan plan = derive_shapes(cfg);
  Decoder<float> dec(cfg, 3);
  for (int i = 1; i < cfg.depth; ++i) {
    dec.gate(i).params().transformer_weight.value_mut().fill(0.0f);
    dec.gate(i).params().decoder_weight.value_mut().fill(0.0f);
  }
  auto state = dec.decode(Var<float>(random_tensor(plan.bottleneck, 41).cast<float>()), gated_inputs(plan), false);
  for (const auto& m : state.masks) {
    for (float v : m.span()) CHECK(v == 0.5f);
  }
  for (float v : state.logits.value().span()) REQUIRE(std::isfinite(v));
}
