#include <doctest.h>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "rotcatt/ops.hpp"

using namespace rotcatt;
using oracle::random_tensor;

TEST_CASE("tensor bounds and reshape") {
  Tensor<double> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
  CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  t.reshape({3, 2});
  CHECK(t.shape() == Shape{3, 2});
}

TEST_CASE("conv2d matches direct convolution") {
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, std::tuple{2, 0, 2}, std::tuple{1, 0, 1}, std::tuple{4, 0, 4}}) {
    const auto x = random_tensor({2, 3, 8, 8}, 1);
    const auto w = random_tensor({5, 3, k, k}, 2);
    const auto b = random_tensor({5}, 3);
    Var<double> y = ops::conv2d(Var<double>(x), Var<double>(w), Var<double>(b), stride, pad);
    CHECK(oracle::max_abs_diff(y.value(), oracle::conv2d(x, w, b, stride, pad)) <= 1e-12);
  }
}

TEST_CASE("bilinear upsampling matches half-pixel oracle") {
  const auto x = random_tensor({1, 2, 3, 5}, 4);
  for (int f : {2, 4}) {
    Var<double> y = ops::upsample_bilinear(Var<double>(x), f);
    CHECK(y.shape() == Shape{1, 2, 3 * f, 5 * f});
    CHECK(oracle::max_abs_diff(y.value(), oracle::upsample_bilinear(x, f)) <= 1e-12);
  }
}

TEST_CASE("max pool halves exactly and upsampling restores size") {
  const auto x = random_tensor({2, 3, 8, 6}, 5);
  Var<double> p = ops::max_pool2x2(Var<double>(x));
  CHECK(p.shape() == Shape{2, 3, 4, 3});
  CHECK(p.value().at({1, 2, 3, 2}) ==
        std::max({x.at({1, 2, 6, 4}), x.at({1, 2, 6, 5}), x.at({1, 2, 7, 4}), x.at({1, 2, 7, 5})}));
  CHECK(ops::upsample_bilinear(p, 2).shape() == x.shape());
}

TEST_CASE("softmax rows sum to one and reject non-finite input") {
  const auto x = random_tensor({4, 7}, 6, -20, 20);
  Var<double> s = ops::softmax_last(Var<double>(x));
  for (int64_t r = 0; r < 4; ++r) {
    double total = 0;
    for (int64_t c = 0; c < 7; ++c) total += s.value().at({r, c});
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor<double> bad({2}, std::vector<double>{1.0, std::nan("")});
  CHECK_THROWS_AS(ops::softmax_last(Var<double>(bad)), NumericError);
}

TEST_CASE("op gradients match central differences") {
  auto x = Var<double>::parameter(random_tensor({2, 3, 4, 4}, 7));
  auto w = Var<double>::parameter(random_tensor({2, 3, 3, 3}, 8));
  auto b = Var<double>::parameter(random_tensor({2}, 9));
  CHECK(gradcheck::check({{"x", x}, {"w", w}, {"b", b}}, [&] { return ops::conv2d(x, w, b, 1, 1); }).max_rel_error <= 1e-6);

  auto up = Var<double>::parameter(random_tensor({1, 2, 3, 3}, 10));
  CHECK(gradcheck::check({{"x", up}}, [&] { return ops::upsample_bilinear(up, 2); }).max_rel_error <= 1e-6);
  CHECK(gradcheck::check({{"x", up}}, [&] { return ops::max_pool2x2(ops::upsample_bilinear(up, 2)); }).max_rel_error <=
        1e-6);

  auto ct_x = Var<double>::parameter(random_tensor({2, 3, 2, 2}, 11));
  auto ct_w = Var<double>::parameter(random_tensor({3, 2, 2, 2}, 12));
  auto ct_b = Var<double>::parameter(random_tensor({2}, 13));
  CHECK(gradcheck::check({{"x", ct_x}, {"w", ct_w}, {"b", ct_b}},
                         [&] { return ops::conv_transpose2d(ct_x, ct_w, ct_b); })
            .max_rel_error <= 1e-6);

  auto bn_x = Var<double>::parameter(random_tensor({3, 2, 2, 2}, 14));
  auto g = Var<double>::parameter(random_tensor({2}, 15, 0.5, 1.5));
  auto beta = Var<double>::parameter(random_tensor({2}, 16));
  Tensor<double> rm({2}), rv({2}, 1.0);
  CHECK(gradcheck::check({{"x", bn_x}, {"gamma", g}, {"beta", beta}},
                         [&] { return ops::batch_norm2d(bn_x, g, beta, rm, rv, true, 0.1, 1e-5); })
            .max_rel_error <= 1e-4);

  auto ln_x = Var<double>::parameter(random_tensor({3, 6}, 17));
  auto ln_g = Var<double>::parameter(random_tensor({6}, 18));
  auto ln_b = Var<double>::parameter(random_tensor({6}, 19));
  CHECK(gradcheck::check({{"x", ln_x}, {"g", ln_g}, {"b", ln_b}}, [&] { return ops::layer_norm(ln_x, ln_g, ln_b, 1e-6); })
            .max_rel_error <= 1e-5);

  auto sm = Var<double>::parameter(random_tensor({2, 3, 2, 2}, 20));
  CHECK(gradcheck::check({{"x", sm}}, [&] { return ops::softmax_channels(sm); }).max_rel_error <= 1e-6);
  CHECK(gradcheck::check({{"x", sm}}, [&] { return ops::gelu(sm); }).max_rel_error <= 1e-6);
  CHECK(gradcheck::check({{"x", sm}}, [&] { return ops::global_avg_pool(sm); }).max_rel_error <= 1e-6);
  CHECK(gradcheck::check({{"x", sm}}, [&] { return ops::tokens_to_map(ops::map_to_tokens(sm), 2, 2); }).max_rel_error <=
        1e-6);
}

TEST_CASE("batch norm uses running statistics in eval mode") {
  const auto x = random_tensor({4, 2, 3, 3}, 21);
  Tensor<double> rm({2}), rv({2}, 1.0);
  Var<double> g(Tensor<double>({2}, 1.0)), b(Tensor<double>({2}));
  ops::batch_norm2d(Var<double>(x), g, b, rm, rv, true, 0.1, 1e-5);
  CHECK(rm[0] != 0.0);
  const Tensor<double> rm_after = rm;
  Var<double> y = ops::batch_norm2d(Var<double>(x), g, b, rm, rv, false, 0.1, 1e-5);
  CHECK(rm == rm_after);
  CHECK(y.value().at({0, 0, 0, 0}) ==
        doctest::Approx((x.at({0, 0, 0, 0}) - rm[0]) / std::sqrt(rv[0] + 1e-5)).epsilon(1e-12));
}

TEST_CASE("backward frees the graph and handles shared subexpressions") {
  auto a = Var<double>::parameter(Tensor<double>({1}, 3.0));
  Var<double> b = ops::mul(a, a);
  Var<double> c = ops::add(b, b);
  backward(ops::sum(c));
  CHECK(a.grad()[0] == doctest::Approx(12.0));
}
