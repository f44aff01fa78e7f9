#include <doctest.h>

#include <numeric>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "rotcatt/transformer.hpp"

using namespace rotcatt;
using oracle::random_tensor;

namespace {

Var<double> attend(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v, Tensor<double>* w = nullptr) {
  return ops::scaled_attention(Var<double>(q), Var<double>(k), Var<double>(v), w);
}

}  // namespace

TEST_CASE("single token attention returns V") {
  const auto q = random_tensor({2, 1, 1, 4}, 1), k = random_tensor({2, 1, 1, 4}, 2), v = random_tensor({2, 1, 1, 4}, 3);
  Tensor<double> w;
  auto y = attend(q, k, v, &w);
  CHECK(oracle::max_abs_diff(y.value(), v) == 0.0);
  for (double a : w.span()) CHECK(a == 1.0);
}

TEST_CASE("orthogonal query gives uniform weights and the mean of V") {
  Tensor<double> q({1, 1, 3, 2}), k({1, 1, 3, 2});
  for (int64_t i = 0; i < 3; ++i) {
    q.at({0, 0, i, 0}) = 1.0;
    k.at({0, 0, i, 1}) = double(i + 1);
  }
  const auto v = random_tensor({1, 1, 3, 2}, 4);
  Tensor<double> w;
  auto y = attend(q, k, v, &w);
  for (double a : w.span()) CHECK(a == doctest::Approx(1.0 / 3).epsilon(1e-12));
  for (int64_t c = 0; c < 2; ++c) {
    const double mean = (v.at({0, 0, 0, c}) + v.at({0, 0, 1, c}) + v.at({0, 0, 2, c})) / 3;
    for (int64_t i = 0; i < 3; ++i) CHECK(std::abs(y.value().at({0, 0, i, c}) - mean) <= 1e-12);
  }
}

TEST_CASE("scaled attention matches scalar loops") {
  const auto q = random_tensor({1, 1, 3, 2}, 5), k = random_tensor({1, 1, 3, 2}, 6), v = random_tensor({1, 1, 3, 2}, 7);
  CHECK(oracle::max_abs_diff(attend(q, k, v).value(), oracle::scaled_attention(q, k, v)) <= 1e-6);
  const auto q2 = random_tensor({2, 3, 5, 4}, 8), k2 = random_tensor({2, 3, 5, 4}, 9), v2 = random_tensor({2, 3, 5, 4}, 10);
  Tensor<double> w, wo;
  auto y = attend(q2, k2, v2, &w);
  CHECK(oracle::max_abs_diff(y.value(), oracle::scaled_attention(q2, k2, v2, &wo)) <= 1e-12);
  CHECK(oracle::max_abs_diff(w, wo) <= 1e-12);
}

TEST_CASE("attention is permutation equivariant") {
  const int64_t n = 6;
  const auto q = random_tensor({1, 2, n, 3}, 11), k = random_tensor({1, 2, n, 3}, 12), v = random_tensor({1, 2, n, 3}, 13);
  const std::vector<int64_t> perm = {3, 0, 5, 1, 4, 2};
  auto permute = [&](const Tensor<double>& t) {
    Tensor<double> out(t.shape());
    for (int64_t h = 0; h < 2; ++h) {
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t c = 0; c < 3; ++c) out.at({0, h, i, c}) = t.at({0, h, perm[size_t(i)], c});
      }
    }
    return out;
  };
  auto y = attend(q, k, v).value();
  auto yp = attend(permute(q), permute(k), permute(v)).value();
  CHECK(oracle::max_abs_diff(yp, permute(y)) <= 1e-12);
}

TEST_CASE("zeroed output projections make the layer a pure residual") {
  TransformerLayer<double> layer("t", 16, 4, 4, 3);
  layer.attention().output().weight().value_mut().fill(0.0);
  layer.mlp_out().weight().value_mut().fill(0.0);
  const auto z = random_tensor({3, 5, 16}, 14);
  auto y = layer.forward(Var<double>(z));
  CHECK(oracle::max_abs_diff(y.value(), z) == 0.0);
}

TEST_CASE("layer preserves shape and rows of attention sum to one") {
  TransformerLayer<float> layer("t", 128, 4, 4, 3);
  Tensor<float> w;
  auto y = layer.forward(Var<float>(random_tensor({3, 16, 128}, 15).cast<float>()), &w);
  CHECK(y.shape() == Shape{3, 16, 128});
  REQUIRE(w.shape() == Shape{3, 4, 16, 16});
  for (int64_t r = 0; r < w.numel() / 16; ++r) {
    double s = 0;
    for (int64_t j = 0; j < 16; ++j) s += w[r * 16 + j];
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("layer output is bit-identical across runs") {
  const auto z = random_tensor({3, 16, 32}, 16).cast<float>();
  TransformerLayer<float> a("t", 32, 4, 4, 9), b("t", 32, 4, 4, 9);
  auto ya = a.forward(Var<float>(z)).value();
  auto yb = b.forward(Var<float>(z)).value();
  auto ya2 = a.forward(Var<float>(z)).value();
  REQUIRE(ya.numel() == yb.numel());
  CHECK(std::equal(ya.span().begin(), ya.span().end(), yb.span().begin()));
  CHECK(std::equal(ya.span().begin(), ya.span().end(), ya2.span().begin()));
}

TEST_CASE("encoder with zero layers is the identity and two layers compose") {
  const auto z = random_tensor({2, 4, 8}, 17);
  TransformerEncoder<double> none("n", 0, 8, 2, 4, 1);
  CHECK(none.size() == 0);
  CHECK(oracle::max_abs_diff(none.forward(Var<double>(z)).value(), z) == 0.0);

  TransformerEncoder<double> two("s", 2, 8, 2, 4, 1);
  std::vector<Tensor<double>> weights;
  auto y = two.forward(Var<double>(z), &weights);
  auto manual = two.layer(1).forward(two.layer(0).forward(Var<double>(z)));
  CHECK(oracle::max_abs_diff(y.value(), manual.value()) == 0.0);
  CHECK(weights.size() == 2);
}

TEST_CASE("transformer layer gradient check") {
  TransformerLayer<double> layer("g", 8, 1, 4, 21);
  // Non-trivial norms and biases so every parameter path is exercised.
  ParamList<double> params;
  layer.collect(params);
  uint64_t s = 100;
  for (auto& p : params) {
    Tensor<double>& v = p.var.value_mut();
    const auto noise = random_tensor(v.shape(), s++, -0.3, 0.3);
    for (int64_t i = 0; i < v.numel(); ++i) v[i] += noise[i];
  }
  Var<double> z(random_tensor({1, 4, 8}, 22), true);
  std::vector<std::pair<std::string, Var<double>>> inputs{{"z", z}};
  for (const auto& p : params) inputs.emplace_back(p.name, p.var);
  auto r = gradcheck::check(inputs, [&] { return layer.forward(z); });
  INFO("worst " << r.worst << " rel " << r.max_rel_error);
  CHECK(r.max_rel_error <= 1e-4);
  CHECK(r.checked > 500);
}
