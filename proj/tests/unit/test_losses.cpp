#include <doctest.h>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "rotcatt/losses.hpp"

using namespace rotcatt;
using oracle::random_tensor;

namespace {

LabelTensor random_labels(Shape shape, int k, uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabelTensor l(std::move(shape));
  for (auto& v : l.span()) v = uint8_t(rng() % uint64_t(k));
  return l;
}

Tensor<double> random_probs(Shape shape, uint64_t seed) {
  auto logits = Var<double>(random_tensor(std::move(shape), seed, -2, 2));
  return ops::softmax_channels(logits).value();
}

std::vector<double> flat(const Tensor<double>& t) { return {t.span().begin(), t.span().end()}; }

double scalar(const Var<double>& v) { return v.value()[0]; }

}  // namespace

TEST_CASE("one-hot encoding") {
  LabelTensor l({1, 2, 2}, std::vector<uint8_t>{0, 1, 2, 1});
  auto g = one_hot<double>(l, 3);
  CHECK(g.shape() == Shape{1, 3, 2, 2});
  CHECK(g.at({0, 0, 0, 0}) == 1.0);
  CHECK(g.at({0, 1, 0, 1}) == 1.0);
  CHECK(g.at({0, 2, 1, 0}) == 1.0);
  CHECK(g.at({0, 1, 1, 1}) == 1.0);
  double total = 0;
  for (double v : g.span()) total += v;
  CHECK(total == 4.0);
  CHECK_THROWS_AS(one_hot<double>(l, 2), DataError);
}

TEST_CASE("dice loss examples") {
  const auto labels = random_labels({2, 4, 4}, 3, 1);
  const auto g = one_hot<double>(labels, 3);
  CHECK(scalar(dice_loss(Var<double>(g), g, 1e-5)) <= 1e-5);

  const int64_t n = 16;
  Tensor<double> uniform({1, 2, 4, 4}, 0.5);
  LabelTensor fg({1, 4, 4}, uint8_t(1));
  const double expect = 1.0 - 2 * 0.5 * n / (0.5 * n + n + 1e-5);
  CHECK(std::abs(scalar(dice_loss(Var<double>(uniform), one_hot<double>(fg, 2), 1e-5)) - expect) <= 1e-12);
  CHECK(std::abs(expect - 1.0 / 3) <= 1e-6);

  Tensor<double> miss({1, 2, 4, 4});
  for (int64_t i = 0; i < n; ++i) miss[i] = 1.0;
  CHECK(scalar(dice_loss(Var<double>(miss), one_hot<double>(fg, 2), 1e-5)) == doctest::Approx(1.0).epsilon(1e-9));

  const auto p = random_probs({2, 3, 4, 4}, 2);
  CHECK(std::abs(scalar(dice_loss(Var<double>(p), g, 1e-5)) - oracle::dice_loss(flat(p), flat(g), 2, 3, 16, 1e-5)) <=
        1e-12);
}

TEST_CASE("dice loss with no foreground anywhere is zero and flagged") {
  Tensor<double> p({1, 2, 2, 2});
  for (int64_t i = 0; i < 4; ++i) p[i] = 1.0;
  LabelTensor bg({1, 2, 2}, uint8_t(0));
  bool empty = false;
  CHECK(scalar(dice_loss(Var<double>(p), one_hot<double>(bg, 2), 1e-5, &empty)) == 0.0);
  CHECK(empty);
  empty = false;
  dice_loss(Var<double>(random_probs({1, 2, 2, 2}, 3)), one_hot<double>(bg, 2), 1e-5, &empty);
  CHECK_FALSE(empty);
}

TEST_CASE("iou loss examples") {
  const auto g = one_hot<double>(random_labels({2, 4, 4}, 3, 4), 3);
  CHECK(scalar(iou_loss(Var<double>(g), g)) == 0.0);

  LabelTensor a({1, 2, 2}, std::vector<uint8_t>{0, 0, 1, 1});
  LabelTensor b({1, 2, 2}, std::vector<uint8_t>{1, 1, 0, 0});
  auto pa = one_hot<double>(a, 2);
  auto gb = one_hot<double>(b, 2);
  CHECK(std::abs(scalar(iou_loss(Var<double>(pa), gb)) - 1.0) <= 1e-6);

  // P = 0.5 everywhere, G has two of four pixels set:
  // intersection 1, union 2 + 2 - 1 = 3, loss 2/3.
  Tensor<double> half({1, 1, 2, 2}, 0.5);
  Tensor<double> two({1, 1, 2, 2}, std::vector<double>{1, 1, 0, 0});
  CHECK(std::abs(scalar(iou_loss(Var<double>(half), two)) - 2.0 / 3.0) <= 1e-15);

  const auto p = random_probs({2, 3, 4, 4}, 5);
  CHECK(std::abs(scalar(iou_loss(Var<double>(p), g)) - oracle::iou_loss(flat(p), flat(g))) <= 1e-12);
}

TEST_CASE("combined loss endpoints and arithmetic") {
  Var<double> dice(Tensor<double>({1}, 0.2)), iou(Tensor<double>({1}, 0.5));
  CHECK(std::abs(scalar(combined_loss(dice, iou, 0.6)) - 0.38) <= 1e-15);
  CHECK(scalar(combined_loss(dice, iou, 0.0)) == 0.2);
  CHECK(scalar(combined_loss(dice, iou, 1.0)) == 0.5);
  CHECK_THROWS_AS(combined_loss(dice, iou, 1.5), ConfigError);
}

TEST_CASE("losses stay in the unit interval") {
  for (uint64_t s = 0; s < 20; ++s) {
    const auto labels = random_labels({2, 5, 5}, 4, 10 + s);
    auto logits = Var<double>(random_tensor({2, 4, 5, 5}, 30 + s, -4, 4));
    for (double alpha : {0.0, 0.6, 1.0}) {
      auto t = segmentation_loss(logits, labels, alpha, 1e-5);
      for (const auto* v : {&t.dice, &t.iou, &t.combined}) {
        CHECK(scalar(*v) >= 0.0);
        CHECK(scalar(*v) <= 1.0);
      }
    }
  }
}

TEST_CASE("dice and iou gradients match finite differences") {
  const auto g = one_hot<double>(random_labels({1, 4, 4}, 2, 40), 2);
  Var<double> p(random_probs({1, 2, 4, 4}, 41), true);
  auto rd = gradcheck::check({{"P", p}}, [&] { return dice_loss(p, g, 1e-5); });
  INFO("dice worst " << rd.worst << " rel " << rd.max_rel_error);
  CHECK(rd.max_rel_error <= 1e-4);
  auto ri = gradcheck::check({{"P", p}}, [&] { return iou_loss(p, g); });
  INFO("iou worst " << ri.worst << " rel " << ri.max_rel_error);
  CHECK(ri.max_rel_error <= 1e-4);
  Var<double> logits(random_tensor({1, 2, 4, 4}, 42), true);
  const auto labels = random_labels({1, 4, 4}, 2, 43);
  auto rc = gradcheck::check({{"logits", logits}}, [&] { return segmentation_loss(logits, labels, 0.6, 1e-5).combined; });
  CHECK(rc.max_rel_error <= 1e-4);
}

TEST_CASE("argmax over classes") {
  Tensor<double> s({1, 3, 1, 2}, std::vector<double>{0.1, 0.5, 0.7, 0.2, 0.2, 0.3});
  auto l = argmax_classes(s);
  CHECK(l.shape() == Shape{1, 1, 2});
  CHECK(l[0] == 1);
  CHECK(l[1] == 0);
}
