#include "rotcatt/losses.hpp"

#include "rotcatt/ops.hpp"

namespace rotcatt {

namespace {

void check_pair(const Shape& p, const Shape& g, const char* what) {
  if (p != g) {
    throw ShapeError(std::string(what) + ": probabilities " + shape_string(p) + " vs target " + shape_string(g));
  }
  if (shape_numel(p) == 0) throw ShapeError(std::string(what) + ": empty tensors");
}

}  // namespace

template <typename T>
Tensor<T> one_hot(const LabelTensor& labels, int num_classes) {
  if (labels.rank() != 3) throw ShapeError("one_hot: expected (B, H, W), got " + shape_string(labels.shape()));
  const int64_t b = labels.dim(0), plane = labels.dim(1) * labels.dim(2);
  Tensor<T> out({b, num_classes, labels.dim(1), labels.dim(2)});
  for (int64_t n = 0; n < b; ++n) {
    for (int64_t i = 0; i < plane; ++i) {
      const int c = labels[n * plane + i];
      if (c >= num_classes) {
        throw DataError("one_hot: label " + std::to_string(c) + " outside [0, " + std::to_string(num_classes) + ")");
      }
      out[(n * num_classes + c) * plane + i] = T(1);
    }
  }
  return out;
}

template <typename T>
Var<T> dice_loss(const Var<T>& probs, const Tensor<T>& target, T eps, bool* empty) {
  check_pair(probs.shape(), target.shape(), "dice_loss");
  if (probs.value().rank() != 4) throw ShapeError("dice_loss: expected (B, K, H, W)");
  const int64_t b = probs.shape()[0], k = probs.shape()[1], plane = probs.shape()[2] * probs.shape()[3];
  std::vector<double> inter(k, 0.0), total(k, 0.0);
  const T* p = probs.value().data();
  const T* g = target.data();
  for (int64_t n = 0; n < b; ++n) {
    for (int64_t c = 1; c < k; ++c) {
      const int64_t base = (n * k + c) * plane;
      double pg = 0, s = 0;
      for (int64_t i = 0; i < plane; ++i) {
        pg += double(p[base + i]) * double(g[base + i]);
        s += double(p[base + i]) + double(g[base + i]);
      }
      inter[c] += pg;
      total[c] += s;
    }
  }
  bool any_mass = false;
  for (int64_t c = 1; c < k; ++c) any_mass = any_mass || total[c] > 0;
  if (empty) *empty = !any_mass;
  if (!any_mass) return make_result<T>(Tensor<T>({1}), {probs}, [](const Tensor<T>&) {});

  const double fg = double(k - 1);
  double score = 0;
  std::vector<double> denom(k, 0.0);
  for (int64_t c = 1; c < k; ++c) {
    denom[c] = total[c] + double(eps);
    score += 2.0 * inter[c] / denom[c];
  }
  Tensor<T> value({1}, static_cast<T>(1.0 - score / fg));
  return make_result<T>(std::move(value), {probs}, [probs, target, inter, denom, b, k, plane, fg](const Tensor<T>& up) {
    Tensor<T> grad(probs.shape());
    const T* gt = target.data();
    const double u = double(up[0]);
    for (int64_t n = 0; n < b; ++n) {
      for (int64_t c = 1; c < k; ++c) {
        const int64_t base = (n * k + c) * plane;
        const double a = 2.0 / denom[c], bb = 2.0 * inter[c] / (denom[c] * denom[c]);
        for (int64_t i = 0; i < plane; ++i) {
          grad[base + i] = static_cast<T>(-u * (a * double(gt[base + i]) - bb) / fg);
        }
      }
    }
    probs.accumulate_grad(std::move(grad));
  });
}

template <typename T>
Var<T> iou_loss(const Var<T>& probs, const Tensor<T>& target) {
  check_pair(probs.shape(), target.shape(), "iou_loss");
  const int64_t n = probs.value().numel();
  const T* p = probs.value().data();
  const T* g = target.data();
  double inter = 0, uni = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double pg = double(p[i]) * double(g[i]);
    inter += pg;
    uni += double(p[i]) + double(g[i]) - pg;
  }
  if (uni == 0) return make_result<T>(Tensor<T>({1}), {probs}, [](const Tensor<T>&) {});
  Tensor<T> value({1}, static_cast<T>(1.0 - inter / uni));
  return make_result<T>(std::move(value), {probs}, [probs, target, inter, uni, n](const Tensor<T>& up) {
    Tensor<T> grad(probs.shape());
    const T* gt = target.data();
    const double u = double(up[0]), u2 = uni * uni;
    for (int64_t i = 0; i < n; ++i) {
      const double gi = double(gt[i]);
      grad[i] = static_cast<T>(-u * (gi * uni - inter * (1.0 - gi)) / u2);
    }
    probs.accumulate_grad(std::move(grad));
  });
}

template <typename T>
Var<T> combined_loss(const Var<T>& dice, const Var<T>& iou, T alpha) {
  if (!(alpha >= T(0) && alpha <= T(1))) throw ConfigError("combined_loss: alpha must lie in [0, 1]");
  return ops::add(ops::scale(iou, alpha), ops::scale(dice, T(1) - alpha));
}

template <typename T>
LossTerms<T> segmentation_loss(const Var<T>& logits, const LabelTensor& labels, T alpha, T eps) {
  if (logits.value().rank() != 4) throw ShapeError("segmentation_loss: logits must be (B, K, H, W)");
  const int k = static_cast<int>(logits.shape()[1]);
  Tensor<T> target = one_hot<T>(labels, k);
  Var<T> probs = ops::softmax_channels(logits);
  LossTerms<T> out;
  out.dice = dice_loss(probs, target, eps, &out.empty_foreground);
  out.iou = iou_loss(probs, target);
  out.combined = combined_loss(out.dice, out.iou, alpha);
  return out;
}

template <typename T>
LabelTensor argmax_classes(const Tensor<T>& scores) {
  if (scores.rank() != 4) throw ShapeError("argmax_classes: expected (B, K, H, W)");
  const int64_t b = scores.dim(0), k = scores.dim(1), plane = scores.dim(2) * scores.dim(3);
  LabelTensor out({b, scores.dim(2), scores.dim(3)});
  for (int64_t n = 0; n < b; ++n) {
    for (int64_t i = 0; i < plane; ++i) {
      int64_t best = 0;
      T best_v = scores[n * k * plane + i];
      for (int64_t c = 1; c < k; ++c) {
        const T v = scores[(n * k + c) * plane + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[n * plane + i] = static_cast<uint8_t>(best);
    }
  }
  return out;
}

#define ROTCATT_INSTANTIATE_LOSSES(T)                                               \
  template Tensor<T> one_hot<T>(const LabelTensor&, int);                           \
  template Var<T> dice_loss(const Var<T>&, const Tensor<T>&, T, bool*);             \
  template Var<T> iou_loss(const Var<T>&, const Tensor<T>&);                        \
  template Var<T> combined_loss(const Var<T>&, const Var<T>&, T);                   \
  template LossTerms<T> segmentation_loss(const Var<T>&, const LabelTensor&, T, T); \
  template LabelTensor argmax_classes(const Tensor<T>&);

ROTCATT_INSTANTIATE_LOSSES(float)
ROTCATT_INSTANTIATE_LOSSES(double)

}  // namespace rotcatt
