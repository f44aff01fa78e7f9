#pragma once

#include <cstdint>

#include "rotcatt/autograd.hpp"

namespace rotcatt {

using LabelTensor = Tensor<uint8_t>;

// (B, H, W) integer labels -> (B, K, H, W) one-hot. DataError on a label >= K.
template <typename T>
Tensor<T> one_hot(const LabelTensor& labels, int num_classes);

// 1 - mean_{c >= 1} 2 sum(P G) / (sum P + sum G + eps), sums over batch and
// space. When no foreground class carries any mass (or K == 1) the loss is 0
// and `empty` is set.
template <typename T>
Var<T> dice_loss(const Var<T>& probs, const Tensor<T>& target, T eps, bool* empty = nullptr);

// 1 - sum(P G) / sum(P + G - P G) over every class and pixel.
template <typename T>
Var<T> iou_loss(const Var<T>& probs, const Tensor<T>& target);

// alpha * iou + (1 - alpha) * dice.
template <typename T>
Var<T> combined_loss(const Var<T>& dice, const Var<T>& iou, T alpha);

template <typename T>
struct LossTerms {
  Var<T> dice, iou, combined;
  bool empty_foreground = false;
};

// Softmax over classes, then all three terms.
template <typename T>
LossTerms<T> segmentation_loss(const Var<T>& logits, const LabelTensor& labels, T alpha, T eps);

// Per-pixel argmax over axis 1 of (B, K, H, W) -> (B, H, W).
template <typename T>
LabelTensor argmax_classes(const Tensor<T>& scores);

}  // namespace rotcatt
