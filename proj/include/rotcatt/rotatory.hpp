#pragma once

#include <array>
#include <vector>

#include "rotcatt/nn.hpp"

namespace rotcatt {

// Token matrices (n, d_f) of three consecutive slices k-1, k, k+1.
template <typename T>
struct SliceWindow {
  Var<T> left, target, right;
};

// Parameters of one single-attention (SA) application:
//   K = Z W_k^T, V = Z W_v^T, a = softmax(tanh(K r + b)), r' = sum_j a_j v_j
// with a scalar score bias b.
template <typename T>
struct SingleAttentionParams {
  Var<T> key_weight;    // (d, d)
  Var<T> value_weight;  // (d, d)
  Var<T> score_bias;    // (1)
};

template <typename T>
SingleAttentionParams<T> make_single_attention_params(const std::string& name, int dim, uint64_t seed);

// Order of the four SA applications inside one rotatory step.
enum SaSlot : size_t { kLeftContext = 0, kRightContext = 1, kLeftIntoTarget = 2, kRightIntoTarget = 3 };

template <typename T>
struct RotatoryParams {
  std::array<SingleAttentionParams<T>, 4> sa;
  Var<T> aggregate_weight;  // W_r: (d, 4d)
  Var<T> aggregate_bias;    // (d)
  bool tied = false;        // all four SA slots alias one parameter set
};

// r^t: mean over the token axis of an (n, d) matrix.
template <typename T>
Var<T> pool_target(const Var<T>& tokens);

// SA(Z, r). When `weights` is non-null it receives the attention vector a.
template <typename T>
Var<T> single_attention(const Var<T>& tokens, const Var<T>& query, const SingleAttentionParams<T>& params,
                        Tensor<T>* weights = nullptr);

// r^k = concat(r^l, r^r, r^{l/t}, r^{r/t}), length 4 d. `weights` (if given)
// receives the four SA attention vectors in slot order.
template <typename T>
Var<T> rotatory_step(const SliceWindow<T>& window, const RotatoryParams<T>& params,
                     std::array<Tensor<T>, 4>* weights = nullptr);

// Treats the batch axis of E (B, n, d) as B consecutive slices and returns
// R = W_r(mean of r^k over the B - 2 interior slices), a (d) vector.
template <typename T>
Var<T> rotatory_reduce(const Var<T>& encoded, const RotatoryParams<T>& params,
                       std::vector<std::array<Tensor<T>, 4>>* weights = nullptr);

// F = E + R broadcast over batch and tokens.
template <typename T>
Var<T> fuse(const Var<T>& encoded, const Var<T>& rotatory);

// Ablation path: F = E.
template <typename T>
Var<T> rotatory_disabled_path(const Var<T>& encoded) {
  return encoded;
}

template <typename T>
class RotatoryBlock {
 public:
  RotatoryBlock() = default;
  RotatoryBlock(const std::string& name, int dim, bool tied, uint64_t seed);

  Var<T> forward(const Var<T>& encoded) const { return rotatory_reduce(encoded, params_); }
  void collect(ParamList<T>& out) const;

  RotatoryParams<T>& params() { return params_; }
  const RotatoryParams<T>& params() const { return params_; }

 private:
  std::string name_;
  RotatoryParams<T> params_;
};

}  // namespace rotcatt
