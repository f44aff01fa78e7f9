#include "rotcatt/rotatory.hpp"

namespace rotcatt {

template <typename T>
SingleAttentionParams<T> make_single_attention_params(const std::string& name, int dim, uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  SingleAttentionParams<T> p;
  p.key_weight = Var<T>::parameter(uniform_tensor<T>({dim, dim}, bound, param_seed(seed, name + ".key")));
  p.value_weight = Var<T>::parameter(uniform_tensor<T>({dim, dim}, bound, param_seed(seed, name + ".value")));
  p.score_bias = Var<T>::parameter(Tensor<T>({1}));
  return p;
}

template <typename T>
Var<T> pool_target(const Var<T>& tokens) {
  if (tokens.value().rank() != 2 || tokens.shape()[0] == 0) {
    throw ShapeError("pool_target: expected non-empty (n, d), got " + shape_string(tokens.shape()));
  }
  return ops::mean_axis0(tokens);
}

template <typename T>
Var<T> single_attention(const Var<T>& tokens, const Var<T>& query, const SingleAttentionParams<T>& params,
                        Tensor<T>* weights) {
  if (tokens.value().rank() != 2 || query.shape() != Shape{tokens.shape()[1]}) {
    throw ShapeError("single_attention: tokens " + shape_string(tokens.shape()) + " vs query " +
                     shape_string(query.shape()));
  }
  Var<T> none;
  Var<T> keys = ops::linear(tokens, params.key_weight, none);
  Var<T> values = ops::linear(tokens, params.value_weight, none);
  Var<T> scores = ops::tanh(ops::add_scalar(ops::matvec(keys, query), params.score_bias));
  Var<T> attn = ops::softmax_last(scores);
  if (weights) *weights = attn.value();
  return ops::vecmat(attn, values);
}

template <typename T>
Var<T> rotatory_step(const SliceWindow<T>& window, const RotatoryParams<T>& params,
                     std::array<Tensor<T>, 4>* weights) {
  const Shape& s = window.target.shape();
  if (window.left.shape() != s || window.right.shape() != s) {
    throw ShapeError("rotatory_step: window slices disagree: " + shape_string(window.left.shape()) + ", " +
                     shape_string(s) + ", " + shape_string(window.right.shape()));
  }
  auto w = [&](size_t slot) { return weights ? &(*weights)[slot] : nullptr; };
  Var<T> target = pool_target(window.target);
  Var<T> left = single_attention(window.left, target, params.sa[kLeftContext], w(kLeftContext));
  Var<T> right = single_attention(window.right, target, params.sa[kRightContext], w(kRightContext));
  Var<T> left_target = single_attention(window.target, left, params.sa[kLeftIntoTarget], w(kLeftIntoTarget));
  Var<T> right_target =
      single_attention(window.target, right, params.sa[kRightIntoTarget], w(kRightIntoTarget));
  return ops::concat<T>({left, right, left_target, right_target}, 0);
}

template <typename T>
Var<T> rotatory_reduce(const Var<T>& encoded, const RotatoryParams<T>& params,
                       std::vector<std::array<Tensor<T>, 4>>* weights) {
  if (encoded.value().rank() != 3) {
    throw ShapeError("rotatory_block: expected (B, n, d), got " + shape_string(encoded.shape()));
  }
  const int64_t slices = encoded.shape()[0];
  if (slices < 3) {
    throw ShapeError("rotatory_block: window too small, need at least 3 consecutive slices, got " +
                     std::to_string(slices));
  }
  std::vector<Var<T>> steps;
  Var<T> prev = ops::select(encoded, 0);
  Var<T> cur = ops::select(encoded, 1);
  for (int64_t k = 1; k + 1 < slices; ++k) {
    Var<T> next = ops::select(encoded, k + 1);
    std::array<Tensor<T>, 4>* w = nullptr;
    if (weights) w = &weights->emplace_back();
    steps.push_back(rotatory_step<T>({prev, cur, next}, params, w));
    prev = cur;
    cur = next;
  }
  Var<T> pooled = ops::mean_axis0(ops::stack(steps));
  return ops::linear(pooled, params.aggregate_weight, params.aggregate_bias);
}

template <typename T>
Var<T> fuse(const Var<T>& encoded, const Var<T>& rotatory) {
  if (encoded.value().rank() != 3 || rotatory.shape() != Shape{encoded.shape()[2]}) {
    throw ShapeError("fuse: E " + shape_string(encoded.shape()) + " vs R " + shape_string(rotatory.shape()));
  }
  return ops::add_broadcast(encoded, rotatory);
}

template <typename T>
RotatoryBlock<T>::RotatoryBlock(const std::string& name, int dim, bool tied, uint64_t seed) : name_(name) {
  params_.tied = tied;
  if (tied) {
    auto shared = make_single_attention_params<T>(name + ".sa", dim, seed);
    params_.sa.fill(shared);
  } else {
    const char* slot_names[4] = {".sa_left", ".sa_right", ".sa_left_target", ".sa_right_target"};
    for (size_t s = 0; s < 4; ++s) params_.sa[s] = make_single_attention_params<T>(name + slot_names[s], dim, seed);
  }
  params_.aggregate_weight = Var<T>::parameter(uniform_tensor<T>(
      {dim, 4 * dim}, 1.0 / std::sqrt(4.0 * dim), param_seed(seed, name + ".aggregate.weight")));
  params_.aggregate_bias = Var<T>::parameter(Tensor<T>({dim}));
}

template <typename T>
void RotatoryBlock<T>::collect(ParamList<T>& out) const {
  const char* slot_names[4] = {".sa_left", ".sa_right", ".sa_left_target", ".sa_right_target"};
  const size_t slots = params_.tied ? 1 : 4;
  for (size_t s = 0; s < slots; ++s) {
    const std::string base = name_ + (params_.tied ? std::string(".sa") : std::string(slot_names[s]));
    out.push_back({base + ".key", params_.sa[s].key_weight, true});
    out.push_back({base + ".value", params_.sa[s].value_weight, true});
    out.push_back({base + ".bias", params_.sa[s].score_bias, true});
  }
  out.push_back({name_ + ".aggregate.weight", params_.aggregate_weight, true});
  out.push_back({name_ + ".aggregate.bias", params_.aggregate_bias, true});
}

#define ROTCATT_INSTANTIATE_ROTATORY(T)                                                                   \
  template SingleAttentionParams<T> make_single_attention_params<T>(const std::string&, int, uint64_t);   \
  template Var<T> pool_target(const Var<T>&);                                                             \
  template Var<T> single_attention(const Var<T>&, const Var<T>&, const SingleAttentionParams<T>&,         \
                                   Tensor<T>*);                                                           \
  template Var<T> rotatory_step(const SliceWindow<T>&, const RotatoryParams<T>&, std::array<Tensor<T>, 4>*); \
  template Var<T> rotatory_reduce(const Var<T>&, const RotatoryParams<T>&,                                \
                                  std::vector<std::array<Tensor<T>, 4>>*);                                \
  template Var<T> fuse(const Var<T>&, const Var<T>&);                                                     \
  template class RotatoryBlock<T>;

ROTCATT_INSTANTIATE_ROTATORY(float)
ROTCATT_INSTANTIATE_ROTATORY(double)

}  // namespace rotcatt
