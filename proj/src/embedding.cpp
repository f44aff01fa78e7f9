#include "rotcatt/embedding.hpp"

namespace rotcatt {

template <typename T>
PatchEmbedding<T>::PatchEmbedding(const std::string& name, int level, int in_channels, int patch,
                                  int embed_dim, uint64_t seed)
    : level_(level), patch_(patch), proj_(name, in_channels, embed_dim, patch, patch, 0, seed) {}

template <typename T>
TokenTensor<T> PatchEmbedding<T>::forward(const Var<T>& features) const {
  if (features.value().rank() != 4 || features.shape()[2] % patch_ != 0 ||
      features.shape()[3] % patch_ != 0) {
    throw ShapeError("patch_embed: spatial dims of " + shape_string(features.shape()) +
                     " not divisible by patch size " + std::to_string(patch_));
  }
  return {ops::map_to_tokens(proj_.forward(features)), level_, TokenRole::Raw};
}

template <typename T>
PositionalTable<T>::PositionalTable(const std::string& name, int64_t seq_len, int embed_dim, uint64_t seed)
    : name_(name) {
  table_ = Var<T>::parameter(truncated_normal_tensor<T>({1, seq_len, embed_dim}, 0.02, param_seed(seed, name)));
}

template <typename T>
TokenTensor<T> add_positional(const TokenTensor<T>& raw, const Var<T>& table) {
  const Shape& s = raw.values.shape();
  if (s.size() != 3 || table.shape() != Shape{1, s[1], s[2]}) {
    throw ShapeError("add_positional: table " + shape_string(table.shape()) + " does not align with " +
                     shape_string(s));
  }
  Var<T> flat = ops::reshape(raw.values, {s[0], s[1] * s[2]});
  Var<T> row = ops::reshape(table, {s[1] * s[2]});
  return {ops::reshape(ops::add_broadcast(flat, row), s), raw.level, TokenRole::Positioned};
}

template class PatchEmbedding<float>;
template class PatchEmbedding<double>;
template class PositionalTable<float>;
template class PositionalTable<double>;
template TokenTensor<float> add_positional(const TokenTensor<float>&, const Var<float>&);
template TokenTensor<double> add_positional(const TokenTensor<double>&, const Var<double>&);

}  // namespace rotcatt
