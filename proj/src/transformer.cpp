#include "rotcatt/transformer.hpp"

namespace rotcatt {

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(const std::string& name, int dim, int heads,
                                                  uint64_t seed)
    : heads_(heads),
      query_(name + ".query", dim, dim, seed),
      key_(name + ".key", dim, dim, seed),
      value_(name + ".value", dim, dim, seed),
      output_(name + ".out", dim, dim, seed) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

template <typename T>
Var<T> MultiHeadSelfAttention<T>::forward(const Var<T>& x, Tensor<T>* weights) const {
  Var<T> q = ops::split_heads(query_.forward(x), heads_);
  Var<T> k = ops::split_heads(key_.forward(x), heads_);
  Var<T> v = ops::split_heads(value_.forward(x), heads_);
  return output_.forward(ops::merge_heads(ops::scaled_attention(q, k, v, weights)));
}

template <typename T>
void MultiHeadSelfAttention<T>::collect(ParamList<T>& out) const {
  query_.collect(out);
  key_.collect(out);
  value_.collect(out);
  output_.collect(out);
}

template <typename T>
TransformerLayer<T>::TransformerLayer(const std::string& name, int dim, int heads, int mlp_ratio,
                                      uint64_t seed)
    : norm1_(name + ".ln1", dim),
      norm2_(name + ".ln2", dim),
      attention_(name + ".attn", dim, heads, seed),
      fc1_(name + ".mlp.fc1", dim, dim * mlp_ratio, seed),
      fc2_(name + ".mlp.fc2", dim * mlp_ratio, dim, seed) {}

template <typename T>
Var<T> TransformerLayer<T>::forward(const Var<T>& z, Tensor<T>* attention_weights) const {
  if (z.value().rank() != 3) throw ShapeError("transformer_layer: expected (B,n,d), got " + shape_string(z.shape()));
  Var<T> mid = ops::add(attention_.forward(norm1_.forward(z), attention_weights), z);
  Var<T> hidden = ops::gelu(fc1_.forward(norm2_.forward(mid)));
  return ops::add(fc2_.forward(hidden), mid);
}

template <typename T>
void TransformerLayer<T>::collect(ParamList<T>& out) const {
  norm1_.collect(out);
  attention_.collect(out);
  norm2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

template <typename T>
TransformerEncoder<T>::TransformerEncoder(const std::string& name, int layers, int dim, int heads,
                                          int mlp_ratio, uint64_t seed) {
  for (int l = 0; l < layers; ++l) {
    layers_.emplace_back(name + ".layer" + std::to_string(l), dim, heads, mlp_ratio, seed);
  }
}

template <typename T>
Var<T> TransformerEncoder<T>::forward(const Var<T>& z, std::vector<Tensor<T>>* attention_weights) const {
  Var<T> h = z;
  for (const auto& layer : layers_) {
    if (attention_weights) {
      attention_weights->emplace_back();
      h = layer.forward(h, &attention_weights->back());
    } else {
      h = layer.forward(h);
    }
  }
  return h;
}

template <typename T>
void TransformerEncoder<T>::collect(ParamList<T>& out) const {
  for (const auto& layer : layers_) layer.collect(out);
}

template class MultiHeadSelfAttention<float>;
template class MultiHeadSelfAttention<double>;
template class TransformerLayer<float>;
template class TransformerLayer<double>;
template class TransformerEncoder<float>;
template class TransformerEncoder<double>;

}  // namespace rotcatt
