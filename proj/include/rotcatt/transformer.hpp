#pragma once

#include <vector>

#include "rotcatt/nn.hpp"

namespace rotcatt {

// Multi-head self-attention: Q/K/V projections, per-head scaled dot-product
// attention, learned output projection.
template <typename T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, int dim, int heads, uint64_t seed);

  Var<T> forward(const Var<T>& x, Tensor<T>* weights = nullptr) const;
  void collect(ParamList<T>& out) const;

  Linear<T>& query() { return query_; }
  Linear<T>& key() { return key_; }
  Linear<T>& value() { return value_; }
  Linear<T>& output() { return output_; }

 private:
  int heads_ = 1;
  Linear<T> query_, key_, value_, output_;
};

// Pre-norm layer:
//   Zbar    = MSA(LN(Z)) + Z
//   Z_next  = MLP(LN(Zbar)) + Zbar
template <typename T>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(const std::string& name, int dim, int heads, int mlp_ratio, uint64_t seed);

  Var<T> forward(const Var<T>& z, Tensor<T>* attention_weights = nullptr) const;
  void collect(ParamList<T>& out) const;

  MultiHeadSelfAttention<T>& attention() { return attention_; }
  Linear<T>& mlp_out() { return fc2_; }

 private:
  LayerNorm<T> norm1_, norm2_;
  MultiHeadSelfAttention<T> attention_;
  Linear<T> fc1_, fc2_;
};

// N sequential layers mapping Z_i to E_i. N = 0 is the identity.
template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const std::string& name, int layers, int dim, int heads, int mlp_ratio, uint64_t seed);

  // When `attention_weights` is non-null one (B, heads, n, n) tensor per layer
  // is appended.
  Var<T> forward(const Var<T>& z, std::vector<Tensor<T>>* attention_weights = nullptr) const;
  void collect(ParamList<T>& out) const;

  size_t size() const { return layers_.size(); }
  TransformerLayer<T>& layer(size_t i) { return layers_.at(i); }

 private:
  std::vector<TransformerLayer<T>> layers_;
};

}  // namespace rotcatt
