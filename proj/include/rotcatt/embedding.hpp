#pragma once

#include "rotcatt/config.hpp"
#include "rotcatt/nn.hpp"

namespace rotcatt {

enum class TokenRole { Raw, Positioned, Encoded, Fused };

// Patch-token sequence (B, n, d_f) for one encoder level.
template <typename T>
struct TokenTensor {
  Var<T> values;
  int level = 0;
  TokenRole role = TokenRole::Raw;
};

// Strided convolution with kernel = stride = p: token j is a learned linear
// projection of the j-th non-overlapping p x p patch in row-major order.
template <typename T>
class PatchEmbedding {
 public:
  PatchEmbedding() = default;
  PatchEmbedding(const std::string& name, int level, int in_channels, int patch, int embed_dim,
                 uint64_t seed);

  TokenTensor<T> forward(const Var<T>& features) const;
  void collect(ParamList<T>& out) const { proj_.collect(out); }
  Conv2d<T>& projection() { return proj_; }

 private:
  int level_ = 0, patch_ = 0;
  Conv2d<T> proj_;
};

// Learned (1, n, d_f) table, one per level.
template <typename T>
class PositionalTable {
 public:
  PositionalTable() = default;
  PositionalTable(const std::string& name, int64_t seq_len, int embed_dim, uint64_t seed);

  const Var<T>& table() const { return table_; }
  Var<T>& table() { return table_; }
  void collect(ParamList<T>& out) const { out.push_back({name_, table_, true}); }

 private:
  std::string name_;
  Var<T> table_;
};

// Z = Z_hat + E_pos, broadcast over the batch axis.
template <typename T>
TokenTensor<T> add_positional(const TokenTensor<T>& raw, const Var<T>& table);

}  // namespace rotcatt
