#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "rotcatt/autograd.hpp"

// Differentiable tensor operations. Every function records its own backward
// closure on the tape; shapes are checked eagerly and reported as ShapeError.
namespace rotcatt::ops {

// Elementwise and structural ------------------------------------------------

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
// x + b where b holds a single scalar.
template <typename T> Var<T> add_scalar(const Var<T>& x, const Var<T>& b);
// x[..., d] + v[d], broadcast over every leading axis.
template <typename T> Var<T> add_broadcast(const Var<T>& x, const Var<T>& v);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, size_t axis);
// x[index, ...] along axis 0.
template <typename T> Var<T> select(const Var<T>& x, int64_t index);
// Stacks equally shaped tensors along a new leading axis.
template <typename T> Var<T> stack(const std::vector<Var<T>>& parts);
// Mean over axis 0: (m, ...) -> (...).
template <typename T> Var<T> mean_axis0(const Var<T>& x);

// (n, d) x (d) -> (n)
template <typename T> Var<T> matvec(const Var<T>& m, const Var<T>& v);
// (n) x (n, d) -> (d)
template <typename T> Var<T> vecmat(const Var<T>& a, const Var<T>& m);

// Softmax over the last axis.
template <typename T> Var<T> softmax_last(const Var<T>& x);
// Softmax over axis 1 of a (B, C, H, W) tensor.
template <typename T> Var<T> softmax_channels(const Var<T>& x);

// Dense layers ----------------------------------------------------------------

// x[..., in] W^T + b with W of shape (out, in). `bias` may be undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

// Inverted dropout; identity when p == 0.
template <typename T> Var<T> dropout(const Var<T>& x, T p, std::mt19937_64& rng);

// Attention -------------------------------------------------------------------

// (B, n, d) -> (B, heads, n, d / heads)
template <typename T> Var<T> split_heads(const Var<T>& x, int heads);
// (B, heads, n, dh) -> (B, n, heads * dh)
template <typename T> Var<T> merge_heads(const Var<T>& x);
// softmax(Q K^T / sqrt(dh)) V over tensors shaped (B, heads, n, dh). When
// `weights` is non-null it receives the (B, heads, n, n) attention matrix.
template <typename T>
Var<T> scaled_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                        Tensor<T>* weights = nullptr);

// Convolution and spatial ------------------------------------------------------

// weight (Cout, Cin, kh, kw); bias (Cout) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);
// Transposed convolution with kernel == stride (non-overlapping), weight
// (Cin, Cout, k, k).
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
// Batch normalization over (B, H, W) per channel. In training mode the
// running statistics are updated in place.
template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                    T eps);
template <typename T> Var<T> max_pool2x2(const Var<T>& x);
// Bilinear resize by an integer factor, half-pixel centres, edge clamped.
template <typename T> Var<T> upsample_bilinear(const Var<T>& x, int factor);
// Global average pooling (B, C, H, W) -> (B, C).
template <typename T> Var<T> global_avg_pool(const Var<T>& x);
// x (B, C, H, W) * s (B, C) broadcast over space.
template <typename T> Var<T> scale_channels(const Var<T>& x, const Var<T>& s);

// (B, d, gh, gw) -> (B, gh * gw, d), tokens in row-major grid order.
template <typename T> Var<T> map_to_tokens(const Var<T>& x);
// (B, gh * gw, d) -> (B, d, gh, gw)
template <typename T> Var<T> tokens_to_map(const Var<T>& x, int64_t grid_h, int64_t grid_w);

}  // namespace rotcatt::ops
