#include "rotcatt/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "rotcatt/blas.hpp"

namespace rotcatt::ops {
namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

template <typename T>
void require_rank(const Var<T>& x, size_t rank, const char* op) {
  require(x.value().rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                        ", got " + shape_string(x.shape()));
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                      " vs " + shape_string(b.shape()));
}

// dst (cols x rows) = src (rows x cols)^T
template <typename T>
void transpose(const T* src, int rows, int cols, T* dst) {
  constexpr int kTile = 32;
  for (int r0 = 0; r0 < rows; r0 += kTile) {
    for (int c0 = 0; c0 < cols; c0 += kTile) {
      const int r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) dst[static_cast<int64_t>(c) * rows + r] = src[static_cast<int64_t>(r) * cols + c];
      }
    }
  }
}

// Patch-major unfolding of a channel-last image (height*width x channels):
// row p = oy * out_w + ox of `rows` holds the receptive field of output pixel
// p ordered (ki, kj, c), zero outside the image.
template <typename T>
void im2row(const T* img, int channels, int height, int width, int kh, int kw, int stride, int pad,
            int out_h, int out_w, T* rows) {
  const int kdim = channels * kh * kw;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      T* dst = rows + static_cast<int64_t>(oy * out_w + ox) * kdim;
      for (int ki = 0; ki < kh; ++ki) {
        const int iy = oy * stride - pad + ki;
        for (int kj = 0; kj < kw; ++kj, dst += channels) {
          const int ix = ox * stride - pad + kj;
          if (iy < 0 || iy >= height || ix < 0 || ix >= width) {
            std::fill(dst, dst + channels, T(0));
          } else {
            std::copy_n(img + static_cast<int64_t>(iy * width + ix) * channels, channels, dst);
          }
        }
      }
    }
  }
}

// Adjoint of im2row.
template <typename T>
void row2im_add(const T* rows, int channels, int height, int width, int kh, int kw, int stride, int pad,
                int out_h, int out_w, T* img) {
  const int kdim = channels * kh * kw;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const T* src = rows + static_cast<int64_t>(oy * out_w + ox) * kdim;
      for (int ki = 0; ki < kh; ++ki) {
        const int iy = oy * stride - pad + ki;
        for (int kj = 0; kj < kw; ++kj, src += channels) {
          const int ix = ox * stride - pad + kj;
          if (iy < 0 || iy >= height || ix < 0 || ix >= width) continue;
          T* dst = img + static_cast<int64_t>(iy * width + ix) * channels;
          for (int c = 0; c < channels; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// Per-axis interpolation taps for half-pixel bilinear resizing.
struct Taps {
  std::vector<int> lo, hi;
  std::vector<double> w_hi;
};

Taps bilinear_taps(int in, int factor) {
  Taps t;
  const int out = in * factor;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w_hi.resize(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(src);
    if (lo > in - 1) lo = in - 1;
    t.lo[o] = lo;
    t.hi[o] = lo < in - 1 ? lo + 1 : lo;
    t.w_hi[o] = src - lo;
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> out = a.value();
  T* o = out.data();
  const T* y = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] += y[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) b.accumulate_grad(g);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> out = a.value();
  T* o = out.data();
  const T* y = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] *= y[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    const int64_t n = g.numel();
    if (a.requires_grad()) {
      Tensor<T> d(g.shape());
      for (int64_t i = 0; i < n; ++i) d[i] = g[i] * b.value()[i];
      a.accumulate_grad(std::move(d));
    }
    if (b.requires_grad()) {
      Tensor<T> d(g.shape());
      for (int64_t i = 0; i < n; ++i) d[i] = g[i] * a.value()[i];
      b.accumulate_grad(std::move(d));
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.span()) v *= factor;
  return make_result<T>(std::move(out), {a}, [a, factor](const Tensor<T>& g) {
    Tensor<T> d = g;
    for (auto& v : d.span()) v *= factor;
    a.accumulate_grad(std::move(d));
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, const Var<T>& b) {
  require(b.value().numel() == 1, "add_scalar: bias must hold one value, got " + shape_string(b.shape()));
  Tensor<T> out = x.value();
  const T bias = b.value()[0];
  for (auto& v : out.span()) v += bias;
  return make_result<T>(std::move(out), {x, b}, [x, b](const Tensor<T>& g) {
    if (x.requires_grad()) x.accumulate_grad(g);
    if (b.requires_grad()) {
      T s = 0;
      for (T v : g.span()) s += v;
      b.accumulate_grad(Tensor<T>(b.shape(), s));
    }
  });
}

template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& v) {
  require_rank(v, 1, "add_broadcast");
  require(x.value().rank() >= 1 && x.shape().back() == v.shape()[0],
          "add_broadcast: trailing dim of " + shape_string(x.shape()) + " vs vector " +
              shape_string(v.shape()));
  const int64_t d = v.shape()[0];
  const int64_t rows = x.value().numel() / d;
  Tensor<T> out = x.value();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < d; ++j) out[r * d + j] += v.value()[j];
  }
  return make_result<T>(std::move(out), {x, v}, [x, v, rows, d](const Tensor<T>& g) {
    if (x.requires_grad()) x.accumulate_grad(g);
    if (v.requires_grad()) {
      Tensor<T> dv(v.shape());
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < d; ++j) dv[j] += g[r * d + j];
      }
      v.accumulate_grad(std::move(dv));
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.span()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {x}, [x](const Tensor<T>& g) {
    Tensor<T> d = g;
    const T* in = x.value().data();
    for (int64_t i = 0; i < d.numel(); ++i) {
      if (!(in[i] > T(0))) d[i] = T(0);
    }
    x.accumulate_grad(std::move(d));
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  Tensor<T> out = x.value();
  for (auto& v : out.span()) v = T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2));
  return make_result<T>(std::move(out), {x}, [x](const Tensor<T>& g) {
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    Tensor<T> d = g;
    const T* in = x.value().data();
    for (int64_t i = 0; i < d.numel(); ++i) {
      const T u = in[i];
      const T cdf = T(0.5) * (T(1) + std::erf(u * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * u * u);
      d[i] *= cdf + u * pdf;
    }
    x.accumulate_grad(std::move(d));
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.span()) v = std::tanh(v);
  return make_result<T>(std::move(out), {x}, [x](const Tensor<T>& g) {
    Tensor<T> d = g;
    const T* in = x.value().data();
    for (int64_t i = 0; i < d.numel(); ++i) {
      const T t = std::tanh(in[i]);
      d[i] *= T(1) - t * t;
    }
    x.accumulate_grad(std::move(d));
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.span()) v = T(1) / (T(1) + std::exp(-v));
  return make_result<T>(std::move(out), {x}, [x](const Tensor<T>& g) {
    Tensor<T> d = g;
    const T* in = x.value().data();
    for (int64_t i = 0; i < d.numel(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-in[i]));
      d[i] *= s * (T(1) - s);
    }
    x.accumulate_grad(std::move(d));
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().span()) s += v;
  return make_result<T>(Tensor<T>(Shape{1}, s), {x}, [x](const Tensor<T>& g) {
    x.accumulate_grad(Tensor<T>(x.shape(), g[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const int64_t n = x.value().numel();
  require(n > 0, "mean: empty tensor");
  T s = 0;
  for (T v : x.value().span()) s += v;
  return make_result<T>(Tensor<T>(Shape{1}, s / T(n)), {x}, [x, n](const Tensor<T>& g) {
    x.accumulate_grad(Tensor<T>(x.shape(), g[0] / T(n)));
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [x](const Tensor<T>& g) {
    x.accumulate_grad(g.reshaped(x.shape()));
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts[0].shape();
  require(axis < ref.size(), "concat: axis out of range for " + shape_string(ref));
  int64_t outer = 1, inner = 1, total = 0;
  for (size_t a = 0; a < axis; ++a) outer *= ref[a];
  for (size_t a = axis + 1; a < ref.size(); ++a) inner *= ref[a];
  std::vector<int64_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (size_t a = 0; ok && a < s.size(); ++a) ok = a == axis || s[a] == ref[a];
    require(ok, "concat: incompatible shapes " + shape_string(ref) + " and " + shape_string(s));
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  Tensor<T> out(out_shape);
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const int64_t block = extents[k] * inner;
    const T* src = parts[k].value().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block, out.data() + o * total * inner + offset);
    }
    offset += block;
  }
  return make_result<T>(std::move(out), parts,
                        [parts, extents, outer, inner, total](const Tensor<T>& g) {
                          int64_t offset = 0;
                          for (size_t k = 0; k < parts.size(); ++k) {
                            const int64_t block = extents[k] * inner;
                            if (parts[k].requires_grad()) {
                              Tensor<T> d(parts[k].shape());
                              for (int64_t o = 0; o < outer; ++o) {
                                const T* src = g.data() + o * total * inner + offset;
                                std::copy(src, src + block, d.data() + o * block);
                              }
                              parts[k].accumulate_grad(std::move(d));
                            }
                            offset += block;
                          }
                        });
}

template <typename T>
Var<T> select(const Var<T>& x, int64_t index) {
  require(x.value().rank() >= 1 && index >= 0 && index < x.shape()[0],
          "select: index " + std::to_string(index) + " out of range for " + shape_string(x.shape()));
  Shape s(x.shape().begin() + 1, x.shape().end());
  const int64_t block = shape_numel(s);
  const T* src = x.value().data() + index * block;
  Tensor<T> out(s, std::vector<T>(src, src + block));
  return make_result<T>(std::move(out), {x}, [x, index, block](const Tensor<T>& g) {
    Tensor<T> d(x.shape());
    std::copy(g.data(), g.data() + block, d.data() + index * block);
    x.accumulate_grad(std::move(d));
  });
}

template <typename T>
Var<T> stack(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "stack: no inputs");
  const Shape& ref = parts[0].shape();
  const int64_t block = shape_numel(ref);
  Shape s{static_cast<int64_t>(parts.size())};
  s.insert(s.end(), ref.begin(), ref.end());
  Tensor<T> out(s);
  for (size_t k = 0; k < parts.size(); ++k) {
    require(parts[k].shape() == ref, "stack: shape mismatch " + shape_string(ref) + " vs " +
                                         shape_string(parts[k].shape()));
    std::copy(parts[k].value().data(), parts[k].value().data() + block, out.data() + k * block);
  }
  return make_result<T>(std::move(out), parts, [parts, block](const Tensor<T>& g) {
    for (size_t k = 0; k < parts.size(); ++k) {
      if (!parts[k].requires_grad()) continue;
      const T* src = g.data() + k * block;
      parts[k].accumulate_grad(Tensor<T>(parts[k].shape(), std::vector<T>(src, src + block)));
    }
  });
}

template <typename T>
Var<T> mean_axis0(const Var<T>& x) {
  require(x.value().rank() >= 1 && x.shape()[0] > 0, "mean_axis0: empty leading axis in " +
                                                         shape_string(x.shape()));
  const int64_t m = x.shape()[0];
  Shape s(x.shape().begin() + 1, x.shape().end());
  const int64_t block = shape_numel(s);
  Tensor<T> out(s);
  for (int64_t r = 0; r < m; ++r) {
    for (int64_t j = 0; j < block; ++j) out[j] += x.value()[r * block + j];
  }
  for (auto& v : out.span()) v /= T(m);
  return make_result<T>(std::move(out), {x}, [x, m, block](const Tensor<T>& g) {
    Tensor<T> d(x.shape());
    for (int64_t r = 0; r < m; ++r) {
      for (int64_t j = 0; j < block; ++j) d[r * block + j] = g[j] / T(m);
    }
    x.accumulate_grad(std::move(d));
  });
}

template <typename T>
Var<T> matvec(const Var<T>& m, const Var<T>& v) {
  require_rank(m, 2, "matvec");
  require_rank(v, 1, "matvec");
  const int64_t n = m.shape()[0], d = m.shape()[1];
  require(v.shape()[0] == d, "matvec: " + shape_string(m.shape()) + " x " + shape_string(v.shape()));
  Tensor<T> out(Shape{n});
  for (int64_t i = 0; i < n; ++i) {
    T s = 0;
    for (int64_t j = 0; j < d; ++j) s += m.value()[i * d + j] * v.value()[j];
    out[i] = s;
  }
  return make_result<T>(std::move(out), {m, v}, [m, v, n, d](const Tensor<T>& g) {
    if (m.requires_grad()) {
      Tensor<T> dm(m.shape());
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) dm[i * d + j] = g[i] * v.value()[j];
      }
      m.accumulate_grad(std::move(dm));
    }
    if (v.requires_grad()) {
      Tensor<T> dv(v.shape());
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) dv[j] += m.value()[i * d + j] * g[i];
      }
      v.accumulate_grad(std::move(dv));
    }
  });
}

template <typename T>
Var<T> vecmat(const Var<T>& a, const Var<T>& m) {
  require_rank(a, 1, "vecmat");
  require_rank(m, 2, "vecmat");
  const int64_t n = m.shape()[0], d = m.shape()[1];
  require(a.shape()[0] == n, "vecmat: " + shape_string(a.shape()) + " x " + shape_string(m.shape()));
  Tensor<T> out(Shape{d});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) out[j] += a.value()[i] * m.value()[i * d + j];
  }
  return make_result<T>(std::move(out), {a, m}, [a, m, n, d](const Tensor<T>& g) {
    if (a.requires_grad()) {
      Tensor<T> da(a.shape());
      for (int64_t i = 0; i < n; ++i) {
        T s = 0;
        for (int64_t j = 0; j < d; ++j) s += m.value()[i * d + j] * g[j];
        da[i] = s;
      }
      a.accumulate_grad(std::move(da));
    }
    if (m.requires_grad()) {
      Tensor<T> dm(m.shape());
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) dm[i * d + j] = a.value()[i] * g[j];
      }
      m.accumulate_grad(std::move(dm));
    }
  });
}

namespace {

// Softmax over `count` values spaced `stride` apart.
template <typename T>
void softmax_strided(const T* in, T* out, int64_t count, int64_t stride) {
  T mx = -std::numeric_limits<T>::infinity();
  for (int64_t k = 0; k < count; ++k) mx = std::max(mx, in[k * stride]);
  T s = 0;
  for (int64_t k = 0; k < count; ++k) {
    out[k * stride] = std::exp(in[k * stride] - mx);
    s += out[k * stride];
  }
  for (int64_t k = 0; k < count; ++k) out[k * stride] /= s;
}

template <typename T>
void softmax_backward_strided(const T* y, const T* g, T* d, int64_t count, int64_t stride) {
  T dot = 0;
  for (int64_t k = 0; k < count; ++k) dot += y[k * stride] * g[k * stride];
  for (int64_t k = 0; k < count; ++k) d[k * stride] = y[k * stride] * (g[k * stride] - dot);
}

}  // namespace

template <typename T>
Var<T> softmax_last(const Var<T>& x) {
  require(x.value().rank() >= 1 && x.shape().back() > 0, "softmax_last: empty last axis");
  const int64_t d = x.shape().back();
  const int64_t rows = x.value().numel() / d;
  for (T v : x.value().span()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite score");
  }
  auto out = std::make_shared<Tensor<T>>(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    softmax_strided(x.value().data() + r * d, out->data() + r * d, d, 1);
  }
  Tensor<T> result = *out;
  return make_result<T>(std::move(result), {x}, [x, out, rows, d](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
      softmax_backward_strided(out->data() + r * d, g.data() + r * d, dx.data() + r * d, d, 1);
    }
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  require_rank(x, 4, "softmax_channels");
  const int64_t b = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  auto out = std::make_shared<Tensor<T>>(x.shape());
  for (int64_t n = 0; n < b; ++n) {
    for (int64_t p = 0; p < hw; ++p) {
      const int64_t base = n * c * hw + p;
      softmax_strided(x.value().data() + base, out->data() + base, c, hw);
    }
  }
  Tensor<T> result = *out;
  return make_result<T>(std::move(result), {x}, [x, out, b, c, hw](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t n = 0; n < b; ++n) {
      for (int64_t p = 0; p < hw; ++p) {
        const int64_t base = n * c * hw + p;
        softmax_backward_strided(out->data() + base, g.data() + base, dx.data() + base, c, hw);
      }
    }
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(weight, 2, "linear");
  const int64_t out_f = weight.shape()[0], in_f = weight.shape()[1];
  require(x.value().rank() >= 1 && x.shape().back() == in_f,
          "linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  if (bias.defined()) {
    require(bias.shape() == Shape{out_f}, "linear: bias " + shape_string(bias.shape()));
  }
  const int64_t rows = x.value().numel() / in_f;
  Shape s = x.shape();
  s.back() = out_f;
  Tensor<T> out(s);
  if (rows > 0) {
    blas::gemm<T>(false, true, rows, out_f, in_f, T(1), x.value().data(), weight.value().data(),
                  T(0), out.data());
  }
  if (bias.defined()) {
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < out_f; ++j) out[r * out_f + j] += bias.value()[j];
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs,
                        [x, weight, bias, rows, in_f, out_f](const Tensor<T>& g) {
                          if (x.requires_grad()) {
                            Tensor<T> dx(x.shape());
                            blas::gemm<T>(false, false, rows, in_f, out_f, T(1), g.data(),
                                          weight.value().data(), T(0), dx.data());
                            x.accumulate_grad(std::move(dx));
                          }
                          if (weight.requires_grad()) {
                            Tensor<T> dw(weight.shape());
                            blas::gemm<T>(true, false, out_f, in_f, rows, T(1), g.data(),
                                          x.value().data(), T(0), dw.data());
                            weight.accumulate_grad(std::move(dw));
                          }
                          if (bias.defined() && bias.requires_grad()) {
                            Tensor<T> db(bias.shape());
                            for (int64_t r = 0; r < rows; ++r) {
                              for (int64_t j = 0; j < out_f; ++j) db[j] += g[r * out_f + j];
                            }
                            bias.accumulate_grad(std::move(db));
                          }
                        });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const int64_t d = x.shape().back();
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
          "layer_norm: affine params do not match " + shape_string(x.shape()));
  const int64_t rows = x.value().numel() / d;
  auto stats = std::make_shared<std::vector<T>>(2 * rows);  // mean, rstd
  Tensor<T> out(x.shape());
  const T* in = x.value().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = in + r * d;
    T mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    (*stats)[2 * r] = mu;
    (*stats)[2 * r + 1] = rstd;
    for (int64_t j = 0; j < d; ++j) {
      out[r * d + j] = (row[j] - mu) * rstd * gamma.value()[j] + beta.value()[j];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, stats, rows, d](const Tensor<T>& g) {
                          Tensor<T> dx(x.shape()), dgamma(gamma.shape()), dbeta(beta.shape());
                          std::vector<T> xhat(d), dxhat(d);
                          for (int64_t r = 0; r < rows; ++r) {
                            const T mu = (*stats)[2 * r], rstd = (*stats)[2 * r + 1];
                            T mean_dxhat = 0, mean_dxhat_xhat = 0;
                            for (int64_t j = 0; j < d; ++j) {
                              xhat[j] = (x.value()[r * d + j] - mu) * rstd;
                              dxhat[j] = g[r * d + j] * gamma.value()[j];
                              dgamma[j] += g[r * d + j] * xhat[j];
                              dbeta[j] += g[r * d + j];
                              mean_dxhat += dxhat[j];
                              mean_dxhat_xhat += dxhat[j] * xhat[j];
                            }
                            mean_dxhat /= T(d);
                            mean_dxhat_xhat /= T(d);
                            for (int64_t j = 0; j < d; ++j) {
                              dx[r * d + j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            }
                          }
                          if (x.requires_grad()) x.accumulate_grad(std::move(dx));
                          if (gamma.requires_grad()) gamma.accumulate_grad(std::move(dgamma));
                          if (beta.requires_grad()) beta.accumulate_grad(std::move(dbeta));
                        });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T p, std::mt19937_64& rng) {
  if (p <= T(0)) return x;
  require(p < T(1), "dropout: probability must be < 1");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto mask = std::make_shared<Tensor<T>>(x.shape());
  const T keep_scale = T(1) / (T(1) - p);
  for (auto& m : mask->span()) m = uniform(rng) < static_cast<double>(p) ? T(0) : keep_scale;
  Tensor<T> out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= (*mask)[i];
  return make_result<T>(std::move(out), {x}, [x, mask](const Tensor<T>& g) {
    Tensor<T> d = g;
    for (int64_t i = 0; i < d.numel(); ++i) d[i] *= (*mask)[i];
    x.accumulate_grad(std::move(d));
  });
}

template <typename T>
Var<T> split_heads(const Var<T>& x, int heads) {
  require_rank(x, 3, "split_heads");
  const int64_t b = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
  require(heads > 0 && d % heads == 0,
          "split_heads: width " + std::to_string(d) + " not divisible by " + std::to_string(heads));
  const int64_t dh = d / heads;
  Tensor<T> out(Shape{b, heads, n, dh});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t t = 0; t < n; ++t)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t e = 0; e < dh; ++e)
          out[((bi * heads + h) * n + t) * dh + e] = x.value()[(bi * n + t) * d + h * dh + e];
  return make_result<T>(std::move(out), {x}, [x, b, n, d, heads, dh](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t t = 0; t < n; ++t)
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t e = 0; e < dh; ++e)
            dx[(bi * n + t) * d + h * dh + e] = g[((bi * heads + h) * n + t) * dh + e];
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> merge_heads(const Var<T>& x) {
  require_rank(x, 4, "merge_heads");
  const int64_t b = x.shape()[0], heads = x.shape()[1], n = x.shape()[2], dh = x.shape()[3];
  const int64_t d = heads * dh;
  Tensor<T> out(Shape{b, n, d});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t t = 0; t < n; ++t)
        for (int64_t e = 0; e < dh; ++e)
          out[(bi * n + t) * d + h * dh + e] = x.value()[((bi * heads + h) * n + t) * dh + e];
  return make_result<T>(std::move(out), {x}, [x, b, heads, n, dh, d](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t t = 0; t < n; ++t)
          for (int64_t e = 0; e < dh; ++e)
            dx[((bi * heads + h) * n + t) * dh + e] = g[(bi * n + t) * d + h * dh + e];
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> scaled_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Tensor<T>* weights) {
  require_rank(q, 4, "scaled_attention");
  require_same(q, k, "scaled_attention");
  require_same(q, v, "scaled_attention");
  for (const Var<T>* t : {&q, &k, &v}) {
    for (T x : t->value().span()) {
      if (!std::isfinite(x)) throw NumericError("scaled_attention: non-finite input");
    }
  }
  const int64_t groups = q.shape()[0] * q.shape()[1];
  const int n = static_cast<int>(q.shape()[2]);
  const int dh = static_cast<int>(q.shape()[3]);
  const T scale_factor = T(1) / std::sqrt(T(dh));
  auto attn = std::make_shared<Tensor<T>>(Shape{q.shape()[0], q.shape()[1], n, n});
  Tensor<T> out(q.shape());
  for (int64_t gi = 0; gi < groups; ++gi) {
    const T* qg = q.value().data() + gi * n * dh;
    const T* kg = k.value().data() + gi * n * dh;
    const T* vg = v.value().data() + gi * n * dh;
    T* ag = attn->data() + gi * n * n;
    blas::gemm<T>(false, true, n, n, dh, scale_factor, qg, kg, T(0), ag);
    for (int r = 0; r < n; ++r) softmax_strided(ag + r * n, ag + r * n, n, 1);
    blas::gemm<T>(false, false, n, dh, n, T(1), ag, vg, T(0), out.data() + gi * n * dh);
  }
  if (weights) *weights = *attn;
  return make_result<T>(
      std::move(out), {q, k, v}, [q, k, v, attn, groups, n, dh, scale_factor](const Tensor<T>& g) {
        Tensor<T> dq(q.shape()), dk(k.shape()), dv(v.shape());
        std::vector<T> da(static_cast<size_t>(n) * n);
        for (int64_t gi = 0; gi < groups; ++gi) {
          const int64_t off = gi * n * dh;
          const T* ag = attn->data() + gi * n * n;
          const T* gg = g.data() + off;
          blas::gemm<T>(false, true, n, n, dh, T(1), gg, v.value().data() + off, T(0), da.data());
          blas::gemm<T>(true, false, n, dh, n, T(1), ag, gg, T(0), dv.data() + off);
          for (int r = 0; r < n; ++r) {
            softmax_backward_strided(ag + r * n, da.data() + r * n, da.data() + r * n, n, 1);
          }
          blas::gemm<T>(false, false, n, dh, n, scale_factor, da.data(), k.value().data() + off, T(0),
                        dq.data() + off);
          blas::gemm<T>(true, false, n, dh, n, scale_factor, da.data(), q.value().data() + off, T(0),
                        dk.data() + off);
        }
        if (q.requires_grad()) q.accumulate_grad(std::move(dq));
        if (k.requires_grad()) k.accumulate_grad(std::move(dk));
        if (v.requires_grad()) v.accumulate_grad(std::move(dv));
      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const int batch = static_cast<int>(x.shape()[0]);
  const int cin = static_cast<int>(x.shape()[1]);
  const int h = static_cast<int>(x.shape()[2]);
  const int w = static_cast<int>(x.shape()[3]);
  const int cout = static_cast<int>(weight.shape()[0]);
  const int kh = static_cast<int>(weight.shape()[2]);
  const int kw = static_cast<int>(weight.shape()[3]);
  require(weight.shape()[1] == cin, "conv2d: input channels " + std::to_string(cin) +
                                        " vs weight " + shape_string(weight.shape()));
  require(stride > 0 && h + 2 * pad >= kh && w + 2 * pad >= kw,
          "conv2d: kernel larger than padded input " + shape_string(x.shape()));
  if (bias.defined()) require(bias.shape() == Shape{cout}, "conv2d: bias " + shape_string(bias.shape()));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  const int kdim = cin * kh * kw;
  const int plane = oh * ow;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  Tensor<T> out(Shape{batch, cout, oh, ow});
  const int taps = kh * kw;
  // Weight reordered to (cout, ki, kj, cin) to match im2row.
  std::vector<T> w_rows(pointwise ? 0 : static_cast<size_t>(cout) * kdim);
  for (size_t o = 0; o < (pointwise ? 0u : static_cast<size_t>(cout)); ++o) {
    for (int c = 0; c < cin; ++c) {
      for (int t = 0; t < taps; ++t) w_rows[o * kdim + t * cin + c] = weight.value()[(o * cin + c) * taps + t];
    }
  }
  std::vector<T> img_t(pointwise ? 0 : static_cast<size_t>(cin) * h * w);
  std::vector<T> rows(pointwise ? 0 : static_cast<size_t>(kdim) * plane);
  std::vector<T> rows_out(pointwise ? 0 : static_cast<size_t>(cout) * plane);
  for (int b = 0; b < batch; ++b) {
    const T* img = x.value().data() + static_cast<int64_t>(b) * cin * h * w;
    T* dst = out.data() + static_cast<int64_t>(b) * cout * plane;
    if (pointwise) {
      blas::gemm<T>(false, false, cout, plane, kdim, T(1), weight.value().data(), img, T(0), dst);
    } else {
      transpose(img, cin, h * w, img_t.data());
      im2row(img_t.data(), cin, h, w, kh, kw, stride, pad, oh, ow, rows.data());
      blas::gemm<T>(false, true, plane, cout, kdim, T(1), rows.data(), w_rows.data(), T(0), rows_out.data());
      transpose(rows_out.data(), plane, cout, dst);
    }
    if (bias.defined()) {
      for (int c = 0; c < cout; ++c) {
        const T bv = bias.value()[c];
        for (int p = 0; p < plane; ++p) dst[c * plane + p] += bv;
      }
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      std::move(out), inputs,
      [=](const Tensor<T>& g) {
        Tensor<T> dx, dw;
        if (x.requires_grad()) dx = Tensor<T>(x.shape());
        if (weight.requires_grad()) dw = Tensor<T>(weight.shape());
        if (pointwise) {
          for (int b = 0; b < batch; ++b) {
            const T* gb = g.data() + static_cast<int64_t>(b) * cout * plane;
            const T* img = x.value().data() + static_cast<int64_t>(b) * cin * h * w;
            if (weight.requires_grad()) {
              blas::gemm<T>(false, true, cout, kdim, plane, T(1), gb, img, T(1), dw.data());
            }
            if (x.requires_grad()) {
              blas::gemm<T>(true, false, kdim, plane, cout, T(1), weight.value().data(), gb, T(0),
                            dx.data() + static_cast<int64_t>(b) * cin * h * w);
            }
          }
        } else {
          std::vector<T> rows(static_cast<size_t>(kdim) * plane), g_rows(static_cast<size_t>(cout) * plane);
          std::vector<T> img_t(static_cast<size_t>(cin) * h * w), dimg_t(img_t.size());
          std::vector<T> dw_t(weight.requires_grad() ? static_cast<size_t>(kdim) * cout : 0);
          for (int b = 0; b < batch; ++b) {
            transpose(g.data() + static_cast<int64_t>(b) * cout * plane, cout, plane, g_rows.data());
            if (weight.requires_grad()) {
              transpose(x.value().data() + static_cast<int64_t>(b) * cin * h * w, cin, h * w, img_t.data());
              im2row(img_t.data(), cin, h, w, kh, kw, stride, pad, oh, ow, rows.data());
              blas::gemm<T>(true, false, kdim, cout, plane, T(1), rows.data(), g_rows.data(), T(1), dw_t.data());
            }
            if (x.requires_grad()) {
              blas::gemm<T>(false, false, plane, kdim, cout, T(1), g_rows.data(), w_rows.data(), T(0), rows.data());
              std::fill(dimg_t.begin(), dimg_t.end(), T(0));
              row2im_add(rows.data(), cin, h, w, kh, kw, stride, pad, oh, ow, dimg_t.data());
              transpose(dimg_t.data(), h * w, cin, dx.data() + static_cast<int64_t>(b) * cin * h * w);
            }
          }
          if (weight.requires_grad()) {
            for (int o = 0; o < cout; ++o) {
              for (int c = 0; c < cin; ++c) {
                for (int t = 0; t < taps; ++t) {
                  dw[(static_cast<int64_t>(o) * cin + c) * taps + t] = dw_t[static_cast<size_t>(t * cin + c) * cout + o];
                }
              }
            }
          }
        }
        if (x.requires_grad()) x.accumulate_grad(std::move(dx));
        if (weight.requires_grad()) weight.accumulate_grad(std::move(dw));
        if (bias.defined() && bias.requires_grad()) {
          Tensor<T> db(bias.shape());
          for (int b = 0; b < batch; ++b) {
            for (int c = 0; c < cout; ++c) {
              const T* gp = g.data() + (static_cast<int64_t>(b) * cout + c) * plane;
              T s = 0;
              for (int p = 0; p < plane; ++p) s += gp[p];
              db[c] += s;
            }
          }
          bias.accumulate_grad(std::move(db));
        }
      });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x, 4, "conv_transpose2d");
  require_rank(weight, 4, "conv_transpose2d weight");
  const int batch = static_cast<int>(x.shape()[0]);
  const int cin = static_cast<int>(x.shape()[1]);
  const int h = static_cast<int>(x.shape()[2]);
  const int w = static_cast<int>(x.shape()[3]);
  const int cout = static_cast<int>(weight.shape()[1]);
  const int k = static_cast<int>(weight.shape()[2]);
  require(weight.shape()[0] == cin && weight.shape()[3] == k,
          "conv_transpose2d: weight " + shape_string(weight.shape()) + " vs input " +
              shape_string(x.shape()));
  if (bias.defined()) {
    require(bias.shape() == Shape{cout}, "conv_transpose2d: bias " + shape_string(bias.shape()));
  }
  const int oh = h * k, ow = w * k, plane = h * w, rows = cout * k * k;
  Tensor<T> out(Shape{batch, cout, oh, ow});
  std::vector<T> cols(static_cast<size_t>(rows) * plane);
  for (int b = 0; b < batch; ++b) {
    const T* img = x.value().data() + static_cast<int64_t>(b) * cin * plane;
    blas::gemm<T>(true, false, rows, plane, cin, T(1), weight.value().data(), img, T(0), cols.data());
    T* dst = out.data() + static_cast<int64_t>(b) * cout * oh * ow;
    for (int c = 0; c < cout; ++c) {
      const T bv = bias.defined() ? bias.value()[c] : T(0);
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          const T* row = cols.data() + ((c * k + ki) * k + kj) * plane;
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) dst[(c * oh + i * k + ki) * ow + j * k + kj] = row[i * w + j] + bv;
        }
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [=](const Tensor<T>& g) {
    std::vector<T> dcols(static_cast<size_t>(rows) * plane);
    Tensor<T> dx, dw, db;
    if (x.requires_grad()) dx = Tensor<T>(x.shape());
    if (weight.requires_grad()) dw = Tensor<T>(weight.shape());
    if (bias.defined()) db = Tensor<T>(bias.shape());
    for (int b = 0; b < batch; ++b) {
      const T* gb = g.data() + static_cast<int64_t>(b) * cout * oh * ow;
      for (int c = 0; c < cout; ++c)
        for (int ki = 0; ki < k; ++ki)
          for (int kj = 0; kj < k; ++kj) {
            T* row = dcols.data() + ((c * k + ki) * k + kj) * plane;
            for (int i = 0; i < h; ++i)
              for (int j = 0; j < w; ++j) row[i * w + j] = gb[(c * oh + i * k + ki) * ow + j * k + kj];
          }
      const T* img = x.value().data() + static_cast<int64_t>(b) * cin * plane;
      if (x.requires_grad()) {
        blas::gemm<T>(false, false, cin, plane, rows, T(1), weight.value().data(), dcols.data(), T(0),
                      dx.data() + static_cast<int64_t>(b) * cin * plane);
      }
      if (weight.requires_grad()) {
        blas::gemm<T>(false, true, cin, rows, plane, T(1), img, dcols.data(), T(1), dw.data());
      }
      if (bias.defined()) {
        for (int c = 0; c < cout; ++c) {
          T s = 0;
          for (int p = 0; p < oh * ow; ++p) s += gb[c * oh * ow + p];
          db[c] += s;
        }
      }
    }
    if (x.requires_grad()) x.accumulate_grad(std::move(dx));
    if (weight.requires_grad()) weight.accumulate_grad(std::move(dw));
    if (bias.defined() && bias.requires_grad()) bias.accumulate_grad(std::move(db));
  });
}

template <typename T>
Var<T> batch_norm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                    T eps) {
  require_rank(x, 4, "batch_norm2d");
  const int64_t batch = x.shape()[0], ch = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  require(gamma.shape() == Shape{ch} && beta.shape() == Shape{ch} &&
              running_mean.shape() == Shape{ch} && running_var.shape() == Shape{ch},
          "batch_norm2d: parameters do not match " + shape_string(x.shape()));
  const int64_t count = batch * plane;
  require(!training || count > 1, "batch_norm2d: need more than one value per channel in training");
  auto mean_v = std::make_shared<std::vector<T>>(ch);
  auto invstd_v = std::make_shared<std::vector<T>>(ch);
  const T* in = x.value().data();
  for (int64_t c = 0; c < ch; ++c) {
    T mu, var;
    if (training) {
      T s = 0;
      for (int64_t b = 0; b < batch; ++b) {
        const T* p = in + (b * ch + c) * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      mu = s / T(count);
      T ss = 0;
      for (int64_t b = 0; b < batch; ++b) {
        const T* p = in + (b * ch + c) * plane;
        for (int64_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      var = ss / T(count);
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var * T(count) / T(count - 1);
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    (*mean_v)[c] = mu;
    (*invstd_v)[c] = T(1) / std::sqrt(var + eps);
  }
  Tensor<T> out(x.shape());
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < ch; ++c) {
      const T a = gamma.value()[c] * (*invstd_v)[c];
      const T shift = beta.value()[c] - (*mean_v)[c] * a;
      const T* p = in + (b * ch + c) * plane;
      T* o = out.data() + (b * ch + c) * plane;
      for (int64_t i = 0; i < plane; ++i) o[i] = p[i] * a + shift;
    }
  }
  return make_result<T>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean_v, invstd_v, training, batch, ch, plane, count](const Tensor<T>& g) {
        Tensor<T> dx(x.shape()), dgamma(gamma.shape()), dbeta(beta.shape());
        const T* in = x.value().data();
        for (int64_t c = 0; c < ch; ++c) {
          const T mu = (*mean_v)[c], rstd = (*invstd_v)[c];
          T sum_g = 0, sum_g_xhat = 0;
          for (int64_t b = 0; b < batch; ++b) {
            const T* p = in + (b * ch + c) * plane;
            const T* gp = g.data() + (b * ch + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              sum_g += gp[i];
              sum_g_xhat += gp[i] * (p[i] - mu) * rstd;
            }
          }
          dgamma[c] = sum_g_xhat;
          dbeta[c] = sum_g;
          const T gm = gamma.value()[c];
          for (int64_t b = 0; b < batch; ++b) {
            const T* p = in + (b * ch + c) * plane;
            const T* gp = g.data() + (b * ch + c) * plane;
            T* dp = dx.data() + (b * ch + c) * plane;
            if (training) {
              const T k = gm * rstd / T(count);
              for (int64_t i = 0; i < plane; ++i) {
                const T xhat = (p[i] - mu) * rstd;
                dp[i] = k * (T(count) * gp[i] - sum_g - xhat * sum_g_xhat);
              }
            } else {
              for (int64_t i = 0; i < plane; ++i) dp[i] = gp[i] * gm * rstd;
            }
          }
        }
        if (x.requires_grad()) x.accumulate_grad(std::move(dx));
        if (gamma.requires_grad()) gamma.accumulate_grad(std::move(dgamma));
        if (beta.requires_grad()) beta.accumulate_grad(std::move(dbeta));
      });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  require_rank(x, 4, "max_pool2x2");
  const int64_t bc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(h % 2 == 0 && w % 2 == 0, "max_pool2x2: odd spatial size " + shape_string(x.shape()));
  const int64_t oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{x.shape()[0], x.shape()[1], oh, ow});
  auto arg = std::make_shared<std::vector<int64_t>>(out.numel());
  const T* in = x.value().data();
  for (int64_t p = 0; p < bc; ++p) {
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        int64_t best = p * h * w + (2 * i) * w + 2 * j;
        for (int64_t di = 0; di < 2; ++di)
          for (int64_t dj = 0; dj < 2; ++dj) {
            const int64_t idx = p * h * w + (2 * i + di) * w + 2 * j + dj;
            if (in[idx] > in[best]) best = idx;
          }
        const int64_t o = (p * oh + i) * ow + j;
        out[o] = in[best];
        (*arg)[o] = best;
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [x, arg](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t o = 0; o < g.numel(); ++o) dx[(*arg)[o]] += g[o];
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor) {
  require_rank(x, 4, "upsample_bilinear");
  require(factor >= 1, "upsample_bilinear: factor must be positive");
  const int64_t bc = x.shape()[0] * x.shape()[1];
  const int h = static_cast<int>(x.shape()[2]), w = static_cast<int>(x.shape()[3]);
  const int oh = h * factor, ow = w * factor;
  auto ty = std::make_shared<Taps>(bilinear_taps(h, factor));
  auto tx = std::make_shared<Taps>(bilinear_taps(w, factor));
  Tensor<T> out(Shape{x.shape()[0], x.shape()[1], oh, ow});
  const T* in = x.value().data();
  for (int64_t p = 0; p < bc; ++p) {
    const T* src = in + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const T wy = T(ty->w_hi[i]);
      const T* r0 = src + ty->lo[i] * w;
      const T* r1 = src + ty->hi[i] * w;
      for (int j = 0; j < ow; ++j) {
        const T wx = T(tx->w_hi[j]);
        const int x0 = tx->lo[j], x1 = tx->hi[j];
        const T top = r0[x0] * (T(1) - wx) + r0[x1] * wx;
        const T bot = r1[x0] * (T(1) - wx) + r1[x1] * wx;
        dst[i * ow + j] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [x, ty, tx, bc, h, w, oh, ow](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t p = 0; p < bc; ++p) {
      const T* gp = g.data() + p * oh * ow;
      T* dp = dx.data() + p * h * w;
      for (int i = 0; i < oh; ++i) {
        const T wy = T(ty->w_hi[i]);
        T* r0 = dp + ty->lo[i] * w;
        T* r1 = dp + ty->hi[i] * w;
        for (int j = 0; j < ow; ++j) {
          const T wx = T(tx->w_hi[j]);
          const int x0 = tx->lo[j], x1 = tx->hi[j];
          const T gv = gp[i * ow + j];
          r0[x0] += gv * (T(1) - wy) * (T(1) - wx);
          r0[x1] += gv * (T(1) - wy) * wx;
          r1[x0] += gv * wy * (T(1) - wx);
          r1[x1] += gv * wy * wx;
        }
      }
    }
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const int64_t b = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  require(plane > 0, "global_avg_pool: zero-sized spatial dims in " + shape_string(x.shape()));
  Tensor<T> out(Shape{b, c});
  for (int64_t p = 0; p < b * c; ++p) {
    const T* src = x.value().data() + p * plane;
    T s = 0;
    for (int64_t i = 0; i < plane; ++i) s += src[i];
    out[p] = s / T(plane);
  }
  return make_result<T>(std::move(out), {x}, [x, b, c, plane](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t p = 0; p < b * c; ++p) {
      const T v = g[p] / T(plane);
      std::fill(dx.data() + p * plane, dx.data() + (p + 1) * plane, v);
    }
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  require_rank(x, 4, "scale_channels");
  const int64_t b = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  require(s.shape() == Shape{b, c}, "scale_channels: scale " + shape_string(s.shape()) + " vs " +
                                        shape_string(x.shape()));
  Tensor<T> out = x.value();
  for (int64_t p = 0; p < b * c; ++p) {
    const T f = s.value()[p];
    T* o = out.data() + p * plane;
    for (int64_t i = 0; i < plane; ++i) o[i] *= f;
  }
  return make_result<T>(std::move(out), {x, s}, [x, s, b, c, plane](const Tensor<T>& g) {
    if (x.requires_grad()) {
      Tensor<T> dx = g;
      for (int64_t p = 0; p < b * c; ++p) {
        const T f = s.value()[p];
        T* d = dx.data() + p * plane;
        for (int64_t i = 0; i < plane; ++i) d[i] *= f;
      }
      x.accumulate_grad(std::move(dx));
    }
    if (s.requires_grad()) {
      Tensor<T> ds(s.shape());
      for (int64_t p = 0; p < b * c; ++p) {
        const T* gp = g.data() + p * plane;
        const T* xp = x.value().data() + p * plane;
        T acc = 0;
        for (int64_t i = 0; i < plane; ++i) acc += gp[i] * xp[i];
        ds[p] = acc;
      }
      s.accumulate_grad(std::move(ds));
    }
  });
}

template <typename T>
Var<T> map_to_tokens(const Var<T>& x) {
  require_rank(x, 4, "map_to_tokens");
  const int64_t b = x.shape()[0], d = x.shape()[1], n = x.shape()[2] * x.shape()[3];
  Tensor<T> out(Shape{b, n, d});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t c = 0; c < d; ++c)
      for (int64_t t = 0; t < n; ++t) out[(bi * n + t) * d + c] = x.value()[(bi * d + c) * n + t];
  return make_result<T>(std::move(out), {x}, [x, b, d, n](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t c = 0; c < d; ++c)
        for (int64_t t = 0; t < n; ++t) dx[(bi * d + c) * n + t] = g[(bi * n + t) * d + c];
    x.accumulate_grad(std::move(dx));
  });
}

template <typename T>
Var<T> tokens_to_map(const Var<T>& x, int64_t grid_h, int64_t grid_w) {
  require_rank(x, 3, "tokens_to_map");
  const int64_t b = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
  require(grid_h * grid_w == n, "tokens_to_map: " + std::to_string(n) + " tokens do not form a " +
                                    std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  Tensor<T> out(Shape{b, d, grid_h, grid_w});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t t = 0; t < n; ++t)
      for (int64_t c = 0; c < d; ++c) out[(bi * d + c) * n + t] = x.value()[(bi * n + t) * d + c];
  return make_result<T>(std::move(out), {x}, [x, b, d, n](const Tensor<T>& g) {
    Tensor<T> dx(x.shape());
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t t = 0; t < n; ++t)
        for (int64_t c = 0; c < d; ++c) dx[(bi * n + t) * d + c] = g[(bi * d + c) * n + t];
    x.accumulate_grad(std::move(dx));
  });
}

#define ROTCATT_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                            \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale(const Var<T>&, T);                                                      \
  template Var<T> add_scalar(const Var<T>&, const Var<T>&);                                     \
  template Var<T> add_broadcast(const Var<T>&, const Var<T>&);                                  \
  template Var<T> relu(const Var<T>&);                                                          \
  template Var<T> gelu(const Var<T>&);                                                          \
  template Var<T> tanh(const Var<T>&);                                                          \
  template Var<T> sigmoid(const Var<T>&);                                                       \
  template Var<T> sum(const Var<T>&);                                                           \
  template Var<T> mean(const Var<T>&);                                                          \
  template Var<T> reshape(const Var<T>&, Shape);                                                \
  template Var<T> concat(const std::vector<Var<T>>&, size_t);                                   \
  template Var<T> select(const Var<T>&, int64_t);                                               \
  template Var<T> stack(const std::vector<Var<T>>&);                                            \
  template Var<T> mean_axis0(const Var<T>&);                                                    \
  template Var<T> matvec(const Var<T>&, const Var<T>&);                                         \
  template Var<T> vecmat(const Var<T>&, const Var<T>&);                                         \
  template Var<T> softmax_last(const Var<T>&);                                                  \
  template Var<T> softmax_channels(const Var<T>&);                                              \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                   \
  template Var<T> dropout(const Var<T>&, T, std::mt19937_64&);                                  \
  template Var<T> split_heads(const Var<T>&, int);                                              \
  template Var<T> merge_heads(const Var<T>&);                                                   \
  template Var<T> scaled_attention(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>*);    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>&);                \
  template Var<T> batch_norm2d(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&,         \
                               Tensor<T>&, bool, T, T);                                         \
  template Var<T> max_pool2x2(const Var<T>&);                                                   \
  template Var<T> upsample_bilinear(const Var<T>&, int);                                        \
  template Var<T> global_avg_pool(const Var<T>&);                                               \
  template Var<T> scale_channels(const Var<T>&, const Var<T>&);                                 \
  template Var<T> map_to_tokens(const Var<T>&);                                                 \
  template Var<T> tokens_to_map(const Var<T>&, int64_t, int64_t);

ROTCATT_INSTANTIATE_OPS(float)
ROTCATT_INSTANTIATE_OPS(double)

}  // namespace rotcatt::ops
