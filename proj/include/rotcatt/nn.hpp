#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rotcatt/ops.hpp"

namespace rotcatt {

template <typename T>
struct NamedVar {
  std::string name;
  Var<T> var;
  bool trainable = true;  // false for running statistics
};

template <typename T>
using ParamList = std::vector<NamedVar<T>>;

// Stable 64-bit seed for the parameter called `name`. Each tensor draws from
// its own stream so adding or removing a submodule never perturbs the
// initial values of the others.
inline uint64_t param_seed(uint64_t seed, std::string_view name) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  uint64_t z = seed ^ h;  // splitmix64 finaliser
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.span()) v = static_cast<T>(dist(rng));
  return t;
}

// Normal(0, stddev) resampled outside two standard deviations.
template <typename T>
Tensor<T> truncated_normal_tensor(Shape shape, double stddev, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.span()) {
    double x;
    do {
      x = dist(rng);
    } while (std::abs(x) > 2.0);
    v = static_cast<T>(x * stddev);
  }
  return t;
}

// He / Kaiming uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, int64_t fan_in, uint64_t seed) {
  return uniform_tensor<T>(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), seed);
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in, int out, int kernel, int stride, int pad, uint64_t seed,
         bool with_bias = true)
      : name_(std::move(name)), stride_(stride), pad_(pad) {
    weight_ = Var<T>::parameter(kaiming_uniform<T>({out, in, kernel, kernel}, int64_t{in} * kernel * kernel,
                                                   param_seed(seed, name_ + ".weight")));
    if (with_bias) bias_ = Var<T>::parameter(Tensor<T>({out}));
  }

  Var<T> forward(const Var<T>& x) const { return ops::conv2d(x, weight_, bias_, stride_, pad_); }

  void collect(ParamList<T>& out) const {
    out.push_back({name_ + ".weight", weight_, true});
    if (bias_.defined()) out.push_back({name_ + ".bias", bias_, true});
  }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  std::string name_;
  int stride_ = 1, pad_ = 0;
  Var<T> weight_, bias_;
};

// Transposed convolution whose kernel equals its stride.
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, int in, int out, int kernel, uint64_t seed) : name_(std::move(name)) {
    weight_ = Var<T>::parameter(
        kaiming_uniform<T>({in, out, kernel, kernel}, in, param_seed(seed, name_ + ".weight")));
    bias_ = Var<T>::parameter(Tensor<T>({out}));
  }

  Var<T> forward(const Var<T>& x) const { return ops::conv_transpose2d(x, weight_, bias_); }

  void collect(ParamList<T>& out) const {
    out.push_back({name_ + ".weight", weight_, true});
    out.push_back({name_ + ".bias", bias_, true});
  }

 private:
  std::string name_;
  Var<T> weight_, bias_;
};

template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels) : name_(std::move(name)) {
    gamma_ = Var<T>::parameter(Tensor<T>({channels}, T(1)));
    beta_ = Var<T>::parameter(Tensor<T>({channels}));
    running_mean_ = Var<T>(Tensor<T>({channels}));
    running_var_ = Var<T>(Tensor<T>({channels}, T(1)));
  }

  Var<T> forward(const Var<T>& x, bool training) {
    return ops::batch_norm2d(x, gamma_, beta_, running_mean_.value_mut(), running_var_.value_mut(),
                             training, T(kMomentum), T(kEps));
  }

  void collect(ParamList<T>& out) const {
    out.push_back({name_ + ".gamma", gamma_, true});
    out.push_back({name_ + ".beta", beta_, true});
    out.push_back({name_ + ".running_mean", running_mean_, false});
    out.push_back({name_ + ".running_var", running_var_, false});
  }

 private:
  std::string name_;
  Var<T> gamma_, beta_, running_mean_, running_var_;
};

// y = x W^T + b. Weights start at U(-1/sqrt(in), 1/sqrt(in)), biases at zero.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in, int out, uint64_t seed, bool with_bias = true) : name_(std::move(name)) {
    weight_ = Var<T>::parameter(
        uniform_tensor<T>({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), param_seed(seed, name_ + ".weight")));
    if (with_bias) bias_ = Var<T>::parameter(Tensor<T>({out}));
  }

  Var<T> forward(const Var<T>& x) const { return ops::linear(x, weight_, bias_); }

  void collect(ParamList<T>& out) const {
    out.push_back({name_ + ".weight", weight_, true});
    if (bias_.defined()) out.push_back({name_ + ".bias", bias_, true});
  }

  Var<T>& weight() { return weight_; }
  const Var<T>& weight() const { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  std::string name_;
  Var<T> weight_, bias_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::string name, int dim) : name_(std::move(name)) {
    gamma_ = Var<T>::parameter(Tensor<T>({dim}, T(1)));
    beta_ = Var<T>::parameter(Tensor<T>({dim}));
  }

  Var<T> forward(const Var<T>& x) const { return ops::layer_norm(x, gamma_, beta_, T(1e-6)); }

  void collect(ParamList<T>& out) const {
    out.push_back({name_ + ".gamma", gamma_, true});
    out.push_back({name_ + ".beta", beta_, true});
  }

 private:
  std::string name_;
  Var<T> gamma_, beta_;
};

template <typename T>
int64_t count_trainable(const ParamList<T>& params) {
  int64_t n = 0;
  for (const auto& p : params) {
    if (p.trainable) n += p.var.value().numel();
  }
  return n;
}

}  // namespace rotcatt
