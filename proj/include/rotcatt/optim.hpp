#pragma once

#include <vector>

#include "rotcatt/nn.hpp"

namespace rotcatt {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters without a gradient are left alone.
template <typename T>
class Adam {
 public:
  Adam(const ParamList<T>& params, AdamOptions options);

  void step();
  void zero_grad();

  const std::vector<NamedVar<T>>& params() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<NamedVar<T>> params_;  // trainable entries only
  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
  AdamOptions options_;
};

// Rescales all gradients so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping; NumericError if it is not finite.
template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm);

}  // namespace rotcatt
