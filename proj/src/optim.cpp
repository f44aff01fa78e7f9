#include "rotcatt/optim.hpp"

#include <cmath>

namespace rotcatt {

template <typename T>
Adam<T>::Adam(const ParamList<T>& params, AdamOptions options) : options_(options) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    params_.push_back(p);
    m_.push_back(Tensor<T>::zeros_like(p.var.value()));
    v_.push_back(Tensor<T>::zeros_like(p.var.value()));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_)), c2 = 1.0 - std::pow(b2, double(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    const Var<T>& p = params_[k].var;
    if (!p.has_grad()) continue;
    T* w = p.value_mut().data();
    const T* g = p.grad().data();
    T* m = m_[k].data();
    T* v = v_[k].data();
    const int64_t n = m_[k].numel();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = double(g[i]);
      const double mi = b1 * double(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * double(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = options_.learning_rate * (double(m[i]) / c1) / (std::sqrt(double(v[i]) / c2) + options_.eps);
      w[i] = static_cast<T>(double(w[i]) - update);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (const auto& p : params_) p.var.zero_grad();
}

template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  double total = 0;
  for (const auto& p : params) {
    if (!p.trainable || !p.var.has_grad()) continue;
    for (T g : p.var.grad().span()) total += double(g) * double(g);
  }
  total = std::sqrt(total);
  if (!std::isfinite(total)) throw NumericError("gradient norm is not finite");
  if (total > max_norm) {
    const double s = max_norm / (total + 1e-6);
    for (const auto& p : params) {
      if (!p.trainable || !p.var.has_grad()) continue;
      for (T& g : p.var.grad_mut().span()) g = static_cast<T>(double(g) * s);
    }
  }
  return total;
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm(const ParamList<float>&, double);
template double clip_grad_norm(const ParamList<double>&, double);

}  // namespace rotcatt
