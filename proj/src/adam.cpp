#include "gancs/adam.hpp"

#include <cmath>

#include "gancs/errors.hpp"

namespace gancs {

AdamState::AdamState(AdamOptions options) : options_(options) {
  if (!(options_.learning_rate > 0.0)) throw ConfigError("Adam learning rate must be positive");
  if (!(options_.beta1 >= 0.0 && options_.beta1 < 1.0 && options_.beta2 >= 0.0 && options_.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
}

void AdamState::step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                     std::span<const std::string> names) {
  if (params.size() != grads.size()) throw ShapeError("Adam: parameter/gradient count mismatch");
  auto label = [&](std::size_t i) { return i < names.size() ? names[i] : "#" + std::to_string(i); };
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("Adam: parameter count changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "Adam parameter " + label(i));
    require_same_shape(*params[i], m_[i], "Adam moments for " + label(i));
    if (!grads[i].all_finite()) throw NumericError("Adam: non-finite gradient for parameter " + label(i));
  }
  ++t_;
  const auto& o = options_;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

void AdamState::step(Tensor& param, const Tensor& grad) {
  Tensor* p = &param;
  step(std::span<Tensor* const>(&p, 1), std::span<const Tensor>(&grad, 1));
}

}  // namespace gancs
