#pragma once

#include <span>
#include <string>
#include <vector>

#include "gancs/tensor.hpp"

namespace gancs {

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Latent recovery: lr 0.1, betas (0.9, 0.999).
  static AdamOptions recovery() { return {0.1, 0.9, 0.999, 1e-8}; }
  /// Adversarial training: lr 0.0002, betas (0.5, 0.999).
  static AdamOptions gan() { return {0.0002, 0.5, 0.999, 1e-8}; }

  friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

/// Bias-corrected Adam. Moment tensors are created lazily on the first step
/// and must keep matching the parameter shapes afterwards.
class AdamState {
 public:
  explicit AdamState(AdamOptions options = {});

  const AdamOptions& options() const noexcept { return options_; }
  long step_count() const noexcept { return t_; }
  const std::vector<Tensor>& first_moment() const noexcept { return m_; }
  const std::vector<Tensor>& second_moment() const noexcept { return v_; }

  /// Updates `params` in place. `names` (optional) labels parameters in errors.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads,
            std::span<const std::string> names = {});
  void step(Tensor& param, const Tensor& grad);

 private:
  AdamOptions options_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace gancs
