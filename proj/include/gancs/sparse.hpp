#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gancs/json_io.hpp"
#include "gancs/operators.hpp"
#include "gancs/tensor.hpp"

namespace gancs {

/// Orthonormal type-II 2-D DCT over H×W images. Coefficient and pixel vectors
/// are row-major, so w[k*W + l] is the (k, l) frequency.
class DctBasis {
 public:
  DctBasis(std::size_t height, std::size_t width);

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t size() const { return h_ * w_; }

  /// Ψw: inverse transform of a coefficient vector or H×W array.
  Eigen::VectorXd synthesize(const Eigen::VectorXd& w) const;
  /// Ψᵀs: forward transform.
  Eigen::VectorXd analyze(const Eigen::VectorXd& s) const;

 private:
  std::size_t h_, w_;
  Eigen::MatrixXd ch_, cw_;  // row k holds the k-th cosine
};

/// Forward and inverse orthonormal 2-D DCT of an [H,W] or [1,H,W] tensor; the shape is preserved.
Tensor dct2(const Tensor& x);
Tensor idct2(const Tensor& x);

enum class BaselineMethod { omp, cosamp, ista };
std::string to_string(BaselineMethod m);
BaselineMethod baseline_method_from_string(const std::string& s);

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::cosamp;
  std::size_t sparsity = 0;        // K for omp/cosamp; 0 selects ceil(0.05·N) capped at M
  double l1_weight = 1.0;          // λ₁ for ista
  std::size_t ista_iterations = 500;
  std::size_t cosamp_iterations = 100;
  std::size_t power_iterations = 100;
  double residual_tolerance = 1e-12;  // stop once ‖r‖ ≤ tol·‖y‖

  /// K actually used for N unknowns and M measurements.
  std::size_t effective_sparsity(std::size_t n, std::size_t m) const;
  void validate() const;
  Json to_json() const;
  static BaselineConfig from_json(const Json& j);
  friend bool operator==(const BaselineConfig&, const BaselineConfig&) = default;
};

struct SparseSolution {
  Eigen::VectorXd w;
  std::vector<std::size_t> support;  // selection order for omp, ascending otherwise
  std::size_t iterations = 0;
  std::vector<double> objective;     // ista: ‖y − Φw‖² + λ₁‖w‖₁ at w₀ and after every iteration
  double lipschitz = 0.0;            // ista: bound used for λ_max(ΦᵀΦ)
  std::vector<std::string> warnings;
};

/// Greedy selection of the atom with the largest normalized correlation, exact
/// least squares on the growing support, at most k atoms.
SparseSolution omp_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, std::size_t k,
                         double residual_tolerance = 1e-12);

/// CoSaMP: merge the 2k strongest proxy entries with the current support, solve
/// least squares there by conjugate gradients, prune to k. Stops when the residual
/// stops decreasing, falls below tolerance, or after max_iterations.
SparseSolution cosamp_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, std::size_t k,
                            std::size_t max_iterations = 100, double residual_tolerance = 1e-12);

/// Proximal gradient on ‖y − Φw‖² + λ₁‖w‖₁:
/// w ← soft(w − Φᵀ(Φw − y)/L, λ₁/(2L)), L ≥ λ_max(ΦᵀΦ). lipschitz ≤ 0 estimates L by
/// power iteration (times a 1.1 safety margin).
SparseSolution ista_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y, double l1_weight,
                          std::size_t iterations, double lipschitz = 0.0, std::size_t power_iterations = 100);

/// Largest eigenvalue of ΦᵀΦ by power iteration from a fixed start vector.
double power_iteration(const Eigen::MatrixXd& phi, std::size_t steps);

/// Φ = A·Ψ as a dense M×N matrix for a single-channel operator.
Eigen::MatrixXd sensing_matrix(const ForwardOperator& op, const DctBasis& basis);

struct BaselineResult {
  Tensor reconstruction;  // [1,H,W], clamped to [-1,1]
  Tensor coefficients;    // [H,W]
  std::size_t sparsity = 0;
  SparseSolution solution;
  double wall_time_seconds = 0.0;
};

/// Recovers a grayscale image from y = op(s) with the configured method.
BaselineResult run_baseline(const ForwardOperator& op, const Tensor& y, const BaselineConfig& config);

}  // namespace gancs
