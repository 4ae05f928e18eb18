#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gancs/adam.hpp"
#include "gancs/gan.hpp"
#include "gancs/operators.hpp"
#include "gancs/tensor.hpp"

namespace gancs {

struct RecoveryConfig {
  double lambda = 0.001;
  std::size_t iterations = 200;
  std::size_t restarts = 10;
  AdamOptions adam = AdamOptions::recovery();
  std::uint64_t seed = 1;
  bool record_trace = false;

  /// 10 restarts for compression, 5 for blur and occlusion.
  static std::size_t default_restarts(OperatorKind kind);
  void validate() const;
  Json to_json() const;
  static RecoveryConfig from_json(const Json& j);
  friend bool operator==(const RecoveryConfig&, const RecoveryConfig&) = default;
};

/// L = L_c + λ·L_p with L_c = ‖op(G(z)) − y‖², L_p = ‖z‖².
struct RecoveryLoss {
  double total = 0.0;
  double consistency = 0.0;
  double penalty = 0.0;
  Tensor grad;  // dL/dz, shaped like z
};

/// Loss and exact gradient at z ([1, latent_dim]); G must be in inference mode.
RecoveryLoss recovery_loss(const Tensor& z, const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                           double lambda);

struct TracePoint {
  std::size_t iteration = 0;
  double total = 0.0;
  double consistency = 0.0;
  double penalty = 0.0;
};

/// Outcome of one optimization run, reported at its best iterate.
struct RestartOutcome {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  Tensor z;
  double loss = 0.0;
  double consistency = 0.0;
  double penalty = 0.0;
  std::size_t best_iteration = 0;
  std::vector<TracePoint> trace;  // iterates 0..iterations when recorded
};

/// z₀ ~ N(0, I) from restart_seed, then exactly config.iterations Adam steps.
RestartOutcome recover_single(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                              const RecoveryConfig& config, std::uint64_t restart_seed);

struct RecoveryResult {
  Tensor z_hat;
  Tensor reconstruction;  // G(ẑ), image shape
  double L_min = 0.0;
  double L_c = 0.0;
  double L_p = 0.0;
  std::size_t best_restart = 0;
  std::vector<double> per_restart_losses;  // +inf for failed restarts
  std::vector<RestartOutcome> restarts;
  double wall_time_seconds = 0.0;
};

std::uint64_t restart_seed(std::uint64_t seed, std::size_t restart);

/// Runs the restarts with seeds restart_seed(config.seed, r) and keeps the lowest
/// loss (ties go to the lower restart index). Each restart gives the same result as
/// recover_single with its seed.
RecoveryResult recover(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                       const RecoveryConfig& config);
/// As recover(), with explicit restart seeds.
RecoveryResult recover_with_seeds(const GeneratorModel& g, const ForwardOperator& op, const Tensor& y,
                                  const RecoveryConfig& config, const std::vector<std::uint64_t>& seeds);

/// CSV with columns restart,iteration,L,L_c,L_p.
void write_trace_csv(const std::filesystem::path& path, const RecoveryResult& result);

}  // namespace gancs
