#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gancs/adam.hpp"
#include "gancs/json_io.hpp"
#include "gancs/network.hpp"
#include "gancs/rng.hpp"
#include "gancs/tensor.hpp"

namespace gancs {

/// Geometry and widths of the generator/discriminator pair. Both networks have
/// log2(min(H,W)/4) resolution stages; the generator's widest feature map has
/// g_base·2^(stages−1) channels and halves per stage, the discriminator starts at
/// d_base channels and doubles per stage.
struct GanArchitecture {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 1;
  std::size_t latent_dim = 100;
  std::size_t g_base = 32;
  std::size_t d_base = 16;

  std::size_t stages() const;
  Shape image_shape() const { return {channels, height, width}; }
  void validate() const;
  Json to_json() const;
  static GanArchitecture from_json(const Json& j);
  friend bool operator==(const GanArchitecture&, const GanArchitecture&) = default;
};

/// dense → reshape → BN → ReLU → {convT, BN, ReLU}… → convT → tanh.
Network build_generator(const GanArchitecture& arch);
/// {conv, [BN], leaky 0.2}… → reshape → dense → sigmoid.
Network build_discriminator(const GanArchitecture& arch);

struct GeneratorModel {
  GanArchitecture arch;
  Network net;

  GeneratorModel() = default;
  explicit GeneratorModel(const GanArchitecture& a) : arch(a), net(build_generator(a)) {}
  std::size_t latent_dim() const { return arch.latent_dim; }
  /// Inference-mode images for a [B, latent_dim] batch of codes.
  Tensor generate(const Tensor& z) const;
};

struct DiscriminatorModel {
  GanArchitecture arch;
  Network net;

  DiscriminatorModel() = default;
  explicit DiscriminatorModel(const GanArchitecture& a) : arch(a), net(build_discriminator(a)) {}
  /// Index of the layer producing the pre-sigmoid logit.
  std::size_t logit_layer() const { return net.layers().size() - 2; }
};

enum class LossVariant { literal, non_saturating };
std::string to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

inline constexpr double kProbabilityClamp = 1e-7;

/// log D and log(1 − D) of a logit, with D clamped to [1e-7, 1 − 1e-7]. The
/// derivatives with respect to the logit are zero where the clamp is active.
struct LogProbability {
  double value;
  double dlogit;
};
LogProbability log_sigmoid_clamped(double logit);
LogProbability log_one_minus_sigmoid_clamped(double logit);

/// [count, latent_dim] i.i.d. standard-normal draws.
Tensor sample_latent(std::size_t count, std::size_t latent_dim, Rng& rng);

/// Mean loss over a batch of logits and its derivative per logit.
struct LogitLoss {
  double value = 0.0;
  std::vector<double> d_real, d_fake;
};
LogitLoss discriminator_loss_from_logits(std::span<const double> real, std::span<const double> fake,
                                        LossVariant variant);
LogitLoss generator_loss_from_logits(std::span<const double> fake, LossVariant variant);

struct DiscriminatorLoss {
  double loss = 0.0;
  std::vector<std::vector<Tensor>> grads;  // D parameters
  double mean_real = 0.0;                  // mean D(x)
  double mean_fake = 0.0;                  // mean D(G(z))
  Activations real_acts, fake_acts;
};

/// literal: mean log(1 − D(x)) + mean log D(G(z)), minimized by D.
/// non_saturating: −mean log D(x) − mean log(1 − D(G(z))).
DiscriminatorLoss discriminator_loss(const DiscriminatorModel& d, const Tensor& real, const Tensor& fake,
                                     LossVariant variant);

struct GeneratorLoss {
  double loss = 0.0;
  std::vector<std::vector<Tensor>> grads;  // G parameters
  double mean_fake = 0.0;
  Activations g_acts;
};

/// literal: mean log(1 − D(G(z))); non_saturating: −mean log D(G(z)).
/// Gradients flow through a train-mode pass of both networks.
GeneratorLoss generator_loss(const GeneratorModel& g, const DiscriminatorModel& d, const Tensor& z,
                             LossVariant variant);

struct GanTrainConfig {
  std::size_t minibatch_size = 16;
  std::size_t max_epochs = 25;
  std::size_t g_updates_per_d_update = 2;
  AdamOptions adam = AdamOptions::gan();
  LossVariant loss_variant = LossVariant::non_saturating;
  double init_stddev = 0.02;
  std::uint64_t seed = 7;

  void validate() const;
  Json to_json() const;
  static GanTrainConfig from_json(const Json& j);
  friend bool operator==(const GanTrainConfig&, const GanTrainConfig&) = default;
};

struct TrainRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;  // mean over the G updates of this step
  double d_real = 0.0;
  double d_fake = 0.0;
};

struct TrainResult {
  GeneratorModel generator;
  DiscriminatorModel discriminator;
  std::vector<TrainRecord> history;
  std::size_t d_steps = 0;
  std::size_t g_steps = 0;
};

using TrainProgress = std::function<void(const TrainRecord&)>;

/// Alternating minibatch training: one D update, then g_updates_per_d_update G
/// updates with fresh latent draws. Throws NumericError naming the step if a loss
/// becomes non-finite.
TrainResult train_gan(const std::vector<Tensor>& images, const GanArchitecture& arch,
                      const GanTrainConfig& config, const TrainProgress& progress = {});

/// CSV with columns step,d_loss,g_loss.
void write_loss_csv(const std::filesystem::path& path, const std::vector<TrainRecord>& history);

}  // namespace gancs
