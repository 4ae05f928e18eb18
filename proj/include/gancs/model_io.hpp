#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "gancs/gan.hpp"
#include "gancs/operators.hpp"

namespace gancs {

inline constexpr std::uint32_t kModelFileVersion = 1;

/// A trained generator (and optionally its discriminator) with the settings that produced it.
struct ModelFile {
  GeneratorModel generator;
  std::optional<DiscriminatorModel> discriminator;
  GanTrainConfig training;
  std::uint64_t corpus_seed = 0;
  double training_seconds = 0.0;

  const GanArchitecture& architecture() const { return generator.arch; }
};

/// Binary layout: "GPCS", u32 version, u64 manifest length, JSON manifest,
/// little-endian f64 tensors in manifest order, CRC-32 of the tensor bytes.
void save_model(const std::filesystem::path& path, const ModelFile& model);
/// Validates magic, version, tensor shapes and checksum. Networks come back in inference mode.
ModelFile load_model(const std::filesystem::path& path);

/// Observation file: "GPCSOBS1", u64 manifest length, JSON manifest (descriptor,
/// image shape, sigma, value count), little-endian f64 values, CRC-32 of the values.
void save_observation(const std::filesystem::path& path, const Observation& obs);
Observation load_observation(const std::filesystem::path& path);

}  // namespace gancs
