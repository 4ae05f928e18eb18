#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gancs/image.hpp"
#include "gancs/json_io.hpp"
#include "gancs/tensor.hpp"

namespace gancs {

struct CorpusConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 1;
  std::size_t train_count = 2000;
  std::size_t validation_count = 40;
  std::uint64_t master_seed = 20240611;

  // Crack geometry.
  double width_min = 1.0;  // pixels
  double width_max = 4.0;
  double branch_probability = 0.15;
  double waviness = 0.25;  // radians of heading jitter per unit step, before scaling
  double depth_min = 0.55;  // darkening of crack pixels on the [-1,1] scale
  double depth_max = 0.85;

  // Background texture.
  double base_level = 0.35;
  double noise_amplitude = 0.12;
  std::size_t noise_octaves = 3;
  double grain = 0.02;

  void validate() const;
  Json to_json() const;
  static CorpusConfig from_json(const Json& j);

  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

enum class Split { train, validation };

struct Sample {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  Split split = Split::train;
  Tensor image;                     // [C,H,W] in [-1,1]
  std::optional<BinaryMask> mask;   // absent for ingested images
  std::string source;               // original file for ingested images
};

struct Corpus {
  CorpusConfig config;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(Split which) const;
  std::vector<const Sample*> train() const { return split(Split::train); }
  std::vector<const Sample*> validation() const { return split(Split::validation); }
};

/// Seed of sample `index` under `master_seed`.
std::uint64_t sample_seed(std::uint64_t master_seed, std::size_t index);

/// Deterministic synthetic crack image with exact ground-truth mask. Indices
/// below train_count form the training split, the following validation_count the
/// validation split.
Sample generate_sample(const CorpusConfig& config, std::size_t index);
Corpus generate_corpus(const CorpusConfig& config);

/// Loads every decodable image in `dir` (sorted by name), resized bilinearly to the
/// configured geometry. Undecodable files are skipped and reported to `log`.
/// The first validation_count files form the validation split, the rest the
/// training split.
Corpus ingest_directory(const std::filesystem::path& dir, const CorpusConfig& config, std::ostream& log);

/// Directory layout: manifest.json, images/NNNNN.png, masks/NNNNN.png.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

/// CRC-32 over the quantized image bytes followed by the mask bytes.
std::uint32_t sample_checksum(const Image8& image, const std::optional<BinaryMask>& mask);

/// Number of 8-connected components of a mask.
std::size_t connected_components(const BinaryMask& mask);

}  // namespace gancs
