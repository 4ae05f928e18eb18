#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gancs/tensor.hpp"

namespace gancs {

/// 8-bit interleaved image (row-major, channels fastest), as stored on disk.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Binary H×W mask; 1 marks the positive (crack) class.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

  std::uint8_t& at(std::size_t i, std::size_t j) { return values[i * width + j]; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return values[i * width + j]; }
  std::size_t count() const;
  double fraction() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// PNG (8-bit gray/RGB, alpha dropped, palette expanded) or binary PGM/PPM.
Image8 read_image(const std::filesystem::path& path);
/// Non-interlaced 8-bit PNG.
void write_png(const std::filesystem::path& path, const Image8& image);

/// [C,H,W] tensor in [-1,1] → 8-bit with q = round((v + 1)·127.5), clamped.
Image8 to_image8(const Tensor& chw);
/// 8-bit → [C,H,W] tensor via v = q / 127.5 − 1.
Tensor from_image8(const Image8& image);

Image8 mask_to_image8(const BinaryMask& mask);
/// Nonzero pixels (channel mean ≥ 128) become 1.
BinaryMask mask_from_image8(const Image8& image);

/// Bilinear resampling of each channel of a [C,H,W] tensor with pixel-center
/// alignment (align-corners off): source = (dst + 0.5)·in/out − 0.5, clamped to the edge.
Tensor resize_bilinear(const Tensor& chw, std::size_t out_height, std::size_t out_width);

/// Mean over channels of a [C,H,W] tensor, returned as [1,H,W].
Tensor channel_mean(const Tensor& chw);
/// Repeats or averages channels to reach `channels`.
Tensor adapt_channels(const Tensor& chw, std::size_t channels);

/// Tiles equally sized [C,H,W] images into a rows×cols mosaic with a 2-pixel gutter.
Tensor mosaic(const std::vector<Tensor>& tiles, std::size_t cols, double gutter_value = 1.0);

}  // namespace gancs
