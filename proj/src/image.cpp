#include "gancs/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gancs/errors.hpp"

namespace gancs {
namespace {

Image8 read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw FormatError("cannot decode PNG " + path.string() + ": " + img.message);
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

std::string next_pnm_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw FormatError("truncated PNM header");
}

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string magic = next_pnm_token(in);
  if (magic != "P5" && magic != "P6") throw FormatError("unsupported PNM variant in " + path.string());
  Image8 out;
  out.channels = magic == "P6" ? 3 : 1;
  out.width = std::stoul(next_pnm_token(in));
  out.height = std::stoul(next_pnm_token(in));
  if (std::stoul(next_pnm_token(in)) != 255) throw FormatError("only 8-bit PNM is supported: " + path.string());
  in.get();
  out.pixels.resize(out.width * out.height * out.channels);
  in.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()));
  if (!in) throw FormatError("truncated PNM payload in " + path.string());
  return out;
}

}  // namespace

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

double BinaryMask::fraction() const {
  return values.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(values.size());
}

Image8 read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw FormatError("cannot open " + path.string());
  char head[2] = {};
  probe.read(head, 2);
  if (probe.gcount() == 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '6')) return read_pnm(path);
  try {
    return read_png(path);
  } catch (const FormatError&) {
    throw;
  } catch (...) {
    throw FormatError("cannot decode " + path.string());
  }
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("PNG writer supports 1 or 3 channels");
  if (image.pixels.size() != image.width * image.height * image.channels) throw ShapeError("image buffer size mismatch");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw FormatError("cannot write PNG " + path.string() + ": " + img.message);
}

Image8 to_image8(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("to_image8 expects [C,H,W], got " + shape_string(chw.shape()));
  Image8 out{chw.dim(2), chw.dim(1), chw.dim(0), {}};
  out.pixels.resize(chw.size());
  const std::size_t plane = out.width * out.height;
  for (std::size_t c = 0; c < out.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const double q = std::round((chw[c * plane + i] + 1.0) * 127.5);
      out.pixels[i * out.channels + c] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
    }
  return out;
}

Tensor from_image8(const Image8& image) {
  Tensor out({image.channels, image.height, image.width});
  const std::size_t plane = image.width * image.height;
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = image.pixels[i * image.channels + c] / 127.5 - 1.0;
  return out;
}

Image8 mask_to_image8(const BinaryMask& mask) {
  Image8 out{mask.width, mask.height, 1, {}};
  out.pixels.resize(mask.values.size());
  for (std::size_t i = 0; i < mask.values.size(); ++i) out.pixels[i] = mask.values[i] ? 255 : 0;
  return out;
}

BinaryMask mask_from_image8(const Image8& image) {
  BinaryMask mask(image.height, image.width);
  for (std::size_t i = 0; i < image.width * image.height; ++i) {
    unsigned sum = 0;
    for (std::size_t c = 0; c < image.channels; ++c) sum += image.pixels[i * image.channels + c];
    mask.values[i] = sum >= 128u * image.channels ? 1 : 0;
  }
  return mask;
}

Tensor resize_bilinear(const Tensor& chw, std::size_t out_height, std::size_t out_width) {
  if (chw.rank() != 3) throw ShapeError("resize_bilinear expects [C,H,W]");
  if (out_height == 0 || out_width == 0) throw ShapeError("resize target must be positive");
  const std::size_t channels = chw.dim(0), in_h = chw.dim(1), in_w = chw.dim(2);
  Tensor out({channels, out_height, out_width});
  auto source = [](std::size_t dst, std::size_t in, std::size_t out_n) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out_n) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t i = 0; i < out_height; ++i) {
    const double sy = source(i, in_h, out_height);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_width; ++j) {
      const double sx = source(j, in_w, out_width);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const double* p = chw.data() + c * in_h * in_w;
        const double top = (1 - fx) * p[y0 * in_w + x0] + fx * p[y0 * in_w + x1];
        const double bottom = (1 - fx) * p[y1 * in_w + x0] + fx * p[y1 * in_w + x1];
        out[(c * out_height + i) * out_width + j] = (1 - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

Tensor channel_mean(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("channel_mean expects [C,H,W]");
  const std::size_t c = chw.dim(0), plane = chw.dim(1) * chw.dim(2);
  Tensor out({1, chw.dim(1), chw.dim(2)});
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += chw[k * plane + i];
    out[i] = s / static_cast<double>(c);
  }
  return out;
}

Tensor adapt_channels(const Tensor& chw, std::size_t channels) {
  if (chw.dim(0) == channels) return chw;
  Tensor gray = channel_mean(chw);
  if (channels == 1) return gray;
  const std::size_t plane = gray.size();
  Tensor out({channels, chw.dim(1), chw.dim(2)});
  for (std::size_t c = 0; c < channels; ++c) std::copy(gray.data(), gray.data() + plane, out.data() + c * plane);
  return out;
}

Tensor mosaic(const std::vector<Tensor>& tiles, std::size_t cols, double gutter_value) {
  if (tiles.empty() || cols == 0) throw ShapeError("mosaic needs at least one tile and column");
  const Shape tile = tiles.front().shape();
  if (tile.size() != 3) throw ShapeError("mosaic tiles must be [C,H,W]");
  const std::size_t gutter = 2, rows = (tiles.size() + cols - 1) / cols;
  const std::size_t c = tile[0], h = tile[1], w = tile[2];
  const std::size_t H = rows * h + (rows + 1) * gutter, W = cols * w + (cols + 1) * gutter;
  Tensor out({c, H, W}, gutter_value);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    if (tiles[t].shape() != tile) throw ShapeError("mosaic tiles must share one shape");
    const std::size_t r0 = gutter + (t / cols) * (h + gutter), c0 = gutter + (t % cols) * (w + gutter);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) out[(ch * H + r0 + i) * W + c0 + j] = tiles[t][(ch * h + i) * w + j];
  }
  return out;
}

}  // namespace gancs
