#include "gancs/segmentation.hpp"

#include <algorithm>

#include "gancs/errors.hpp"

namespace gancs {

void SegmenterParams::validate() const {
  if (window < 3 || window % 2 == 0) throw ConfigError("segmenter window must be odd and at least 3");
  if (!(tau > 0.0)) throw ConfigError("segmenter tau must be positive");
}

Json SegmenterParams::to_json() const {
  return Json{{"window", window}, {"tau", tau}, {"min_area", min_area}, {"closing_radius", closing_radius}};
}

SegmenterParams SegmenterParams::from_json(const Json& j) {
  SegmenterParams p;
  ObjectReader r(j, "segmenter params");
  p.window = r.get("window", p.window);
  p.tau = r.get("tau", p.tau);
  p.min_area = r.get("min_area", p.min_area);
  p.closing_radius = r.get("closing_radius", p.closing_radius);
  r.finish();
  p.validate();
  return p;
}

namespace {

// Max (dilate) or min (erode) over a (2r+1)² square, separably. Outside pixels
// count as `outside`.
BinaryMask square_filter(const BinaryMask& m, std::size_t r, bool dilate, std::uint8_t outside) {
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width), rr = static_cast<long>(r);
  auto combine = [dilate](std::uint8_t a, std::uint8_t b) -> std::uint8_t { return dilate ? (a | b) : (a & b); };
  BinaryMask tmp(m.height, m.width), out(m.height, m.width);
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      std::uint8_t v = dilate ? 0 : 1;
      for (long d = -rr; d <= rr; ++d) {
        const long jj = j + d;
        v = combine(v, jj < 0 || jj >= w ? outside : m.values[static_cast<std::size_t>(i * w + jj)]);
      }
      tmp.values[static_cast<std::size_t>(i * w + j)] = v;
    }
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      std::uint8_t v = dilate ? 0 : 1;
      for (long d = -rr; d <= rr; ++d) {
        const long ii = i + d;
        v = combine(v, ii < 0 || ii >= h ? outside : tmp.values[static_cast<std::size_t>(ii * w + j)]);
      }
      out.values[static_cast<std::size_t>(i * w + j)] = v;
    }
  return out;
}

}  // namespace

BinaryMask close_mask(const BinaryMask& mask, std::size_t radius) {
  if (radius == 0) return mask;
  return square_filter(square_filter(mask, radius, true, 0), radius, false, 1);
}

BinaryMask remove_small_components(const BinaryMask& mask, std::size_t min_area) {
  BinaryMask out = mask;
  if (min_area <= 1) return out;
  std::vector<std::uint8_t> seen(mask.values.size(), 0);
  std::vector<std::size_t> stack, component;
  const long h = static_cast<long>(mask.height), w = static_cast<long>(mask.width);
  for (std::size_t start = 0; start < mask.values.size(); ++start) {
    if (!mask.values[start] || seen[start]) continue;
    component.clear();
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      component.push_back(p);
      const long i = static_cast<long>(p) / w, j = static_cast<long>(p) % w;
      for (long di = -1; di <= 1; ++di)
        for (long dj = -1; dj <= 1; ++dj) {
          const long ni = i + di, nj = j + dj;
          if (ni < 0 || nj < 0 || ni >= h || nj >= w) continue;
          const auto q = static_cast<std::size_t>(ni * w + nj);
          if (mask.values[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
    }
    if (component.size() < min_area)
      for (std::size_t p : component) out.values[p] = 0;
  }
  return out;
}

BinaryMask segment(const Tensor& chw, const SegmenterParams& params) {
  params.validate();
  if (chw.rank() != 3) throw ShapeError("segment expects a [C,H,W] image, got " + shape_string(chw.shape()));
  const Tensor gray = chw.dim(0) == 1 ? chw : channel_mean(chw);
  const std::size_t h = gray.dim(1), w = gray.dim(2);
  const double* g = gray.data();

  // Summed-area table for window means.
  std::vector<double> sat((h + 1) * (w + 1), 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      row += g[i * w + j];
      sat[(i + 1) * (w + 1) + j + 1] = sat[i * (w + 1) + j + 1] + row;
    }
  }
  const std::size_t half = params.window / 2;
  BinaryMask dark(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t i0 = i >= half ? i - half : 0, i1 = std::min(h, i + half + 1);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t j0 = j >= half ? j - half : 0, j1 = std::min(w, j + half + 1);
      const double sum = sat[i1 * (w + 1) + j1] - sat[i0 * (w + 1) + j1] - sat[i1 * (w + 1) + j0] + sat[i0 * (w + 1) + j0];
      const double mean = sum / static_cast<double>((i1 - i0) * (j1 - j0));
      dark.at(i, j) = g[i * w + j] < mean - params.tau ? 1 : 0;
    }
  }
  return remove_small_components(close_mask(dark, params.closing_radius), params.min_area);
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw ShapeError("mask sizes differ: " + std::to_string(pred.height) + "x" + std::to_string(pred.width) + " vs " +
                     std::to_string(truth.height) + "x" + std::to_string(truth.width));
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0, t = truth.values[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricReport metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw ShapeError("metrics need at least one pixel");
  MetricReport m;
  const double tp = static_cast<double>(c.tp);
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  const bool pred_empty = c.tp + c.fp == 0, truth_empty = c.tp + c.fn == 0;
  if (pred_empty && truth_empty) {
    m.precision = m.recall = m.f1 = 1.0;
    return m;
  }
  m.precision = pred_empty ? 0.0 : tp / static_cast<double>(c.tp + c.fp);
  m.recall = truth_empty ? 0.0 : tp / static_cast<double>(c.tp + c.fn);
  // 2PR/(P+R) written over the counts, so exact fractions round once.
  m.f1 = 2.0 * tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return m;
}

}  // namespace gancs
