#pragma once

#include <cstddef>

#include "gancs/image.hpp"
#include "gancs/json_io.hpp"
#include "gancs/tensor.hpp"

namespace gancs {

/// Local-darkness crack segmenter.
struct SegmenterParams {
  std::size_t window = 15;          // odd side of the local-mean window
  double tau = 0.15;                // darkness offset on the [-1,1] scale
  std::size_t min_area = 20;        // smaller 8-connected components are dropped
  std::size_t closing_radius = 1;   // square structuring element of side 2r+1

  void validate() const;
  Json to_json() const;
  static SegmenterParams from_json(const Json& j);
  friend bool operator==(const SegmenterParams&, const SegmenterParams&) = default;
};

/// Marks a pixel when it is darker than its local window mean by more than tau,
/// then closes the mask and removes small components. The window mean covers the
/// in-image part of the window. Multi-channel images are averaged first.
BinaryMask segment(const Tensor& chw, const SegmenterParams& params = {});

/// Morphological closing (dilation then erosion); pixels outside the image do not
/// erode the mask.
BinaryMask close_mask(const BinaryMask& mask, std::size_t radius);
/// Drops 8-connected components with fewer than min_area pixels.
BinaryMask remove_small_components(const BinaryMask& mask, std::size_t min_area);

/// Per-pixel confusion counts with crack as the positive class.
struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth);

struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Accuracy, precision, recall and F1. When a denominator vanishes: F1 is 1 if both
/// masks are empty and 0 otherwise, and precision/recall are 1 for an empty pair and 0
/// otherwise.
MetricReport metrics(const ConfusionCounts& c);
inline MetricReport evaluate_masks(const BinaryMask& pred, const BinaryMask& truth) {
  return metrics(confusion(pred, truth));
}

}  // namespace gancs
