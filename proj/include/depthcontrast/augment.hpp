#pragma once

#include <optional>
#include <span>
#include <string>

#include "depthcontrast/random.hpp"
#include "depthcontrast/tensor.hpp"

namespace dc {

using Plane = RowMatrix<double>;

/// One conveyor capture. Depth is height above the conveyor (baseline 0).
struct RawSample {
  std::string id;
  Plane reflectance;
  Plane depth;
  std::optional<int> label;

  /// Checks matching plane sizes and finiteness; `require_nonnegative_depth`
  /// is dropped once a sample has been standardized.
  void validate(bool require_nonnegative_depth = true) const;
};

struct CropRect {
  Index top = 0;
  Index left = 0;
  Index height = 0;
  Index width = 0;

  bool operator==(const CropRect&) const = default;
};

/// Both views cut at the same rectangle. Views are C x h x w.
struct AugmentedPair {
  Tensor<double> view_ref;
  Tensor<double> view_dep;
  CropRect crop_rect;
};

struct CropStats {
  Index crops = 0;
  Index padded = 0;  // image smaller than the crop, zero-padded first
};

/// Zero-pads a plane symmetrically (extra row/column at the bottom/right) to
/// at least height x width. Crop rectangles refer to this padded frame.
Plane pad_to(const Plane& plane, Index height, Index width);

/// Uniform over all valid top-left offsets of an h x w window.
CropRect draw_crop_rect(Index image_height, Index image_width, Index height, Index width, Stream& stream);
CropRect center_crop_rect(Index image_height, Index image_width, Index height, Index width);

/// `channels` copies of the cropped window of a single plane.
Tensor<double> extract_view(const Plane& plane, const CropRect& rect, Index channels);

AugmentedPair synchronized_random_crop(const RawSample& sample, Index height, Index width, Index channels,
                                       Stream& stream, CropStats* stats = nullptr);

/// 3 x H x W: channel 0 depth, channel 1 reflectance, channel 2 depth.
Tensor<double> compose_channels(const RawSample& sample);
/// Composed (depth, reflectance, depth) window at `rect` of the padded frame.
Tensor<double> compose_crop(const RawSample& sample, const CropRect& rect);

struct NormalizationStats {
  double reflectance_mean = 0.0;
  double reflectance_std = 1.0;
  double depth_mean = 0.0;
  double depth_std = 1.0;
};

/// Per-modality scalar mean and population std over every pixel of `samples`.
NormalizationStats compute_normalization(std::span<const RawSample* const> samples);
RawSample normalize_sample(const RawSample& sample, const NormalizationStats& stats);

}  // namespace dc
