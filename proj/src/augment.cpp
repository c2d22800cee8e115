#include "depthcontrast/augment.hpp"

#include <cmath>

namespace dc {

void RawSample::validate(bool require_nonnegative_depth) const {
  if (reflectance.rows() != depth.rows() || reflectance.cols() != depth.cols())
    throw ShapeError("sample " + id + ": reflectance " + std::to_string(reflectance.rows()) + "x" +
                     std::to_string(reflectance.cols()) + " vs depth " + std::to_string(depth.rows()) + "x" +
                     std::to_string(depth.cols()));
  if (reflectance.size() == 0) throw ShapeError("sample " + id + ": empty planes");
  if (!reflectance.allFinite() || !depth.allFinite()) throw NumericalError("sample " + id + ": non-finite pixel");
  if (require_nonnegative_depth && depth.minCoeff() < 0.0)
    throw ValueError("sample " + id + ": negative depth below the conveyor baseline");
}

Plane pad_to(const Plane& plane, Index height, Index width) {
  if (plane.rows() >= height && plane.cols() >= width) return plane;
  const Index h = std::max(height, plane.rows()), w = std::max(width, plane.cols());
  Plane out = Plane::Zero(h, w);
  out.block((h - plane.rows()) / 2, (w - plane.cols()) / 2, plane.rows(), plane.cols()) = plane;
  return out;
}

CropRect draw_crop_rect(Index image_height, Index image_width, Index height, Index width, Stream& stream) {
  if (height <= 0 || width <= 0) throw ValueError("crop size must be positive");
  const Index h = std::max(image_height, height), w = std::max(image_width, width);
  std::uniform_int_distribution<Index> top(0, h - height), left(0, w - width);
  CropRect r;
  r.top = top(stream);
  r.left = left(stream);
  r.height = height;
  r.width = width;
  return r;
}

CropRect center_crop_rect(Index image_height, Index image_width, Index height, Index width) {
  const Index h = std::max(image_height, height), w = std::max(image_width, width);
  return {(h - height) / 2, (w - width) / 2, height, width};
}

Tensor<double> extract_view(const Plane& plane, const CropRect& rect, Index channels) {
  const Plane padded = pad_to(plane, rect.height, rect.width);
  if (rect.top < 0 || rect.left < 0 || rect.top + rect.height > padded.rows() || rect.left + rect.width > padded.cols())
    throw ShapeError("crop rectangle outside the image");
  Tensor<double> view({channels, rect.height, rect.width});
  for (Index c = 0; c < channels; ++c)
    view.matrix(channels * rect.height, rect.width).middleRows(c * rect.height, rect.height) =
        padded.block(rect.top, rect.left, rect.height, rect.width);
  return view;
}

AugmentedPair synchronized_random_crop(const RawSample& sample, Index height, Index width, Index channels,
                                       Stream& stream, CropStats* stats) {
  sample.validate(false);
  const Index H = sample.depth.rows(), W = sample.depth.cols();
  const CropRect rect = draw_crop_rect(H, W, height, width, stream);
  if (stats) {
    ++stats->crops;
    if (height > H || width > W) ++stats->padded;
  }
  return {extract_view(sample.reflectance, rect, channels), extract_view(sample.depth, rect, channels), rect};
}

Tensor<double> compose_crop(const RawSample& sample, const CropRect& rect) {
  sample.validate(false);
  const Plane dep = pad_to(sample.depth, rect.height, rect.width);
  const Plane ref = pad_to(sample.reflectance, rect.height, rect.width);
  if (rect.top < 0 || rect.left < 0 || rect.top + rect.height > dep.rows() || rect.left + rect.width > dep.cols())
    throw ShapeError("crop rectangle outside the image");
  Tensor<double> out({3, rect.height, rect.width});
  auto m = out.matrix(3 * rect.height, rect.width);
  m.middleRows(0, rect.height) = dep.block(rect.top, rect.left, rect.height, rect.width);
  m.middleRows(rect.height, rect.height) = ref.block(rect.top, rect.left, rect.height, rect.width);
  m.middleRows(2 * rect.height, rect.height) = dep.block(rect.top, rect.left, rect.height, rect.width);
  return out;
}

Tensor<double> compose_channels(const RawSample& sample) {
  return compose_crop(sample, {0, 0, sample.depth.rows(), sample.depth.cols()});
}

NormalizationStats compute_normalization(std::span<const RawSample* const> samples) {
  if (samples.empty()) throw ValueError("normalization statistics need at least one sample");
  double n = 0.0, ref_sum = 0.0, dep_sum = 0.0;
  for (const RawSample* s : samples) {
    n += double(s->depth.size());
    ref_sum += s->reflectance.sum();
    dep_sum += s->depth.sum();
  }
  NormalizationStats st;
  st.reflectance_mean = ref_sum / n;
  st.depth_mean = dep_sum / n;
  double ref_sq = 0.0, dep_sq = 0.0;
  for (const RawSample* s : samples) {
    ref_sq += (s->reflectance.array() - st.reflectance_mean).square().sum();
    dep_sq += (s->depth.array() - st.depth_mean).square().sum();
  }
  st.reflectance_std = std::sqrt(ref_sq / n);
  st.depth_std = std::sqrt(dep_sq / n);
  return st;
}

RawSample normalize_sample(const RawSample& sample, const NormalizationStats& stats) {
  if (!(stats.reflectance_std > 0.0)) throw ValueError("normalization: reflectance std must be > 0");
  if (!(stats.depth_std > 0.0)) throw ValueError("normalization: depth std must be > 0");
  RawSample out = sample;
  out.reflectance = (sample.reflectance.array() - stats.reflectance_mean) / stats.reflectance_std;
  out.depth = (sample.depth.array() - stats.depth_mean) / stats.depth_std;
  return out;
}

}  // namespace dc
