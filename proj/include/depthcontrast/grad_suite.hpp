#pragma once

#include <optional>
#include <string>

#include "depthcontrast/grad_check.hpp"
#include "depthcontrast/model.hpp"

namespace dc {

/// Full-loss gradient checks of a small model in 64-bit: the contrastive path
/// (encoder, projector, NT-Xent with training-mode batch norm) and the
/// classification path (encoder, classifier with a fixed dropout mask,
/// cross-entropy).
struct GradSuiteConfig {
  ModelConfig model;
  Index pairs = 4;
  Index image_size = 8;
  double tau = 0.1;
  double eps = 1e-5;
  double tol = 1e-4;
  // Pre-batch-norm biases have near-zero gradients whose central differences
  // are pure round-off (~1e-9 here); below this magnitude the comparison is
  // effectively absolute (tol * floor = 1e-8).
  double floor = 1e-4;

  /// Two conv stages (4, 8 channels), projector 32-32-8 -> 2, classifier 16.
  static GradSuiteConfig tiny();
};

struct GradSuiteReport {
  GradCheckReport contrastive;
  GradCheckReport classification;

  bool passed() const { return contrastive.passed && classification.passed; }
};

/// `corrupt` scales the input gradients of one primitive kind by 1.5, a
/// negative control for the checker itself.
GradSuiteReport run_grad_suite(const GradSuiteConfig& cfg, std::uint64_t seed,
                               std::optional<Primitive> corrupt = std::nullopt);

/// One line per parameter: path, name, max and mean relative error, checked,
/// skipped, verdict.
std::string format_grad_suite(const GradSuiteReport& report);

}  // namespace dc
