#pragma once

// Central finite-difference verification of the reverse-mode rules.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "homofm/tensor/tensor.hpp"

namespace homofm::verify {

struct GradCheckConfig {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so exact zeros compare on an
  /// absolute scale.
  double floor = 1e-6;
  /// Expected ratio of taped to numeric gradient; -alpha for a gradient
  /// reversal, 1 elsewhere.
  double fd_scale = 1.0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;  // coordinates compared
  bool passed = false;

  std::string to_line() const;
};

/// Scalar loss of the given inputs, built from fresh ops on each call.
using LossFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares the taped gradient of `loss` with respect to every coordinate
/// of every input against fd_scale * (L(x + h) - L(x - h)) / 2h. Relative error is
/// |a - n| / max(|a|, |n|, floor).
GradCheckResult gradcheck(const std::string& name, const LossFn& loss,
                          std::vector<Tensor<double>> inputs, const GradCheckConfig& cfg = {});

/// The op-level suite: every differentiable op, grad_reverse, bilinear
/// sampling with respect to coordinates and an unrolled 2-step Euler solve
/// on a 4x4 grid.
std::vector<GradCheckResult> gradient_suite(std::uint64_t seed = 0,
                                            const GradCheckConfig& cfg = {});

/// Total training loss of a miniature model (16x16 images, base_channels 4,
/// N = 2) against every parameter, with all parameters randomized so no
/// zero-initialized layer masks a path. The gradient reversal is
/// neutralized (alpha = -1) so the domain term is checked as an ordinary
/// loss. Runs once per head kind.
std::vector<GradCheckResult> model_gradcheck(std::uint64_t seed = 0, double tolerance = 1e-3);

}  // namespace homofm::verify
