#pragma once

// Central finite-difference verification of every layer kind and every
// training loss on small seeded models.

#include <cstdint>
#include <string>
#include <vector>

#include "safl/learner.hpp"

namespace safl {

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar partials compared
  std::size_t kinks = 0;    // partials skipped because the stencil straddled a kink
  bool passed = false;
};

struct GradcheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Relative error denominators are floored here so partials that vanish
  /// analytically are compared in absolute terms.
  double floor = 1e-6;
  /// A partial whose one-sided slopes disagree by more than this (relative)
  /// sits on a leaky-relu kink and is skipped. At most 5% may be skipped.
  double kink_tolerance = 1e-3;
  /// A central difference carries roundoff of about u |loss| / epsilon
  /// (u = machine epsilon). The floor is raised to noise_factor times that, so
  /// partials too small to resolve at `tolerance` are compared with an
  /// absolute tolerance of ten times the roundoff.
  double noise_factor = 1e5;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// The tiny architecture used for loss checks (8x8 images, code_dim 3).
Architecture micro_architecture();

/// One result per layer kind, covering input and parameter gradients.
std::vector<GradcheckResult> gradcheck_layers(std::uint64_t seed, const GradcheckOptions& opts = {});
/// One result per (loss, side) pair over every parameter the gradient touches.
std::vector<GradcheckResult> gradcheck_losses(std::uint64_t seed, const GradcheckOptions& opts = {});
/// Both suites for each seed; names carry the seed.
std::vector<GradcheckResult> gradcheck_suite(const std::vector<std::uint64_t>& seeds,
                                             const GradcheckOptions& opts = {});

}  // namespace safl
