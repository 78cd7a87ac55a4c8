#pragma once

#include "sfanet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sfanet {

struct GradCheckOptions {
  double step = 1e-6;         ///< central-difference half width
  double tolerance = 1e-4;    ///< on the relative error
  /// Relative error uses max(|analytic|, |numeric|, floor); the floor is
  /// raised to the round-off bound of the difference quotient over the
  /// tolerance when that is larger.
  double denominator_floor = 1e-6;
  /// Relative bend in the half-step slopes above which the stencil is taken
  /// to contain a non-differentiable point.
  double kink_tolerance = 3e-5;
  int coordinates = 50;       ///< valid coordinates per check (all of them if fewer exist)
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  int checked = 0;
  int skipped = 0;  ///< coordinates whose stencil straddles a kink
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Compares autodiff gradients of `loss` w.r.t. `inputs` against central
/// differences on a random sample of coordinates, at least one per input.
/// A coordinate whose half-step slopes bend lies next to a
/// non-differentiable point; it is retried with steps of step / 10 and
/// step / 100, then replaced by another sample.
/// `loss` must rebuild the graph from the current values of `inputs` on
/// every call.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor<double>()>& loss,
                                const std::vector<Tensor<double>>& inputs, const GradCheckOptions& options);

/// Every differentiable op, then a width-1/8 model on a 1x3x32x32 input.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options);

/// Just the model check.
GradCheckResult check_model_gradients(const GradCheckOptions& options);

}  // namespace sfanet
