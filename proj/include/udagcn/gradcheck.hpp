#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "udagcn/autodiff.hpp"

namespace udagcn {

/// Outcome of comparing backward() gradients with central differences.
///
/// A coordinate whose relative error reaches kGradCheckFlagTol is excluded
/// from max_rel_error only when the mismatch is explained by the probe itself:
///   kink: a one-sided difference at ε/64 matches the analytic value within
///         1e-3 (a ReLU or maxpool switch lies within ±ε), or the two ε/64
///         slopes disagree by over 1% and bracket the analytic value (the
///         switch is at the point itself);
///   below resolution: |analytic − numeric| is under the rounding floor
///         100·u·max(1, |f|)/ε of a central difference.
/// raw_max_rel_error keeps the maximum over every coordinate.
struct GradCheckResult {
  double max_rel_error = 0.0;
  double raw_max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks = 0;
  std::size_t below_resolution = 0;

  std::size_t excluded() const { return kinks + below_resolution; }
  /// Also requires exclusions to stay under 2% of the probed coordinates.
  bool passed(double tol) const { return max_rel_error < tol && excluded() * 50 <= coords_checked; }
};

inline constexpr double kGradCheckFlagTol = 1e-4;

/// |a − b| / max(|a|, |b|, 1e-8).
double relative_error(double analytic, double numeric);

/// Scalar function of one input tensor, built on the given tape.
using TensorFn = std::function<Var(Tape&, const Var&)>;
/// Scalar function of the bound parameters, built on the given tape.
using LossFn = std::function<Var(Tape&)>;

/// Central differences (f(x+εeᵢ) − f(x−εeᵢ))/2ε against backward() for
/// every coordinate of x.
GradCheckResult finite_diff_check(const TensorFn& f, const Tensor& x, double eps = 1e-5);

/// Same check over parameter values. When max_coords_per_param is nonzero,
/// that many coordinates per parameter are sampled with the given seed.
GradCheckResult finite_diff_check(const LossFn& f, const ParamRefs& params, double eps = 1e-5,
                                  std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

}  // namespace udagcn
