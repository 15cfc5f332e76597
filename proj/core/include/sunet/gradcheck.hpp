#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sunet/autodiff.hpp"
#include "sunet/rng.hpp"

namespace sunet {

struct GradCheckReport {
  double max_rel_err = 0;
  int64_t coords_checked = 0;
  std::vector<std::string> failures;

  bool ok(double tol) const { return coords_checked > 0 && max_rel_err <= tol; }
};

// The function under test maps tracked input leaves to a scalar value. It is
// re-invoked for every finite-difference probe, so it must be pure given its
// inputs (capture parameters as constants or pass them through `inputs`).
using GradFn = std::function<Value<double>(std::vector<Value<double>>&)>;

// Central-difference gradient verification in double precision. For each
// input, at least `coords_per_input` randomly chosen coordinates are probed
// with (f(x+eps) - f(x-eps)) / 2 eps and compared against the analytic
// gradient; the relative error denominator is max(|analytic|, |fd|, 1e-8).
// Coordinates where the two one-sided differences disagree (a relu/max kink
// within eps of the probe point) are resampled rather than misreported.
GradCheckReport gradcheck(const GradFn& fn, const std::vector<Tensor<double>>& inputs,
                          double eps = 1e-5, double tol = 1e-4, uint64_t seed = 1,
                          int coords_per_input = 20);

}  // namespace sunet
