#pragma once

#include <functional>
#include <string>
#include <vector>

#include "loraguard/tensor.hpp"

namespace loraguard {

struct GradCheckResult {
  // Relative error is measured per parameter tensor as
  //   max_ij |analytic - numeric| / max(max|analytic|, max|numeric|, 1e-4)
  // and max_rel_err is the worst tensor. The floor keeps all-dead gradients
  // from turning rounding noise into spurious ratios.
  double max_rel_err = 0.0;
  int worst_param = -1;
  int worst_row = -1;
  int worst_col = -1;
  // Coordinates where the loss went non-finite at a perturbed point,
  // formatted "param2[1,3]".
  std::vector<std::string> non_finite;

  bool ok(double tol) const { return non_finite.empty() && max_rel_err < tol; }
};

using LossFn = std::function<double(const std::vector<Tensor2D>&)>;

// Central-difference check of `analytic` against `loss` around `params`.
// Perturbations are applied to the float32 parameters, and the achieved step
// is recomputed from the stored values so the quotient uses the step that was
// actually taken.
GradCheckResult finite_diff_check(const LossFn& loss, std::vector<Tensor2D> params,
                                  const std::vector<Tensor2D>& analytic, double eps);

}  // namespace loraguard
