#include "loraguard/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace loraguard {

GradCheckResult finite_diff_check(const LossFn& loss, std::vector<Tensor2D> params,
                                  const std::vector<Tensor2D>& analytic, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("finite_diff_check: " + std::to_string(params.size()) +
                                " params vs " + std::to_string(analytic.size()) +
                                " analytic gradients");
  }

  GradCheckResult result;
  for (size_t p = 0; p < params.size(); ++p) {
    if (!params[p].same_shape(analytic[p])) {
      throw std::invalid_argument("finite_diff_check: param " + std::to_string(p) + " is " +
                                  params[p].shape_str() + " but analytic gradient is " +
                                  analytic[p].shape_str());
    }
    double max_diff = 0.0;
    double scale = 1e-4;
    int worst_r = -1, worst_c = -1;
    for (int r = 0; r < params[p].rows; ++r) {
      for (int c = 0; c < params[p].cols; ++c) {
        const float saved = params[p].at(r, c);
        params[p].at(r, c) = static_cast<float>(saved + eps);
        const double stored_plus = params[p].at(r, c);
        const double loss_plus = loss(params);
        params[p].at(r, c) = static_cast<float>(saved - eps);
        const double stored_minus = params[p].at(r, c);
        const double loss_minus = loss(params);
        params[p].at(r, c) = saved;

        if (!std::isfinite(loss_plus) || !std::isfinite(loss_minus)) {
          result.non_finite.push_back("param" + std::to_string(p) + "[" + std::to_string(r) +
                                      "," + std::to_string(c) + "]");
          continue;
        }
        const double numeric = (loss_plus - loss_minus) / (stored_plus - stored_minus);
        const double a = analytic[p].at(r, c);
        const double diff = std::fabs(a - numeric);
        if (diff > max_diff) {
          max_diff = diff;
          worst_r = r;
          worst_c = c;
        }
        scale = std::max({scale, std::fabs(a), std::fabs(numeric)});
      }
    }
    const double rel = max_diff / scale;
    if (rel > result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst_param = static_cast<int>(p);
      result.worst_row = worst_r;
      result.worst_col = worst_c;
    }
  }
  return result;
}

}  // namespace loraguard
