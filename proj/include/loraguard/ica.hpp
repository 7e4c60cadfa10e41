#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "loraguard/adapter.hpp"

namespace loraguard {

// Fixed-point ICA (tanh contrast, symmetric decorrelation) over row signals.
// Input rows are centered and whitened through the eigendecomposition of
// their covariance; near-zero trailing eigenvalues mark the problem as
// degenerate (fewer independent sources than requested components).
struct FastIcaResult {
  bool converged = false;
  bool degenerate = false;
  int iterations = 0;
  std::vector<double> eigenvalues;                 // covariance spectrum, descending
  std::vector<std::vector<double>> components;     // n_components x n_samples
};

FastIcaResult fast_ica(const std::vector<std::vector<double>>& signals, int n_components,
                       uint64_t seed, int max_iterations = 500, double tolerance = 1e-10);

double cosine_abs(const std::vector<double>& a, const std::vector<double>& b);

// Separation attempt against a merged adapter whose delta is the sum of two
// known components. The observed signals are the merged factorization's
// rank-1 slices (flatten(B[:,r] * A[r,:]) per rank index): that is what an
// adversary holding the factors can form. Scores are |cos| of each recovered
// component against each true flattened delta.
struct IcaSeparationReport {
  int layer = 0;
  FastIcaResult ica;
  // cosines[c] = {|cos(component c, wm delta)|, |cos(component c, task delta)|}
  std::vector<std::array<double, 2>> cosines;
};

IcaSeparationReport ica_separate(const LoraAdapter& merged, const Tensor2D& wm_delta,
                                 const Tensor2D& task_delta, uint64_t seed);

std::string ica_report_text(const IcaSeparationReport& report);

}  // namespace loraguard
