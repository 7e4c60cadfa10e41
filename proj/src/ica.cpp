#include "loraguard/ica.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "loraguard/rng.hpp"

namespace loraguard {

namespace {

// Jacobi eigendecomposition of a small symmetric matrix; returns descending
// eigenvalues with matching columns in `vectors`.
void symmetric_eigen(std::vector<std::vector<double>> m, std::vector<double>& values,
                     std::vector<std::vector<double>>& vectors) {
  const int n = static_cast<int>(m.size());
  vectors.assign(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) vectors[i][i] = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += m[i][j] * m[i][j];
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(m[p][q]) < 1e-18) continue;
        const double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double mip = m[i][p];
          const double miq = m[i][q];
          m[i][p] = c * mip - s * miq;
          m[i][q] = s * mip + c * miq;
        }
        for (int i = 0; i < n; ++i) {
          const double mpi = m[p][i];
          const double mqi = m[q][i];
          m[p][i] = c * mpi - s * mqi;
          m[q][i] = s * mpi + c * mqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = vectors[i][p];
          const double viq = vectors[i][q];
          vectors[i][p] = c * vip - s * viq;
          vectors[i][q] = s * vip + c * viq;
        }
      }
    }
  }

  values.resize(n);
  for (int i = 0; i < n; ++i) values[i] = m[i][i];
  // Sort descending, permuting vector columns along.
  for (int i = 0; i < n; ++i) {
    int best = i;
    for (int j = i + 1; j < n; ++j)
      if (values[j] > values[best]) best = j;
    if (best != i) {
      std::swap(values[i], values[best]);
      for (int r = 0; r < n; ++r) std::swap(vectors[r][i], vectors[r][best]);
    }
  }
}

// Symmetric decorrelation: W <- (W W^T)^{-1/2} W for small W.
void decorrelate(std::vector<std::vector<double>>& w) {
  const int n = static_cast<int>(w.size());
  const int dim = static_cast<int>(w[0].size());
  std::vector<std::vector<double>> gram(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < dim; ++k) acc += w[i][k] * w[j][k];
      gram[i][j] = acc;
    }
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
  symmetric_eigen(gram, values, vectors);
  std::vector<std::vector<double>> inv_sqrt(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        const double lambda = std::max(values[k], 1e-18);
        acc += vectors[i][k] * vectors[j][k] / std::sqrt(lambda);
      }
      inv_sqrt[i][j] = acc;
    }
  }
  std::vector<std::vector<double>> out(n, std::vector<double>(dim, 0.0));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double f = inv_sqrt[i][k];
      for (int d = 0; d < dim; ++d) out[i][d] += f * w[k][d];
    }
  w = std::move(out);
}

}  // namespace

FastIcaResult fast_ica(const std::vector<std::vector<double>>& signals, int n_components,
                       uint64_t seed, int max_iterations, double tolerance) {
  const int n_signals = static_cast<int>(signals.size());
  if (n_components < 1) throw std::invalid_argument("fast_ica: need at least one component");
  if (n_signals < n_components) {
    throw std::invalid_argument("fast_ica: " + std::to_string(n_signals) + " signals cannot yield " +
                                std::to_string(n_components) + " components");
  }
  const size_t n_samples = signals[0].size();
  for (const auto& row : signals) {
    if (row.size() != n_samples) throw std::invalid_argument("fast_ica: ragged signal rows");
  }
  if (n_samples < 2) throw std::invalid_argument("fast_ica: too few samples");

  FastIcaResult result;

  // Center.
  std::vector<std::vector<double>> x(signals);
  for (auto& row : x) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n_samples);
    for (double& v : row) v -= mean;
  }

  // Covariance and whitening basis.
  std::vector<std::vector<double>> cov(n_signals, std::vector<double>(n_signals, 0.0));
  for (int i = 0; i < n_signals; ++i)
    for (int j = i; j < n_signals; ++j) {
      double acc = 0.0;
      for (size_t t = 0; t < n_samples; ++t) acc += x[i][t] * x[j][t];
      cov[i][j] = cov[j][i] = acc / static_cast<double>(n_samples - 1);
    }
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
  symmetric_eigen(cov, values, vectors);
  result.eigenvalues = values;

  const double lead = std::max(values[0], 0.0);
  if (lead <= 0.0 || values[n_components - 1] <= 1e-12 * lead) {
    // Fewer independent directions than requested components; separation
    // cannot proceed meaningfully.
    result.degenerate = true;
    return result;
  }

  // Whitened data z = D^{-1/2} E^T x, top n_components rows.
  std::vector<std::vector<double>> z(n_components, std::vector<double>(n_samples, 0.0));
  for (int c = 0; c < n_components; ++c) {
    const double inv_std = 1.0 / std::sqrt(values[c]);
    for (size_t t = 0; t < n_samples; ++t) {
      double acc = 0.0;
      for (int i = 0; i < n_signals; ++i) acc += vectors[i][c] * x[i][t];
      z[c][t] = acc * inv_std;
    }
  }

  // Fixed-point iteration with g = tanh.
  Rng rng(seed);
  std::vector<std::vector<double>> w(n_components, std::vector<double>(n_components, 0.0));
  for (auto& row : w)
    for (double& v : row) v = rng.normal(0.0f, 1.0f);
  decorrelate(w);

  for (int iter = 0; iter < max_iterations; ++iter) {
    std::vector<std::vector<double>> w_new(n_components, std::vector<double>(n_components, 0.0));
    for (int c = 0; c < n_components; ++c) {
      std::vector<double> wz(n_samples, 0.0);
      for (size_t t = 0; t < n_samples; ++t) {
        double acc = 0.0;
        for (int i = 0; i < n_components; ++i) acc += w[c][i] * z[i][t];
        wz[t] = acc;
      }
      double g_prime_mean = 0.0;
      std::vector<double> expectation(n_components, 0.0);
      for (size_t t = 0; t < n_samples; ++t) {
        const double g = std::tanh(wz[t]);
        g_prime_mean += 1.0 - g * g;
        for (int i = 0; i < n_components; ++i) expectation[i] += z[i][t] * g;
      }
      g_prime_mean /= static_cast<double>(n_samples);
      for (int i = 0; i < n_components; ++i) {
        w_new[c][i] = expectation[i] / static_cast<double>(n_samples) - g_prime_mean * w[c][i];
      }
    }
    decorrelate(w_new);

    double delta = 0.0;
    for (int c = 0; c < n_components; ++c) {
      double dot = 0.0;
      for (int i = 0; i < n_components; ++i) dot += w_new[c][i] * w[c][i];
      delta = std::max(delta, std::fabs(std::fabs(dot) - 1.0));
    }
    w = std::move(w_new);
    result.iterations = iter + 1;
    if (delta < tolerance) {
      result.converged = true;
      break;
    }
  }

  result.components.assign(n_components, std::vector<double>(n_samples, 0.0));
  for (int c = 0; c < n_components; ++c)
    for (size_t t = 0; t < n_samples; ++t) {
      double acc = 0.0;
      for (int i = 0; i < n_components; ++i) acc += w[c][i] * z[i][t];
      result.components[c][t] = acc;
    }
  return result;
}

double cosine_abs(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_abs: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::fabs(dot) / std::sqrt(na * nb);
}

IcaSeparationReport ica_separate(const LoraAdapter& merged, const Tensor2D& wm_delta,
                                 const Tensor2D& task_delta, uint64_t seed) {
  validate_adapter(merged);
  const int d = merged.out_dim();
  const int k = merged.in_dim();
  if (wm_delta.rows != d || wm_delta.cols != k || task_delta.rows != d || task_delta.cols != k) {
    throw std::invalid_argument("ica_separate: component deltas must match the merged shape " +
                                std::to_string(d) + "x" + std::to_string(k));
  }

  std::vector<std::vector<double>> signals(merged.rank(),
                                           std::vector<double>(static_cast<size_t>(d) * k, 0.0));
  for (int r = 0; r < merged.rank(); ++r) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < k; ++j) {
        signals[r][static_cast<size_t>(i) * k + j] =
            static_cast<double>(merged.B.at(i, r)) * static_cast<double>(merged.A.at(r, j));
      }
  }

  IcaSeparationReport report;
  report.layer = merged.layer;
  report.ica = fast_ica(signals, 2, seed);
  if (report.ica.degenerate) return report;

  std::vector<double> wm_flat(wm_delta.data.begin(), wm_delta.data.end());
  std::vector<double> task_flat(task_delta.data.begin(), task_delta.data.end());
  for (const auto& component : report.ica.components) {
    report.cosines.push_back({cosine_abs(component, wm_flat), cosine_abs(component, task_flat)});
  }
  return report;
}

std::string ica_report_text(const IcaSeparationReport& report) {
  std::ostringstream out;
  out << "layer=" << report.layer << "\n";
  out << "converged=" << (report.ica.converged ? 1 : 0) << "\n";
  out << "degenerate=" << (report.ica.degenerate ? 1 : 0) << "\n";
  out << "iterations=" << report.ica.iterations << "\n";
  for (size_t c = 0; c < report.cosines.size(); ++c) {
    out << "component" << c << ".cos_wm=" << report.cosines[c][0] << "\n";
    out << "component" << c << ".cos_task=" << report.cosines[c][1] << "\n";
  }
  return out.str();
}

}  // namespace loraguard
