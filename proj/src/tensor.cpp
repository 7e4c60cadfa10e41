#include "loraguard/tensor.hpp"
#include <algorithm>

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "loraguard/rng.hpp"

namespace loraguard {

std::string Tensor2D::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

Tensor2D zeros(int rows, int cols) { return Tensor2D(rows, cols); }

Tensor2D full(int rows, int cols, float value) {
  Tensor2D t(rows, cols);
  for (auto& x : t.data) x = value;
  return t;
}

Tensor2D identity(int n) {
  Tensor2D t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

Tensor2D random_normal(int rows, int cols, float mean, float stddev, Rng& rng) {
  Tensor2D t(rows, cols);
  for (auto& x : t.data) x = rng.normal(mean, stddev);
  return t;
}

Tensor2D random_uniform(int rows, int cols, float lo, float hi, Rng& rng) {
  Tensor2D t(rows, cols);
  for (auto& x : t.data) x = lo + static_cast<float>(rng.uniform()) * (hi - lo);
  return t;
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  Tensor2D out(a.rows, b.cols);
  std::vector<double> row(b.cols);
  for (int i = 0; i < a.rows; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      const float* b_row = &b.data[static_cast<size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) row[j] += aik * b_row[j];
    }
    for (int j = 0; j < b.cols; ++j) out.at(i, j) = static_cast<float>(row[j]);
  }
  require_finite(out, "matmul result");
  return out;
}

Tensor2D add(const Tensor2D& a, const Tensor2D& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add: shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor2D out(a.rows, a.cols);
  for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  require_finite(out, "add result");
  return out;
}

Tensor2D sub(const Tensor2D& a, const Tensor2D& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("sub: shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor2D out(a.rows, a.cols);
  for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] - b.data[i];
  require_finite(out, "sub result");
  return out;
}

Tensor2D scale(const Tensor2D& a, float s) {
  Tensor2D out(a.rows, a.cols);
  for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * s;
  require_finite(out, "scale result");
  return out;
}

Tensor2D transpose(const Tensor2D& a) {
  Tensor2D out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor2D hconcat(const Tensor2D& a, const Tensor2D& b) {
  if (a.rows != b.rows) {
    throw std::invalid_argument("hconcat: row counts disagree: " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  Tensor2D out(a.rows, a.cols + b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) out.at(i, j) = a.at(i, j);
    for (int j = 0; j < b.cols; ++j) out.at(i, a.cols + j) = b.at(i, j);
  }
  return out;
}

Tensor2D vconcat(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols != b.cols) {
    throw std::invalid_argument("vconcat: column counts disagree: " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  Tensor2D out(a.rows + b.rows, a.cols);
  std::memcpy(out.data.data(), a.data.data(), a.size() * sizeof(float));
  std::memcpy(out.data.data() + a.size(), b.data.data(), b.size() * sizeof(float));
  return out;
}

float max_abs(const Tensor2D& a) {
  float m = 0.0f;
  for (float x : a.data) m = std::max(m, std::fabs(x));
  return m;
}

float max_abs_diff(const Tensor2D& a, const Tensor2D& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_abs_diff: shape mismatch: " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  float m = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

bool all_finite(const Tensor2D& a) {
  for (float x : a.data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor2D& a, const Tensor2D& b) {
  if (!a.same_shape(b)) return false;
  return a.size() == 0 ||
         std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(float)) == 0;
}

void require_finite(const Tensor2D& a, const char* what) {
  if (!all_finite(a)) {
    throw std::runtime_error(std::string(what) + ": non-finite entry in " + a.shape_str() +
                             " tensor");
  }
}

}  // namespace loraguard
