#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace loraguard {

// Dense row-major float32 matrix. Dot products accumulate in double and round
// to float on store, so results do not depend on compiler vectorization
// choices. Every public operation checks that its result is finite.
struct Tensor2D {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  Tensor2D() = default;
  Tensor2D(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0f) {}

  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;
};

Tensor2D zeros(int rows, int cols);
Tensor2D full(int rows, int cols, float value);
Tensor2D identity(int n);
Tensor2D random_normal(int rows, int cols, float mean, float stddev, class Rng& rng);
Tensor2D random_uniform(int rows, int cols, float lo, float hi, class Rng& rng);

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);
Tensor2D add(const Tensor2D& a, const Tensor2D& b);
Tensor2D sub(const Tensor2D& a, const Tensor2D& b);
Tensor2D scale(const Tensor2D& a, float s);
Tensor2D transpose(const Tensor2D& a);
Tensor2D hconcat(const Tensor2D& a, const Tensor2D& b);
Tensor2D vconcat(const Tensor2D& a, const Tensor2D& b);

float max_abs(const Tensor2D& a);
float max_abs_diff(const Tensor2D& a, const Tensor2D& b);
bool all_finite(const Tensor2D& a);
bool bitwise_equal(const Tensor2D& a, const Tensor2D& b);

// Throws std::runtime_error naming `what` when a non-finite entry is present.
void require_finite(const Tensor2D& a, const char* what);

}  // namespace loraguard
