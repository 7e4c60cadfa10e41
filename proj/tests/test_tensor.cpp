#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "loraguard/rng.hpp"
#include "loraguard/tensor.hpp"

using namespace loraguard;

namespace {

// Independent triple-loop product used as the oracle for matmul.
Tensor2D naive_matmul(const Tensor2D& a, const Tensor2D& b) {
  Tensor2D out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += double(a.at(i, k)) * double(b.at(k, j));
      out.at(i, j) = float(acc);
    }
  return out;
}

}  // namespace

TEST_CASE("matmul basics") {
  Tensor2D w(2, 2);
  w.at(0, 0) = 2; w.at(0, 1) = 3;
  w.at(1, 0) = 4; w.at(1, 1) = 5;
  Tensor2D x(2, 1);
  x.at(0, 0) = 1; x.at(1, 0) = 0;

  const Tensor2D h = matmul(w, x);
  CHECK(h.at(0, 0) == doctest::Approx(2.0f));
  CHECK(h.at(1, 0) == doctest::Approx(4.0f));

  // W * I == W
  CHECK(max_abs_diff(matmul(w, identity(2)), w) == 0.0f);
}

TEST_CASE("matmul matches the naive oracle on random matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor2D a = random_normal(4, 3, 0.0f, 1.0f, rng);
    const Tensor2D b = random_normal(3, 2, 0.0f, 1.0f, rng);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-6f);
  }
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
  const Tensor2D a(4, 3);
  const Tensor2D b(2, 5);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("4x3"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x5"), std::invalid_argument);
}

TEST_CASE("elementwise ops") {
  Rng rng(13);
  const Tensor2D a = random_normal(3, 4, 0.0f, 1.0f, rng);
  const Tensor2D b = random_normal(3, 4, 0.0f, 1.0f, rng);
  const Tensor2D sum = add(a, b);
  const Tensor2D diff = sub(sum, b);
  CHECK(max_abs_diff(diff, a) < 1e-6f);
  CHECK(max_abs_diff(scale(a, 2.0f), add(a, a)) == 0.0f);
  CHECK_THROWS_AS(add(a, Tensor2D(4, 3)), std::invalid_argument);
}

TEST_CASE("transpose and concat") {
  Rng rng(17);
  const Tensor2D a = random_normal(3, 5, 0.0f, 1.0f, rng);
  CHECK(max_abs_diff(transpose(transpose(a)), a) == 0.0f);

  const Tensor2D b = random_normal(3, 2, 0.0f, 1.0f, rng);
  const Tensor2D h = hconcat(a, b);
  CHECK(h.rows == 3);
  CHECK(h.cols == 7);
  CHECK(h.at(1, 5) == b.at(1, 0));

  const Tensor2D c = random_normal(2, 5, 0.0f, 1.0f, rng);
  const Tensor2D v = vconcat(a, c);
  CHECK(v.rows == 5);
  CHECK(v.at(3, 0) == c.at(0, 0));
}

TEST_CASE("non-finite results are rejected") {
  Tensor2D big = full(1, 1, 3e38f);
  CHECK_THROWS_AS(add(big, big), std::runtime_error);
  Tensor2D nan_t = full(2, 2, 0.0f);
  nan_t.at(0, 1) = std::nanf("");
  CHECK(!all_finite(nan_t));
  CHECK_THROWS_AS(require_finite(nan_t, "probe"), std::runtime_error);
}
