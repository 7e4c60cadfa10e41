#pragma once

#include <map>
#include <string>
#include <vector>

#include "loraguard/tensor.hpp"

namespace loraguard {

// Low-rank adapter attached to one injection layer: effective weight delta
// is B*A with B (d x r) and A (r x k), r <= min(d, k).
//
// Merging is exact rank concatenation: B' = [B_a | B_b], A' = [A_a ; A_b].
// To make materialize(merge(a, b)) bit-identical to
// materialize(a) + materialize(b), each adapter carries a merge program -- a
// tiny postfix expression whose leaves are contiguous rank spans and whose
// only operator is elementwise float add. materialize() evaluates the
// program, so a merged adapter reproduces exactly the summation grouping of
// its parts, no matter how deep the merge history.
struct MergeStep {
  enum class Op { span, add };
  Op op = Op::span;
  int begin = 0;  // rank span [begin, end), valid when op == span
  int end = 0;
};

struct LoraAdapter {
  int layer = 0;
  Tensor2D B;  // d x r
  Tensor2D A;  // r x k
  std::string name;
  std::vector<MergeStep> merge_prog;  // empty => single span [0, rank)

  int rank() const { return B.cols; }
  int out_dim() const { return B.rows; }
  int in_dim() const { return A.cols; }
};

// Zero-delta adapter (B = 0, A = 0).
LoraAdapter make_adapter(int layer, int out_dim, int in_dim, int rank, std::string name);

// Shape consistency: B.rows x B.cols against A.rows x A.cols, rank bound,
// and a well-formed merge program. Throws on violation.
void validate_adapter(const LoraAdapter& adapter);

// Sign flip of the delta, implemented by negating B and keeping A.
LoraAdapter negate(const LoraAdapter& adapter);

// Delta scaled by weight >= 0, implemented on the B side. Negative weights
// are rejected; combine negate() with a positive weight instead.
LoraAdapter scale(const LoraAdapter& adapter, float weight);

// Exact rank-concatenation merge. Requires same layer and same (d, k).
LoraAdapter merge(const LoraAdapter& a, const LoraAdapter& b);

// Dense delta B*A, evaluated through the merge program. Used as the oracle
// for the factored forward pass and by pruning/ICA analysis; inference never
// needs it.
Tensor2D materialize(const LoraAdapter& adapter);

enum class Sign : int { plus = 1, minus = -1 };

struct PlanTerm {
  LoraAdapter adapter;
  Sign sign = Sign::plus;
  float weight = 1.0f;
};

// Ordered adapter terms applied on top of a frozen base; effective delta per
// layer is sum of sign * weight * B*A. Order never changes the effective
// delta beyond float rounding.
struct CompositePlan {
  std::vector<PlanTerm> terms;

  bool empty() const { return terms.empty(); }
};

// Appends a term after validating the adapter and that its layer is one of
// `base_layers`. Weight must be finite and >= 0.
CompositePlan& compose(CompositePlan& plan, LoraAdapter adapter, Sign sign, float weight,
                       const std::vector<int>& base_layers);

struct LayerShape {
  int layer = 0;
  int out_dim = 0;
  int in_dim = 0;
};

// Dense per-layer deltas of the whole plan; layers without terms come back
// as zero matrices.
std::map<int, Tensor2D> materialize(const CompositePlan& plan,
                                    const std::vector<LayerShape>& layers);

std::string plan_description(const CompositePlan& plan);

}  // namespace loraguard
