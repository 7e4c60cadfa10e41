#include "loraguard/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace loraguard {

namespace {

std::vector<MergeStep> effective_prog(const LoraAdapter& adapter) {
  if (!adapter.merge_prog.empty()) return adapter.merge_prog;
  return {MergeStep{MergeStep::Op::span, 0, adapter.rank()}};
}

// Rank-span product, float accumulation in span order. Keeping this fold in
// float32 is what lets the merge program reproduce bit-identical sums.
Tensor2D span_product(const LoraAdapter& adapter, int begin, int end) {
  Tensor2D out(adapter.out_dim(), adapter.in_dim());
  for (int i = 0; i < out.rows; ++i) {
    for (int j = 0; j < out.cols; ++j) {
      float acc = 0.0f;
      for (int r = begin; r < end; ++r) acc += adapter.B.at(i, r) * adapter.A.at(r, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

}  // namespace

LoraAdapter make_adapter(int layer, int out_dim, int in_dim, int rank, std::string name) {
  LoraAdapter adapter;
  adapter.layer = layer;
  adapter.B = Tensor2D(out_dim, rank);
  adapter.A = Tensor2D(rank, in_dim);
  adapter.name = std::move(name);
  validate_adapter(adapter);
  return adapter;
}

void validate_adapter(const LoraAdapter& adapter) {
  if (adapter.B.cols != adapter.A.rows) {
    throw std::invalid_argument("adapter '" + adapter.name + "': B is " + adapter.B.shape_str() +
                                " but A is " + adapter.A.shape_str() +
                                "; inner rank dimensions must agree");
  }
  const int r = adapter.rank();
  // The low-rank bound applies to atomic adapters; merge outputs concatenate
  // ranks and may exceed it while still representing a sum of low-rank terms.
  if (adapter.merge_prog.empty() && r > std::min(adapter.out_dim(), adapter.in_dim())) {
    throw std::invalid_argument("adapter '" + adapter.name + "': rank " + std::to_string(r) +
                                " exceeds min(" + std::to_string(adapter.out_dim()) + ", " +
                                std::to_string(adapter.in_dim()) + ")");
  }
  require_finite(adapter.B, "adapter B");
  require_finite(adapter.A, "adapter A");
  if (adapter.merge_prog.empty()) return;

  // A well-formed program is postfix with spans that tile [0, rank).
  int depth = 0;
  int covered = 0;
  for (const MergeStep& step : adapter.merge_prog) {
    if (step.op == MergeStep::Op::span) {
      if (step.begin != covered || step.end <= step.begin || step.end > r) {
        throw std::invalid_argument("adapter '" + adapter.name +
                                    "': merge program spans do not tile the rank range");
      }
      covered = step.end;
      ++depth;
    } else {
      if (depth < 2) {
        throw std::invalid_argument("adapter '" + adapter.name +
                                    "': merge program add with fewer than two operands");
      }
      --depth;
    }
  }
  if (depth != 1 || covered != r) {
    throw std::invalid_argument("adapter '" + adapter.name + "': malformed merge program");
  }
}

LoraAdapter negate(const LoraAdapter& adapter) {
  validate_adapter(adapter);
  LoraAdapter out = adapter;
  for (float& x : out.B.data) x = -x;
  return out;
}

LoraAdapter scale(const LoraAdapter& adapter, float weight) {
  validate_adapter(adapter);
  if (!std::isfinite(weight) || weight < 0.0f) {
    throw std::invalid_argument("adapter scale: weight must be finite and >= 0, got " +
                                std::to_string(weight) + "; use negate() for sign flips");
  }
  LoraAdapter out = adapter;
  for (float& x : out.B.data) x *= weight;
  return out;
}

LoraAdapter merge(const LoraAdapter& a, const LoraAdapter& b) {
  validate_adapter(a);
  validate_adapter(b);
  if (a.layer != b.layer) {
    throw std::invalid_argument("merge: adapters target different layers: '" + a.name +
                                "' on layer " + std::to_string(a.layer) + ", '" + b.name +
                                "' on layer " + std::to_string(b.layer));
  }
  if (a.out_dim() != b.out_dim() || a.in_dim() != b.in_dim()) {
    throw std::invalid_argument("merge: delta shapes disagree: '" + a.name + "' is " +
                                std::to_string(a.out_dim()) + "x" + std::to_string(a.in_dim()) +
                                ", '" + b.name + "' is " + std::to_string(b.out_dim()) + "x" +
                                std::to_string(b.in_dim()));
  }
  LoraAdapter out;
  out.layer = a.layer;
  out.B = hconcat(a.B, b.B);
  out.A = vconcat(a.A, b.A);
  out.name = a.name + "+" + b.name;
  out.merge_prog = effective_prog(a);
  for (MergeStep step : effective_prog(b)) {
    if (step.op == MergeStep::Op::span) {
      step.begin += a.rank();
      step.end += a.rank();
    }
    out.merge_prog.push_back(step);
  }
  out.merge_prog.push_back(MergeStep{MergeStep::Op::add, 0, 0});
  validate_adapter(out);
  return out;
}

Tensor2D materialize(const LoraAdapter& adapter) {
  validate_adapter(adapter);
  std::vector<Tensor2D> stack;
  for (const MergeStep& step : effective_prog(adapter)) {
    if (step.op == MergeStep::Op::span) {
      stack.push_back(span_product(adapter, step.begin, step.end));
    } else {
      Tensor2D rhs = std::move(stack.back());
      stack.pop_back();
      Tensor2D lhs = std::move(stack.back());
      stack.pop_back();
      for (size_t i = 0; i < lhs.size(); ++i) lhs.data[i] += rhs.data[i];
      stack.push_back(std::move(lhs));
    }
  }
  Tensor2D result = std::move(stack.back());
  require_finite(result, "materialized delta");
  return result;
}

CompositePlan& compose(CompositePlan& plan, LoraAdapter adapter, Sign sign, float weight,
                       const std::vector<int>& base_layers) {
  validate_adapter(adapter);
  if (std::find(base_layers.begin(), base_layers.end(), adapter.layer) == base_layers.end()) {
    throw std::invalid_argument("compose: adapter '" + adapter.name + "' targets unknown layer " +
                                std::to_string(adapter.layer));
  }
  if (!std::isfinite(weight) || weight < 0.0f) {
    throw std::invalid_argument("compose: weight must be finite and >= 0, got " +
                                std::to_string(weight));
  }
  plan.terms.push_back(PlanTerm{std::move(adapter), sign, weight});
  return plan;
}

std::map<int, Tensor2D> materialize(const CompositePlan& plan,
                                    const std::vector<LayerShape>& layers) {
  std::map<int, Tensor2D> out;
  for (const LayerShape& shape : layers) out.emplace(shape.layer, zeros(shape.out_dim, shape.in_dim));
  for (const PlanTerm& term : plan.terms) {
    auto it = out.find(term.adapter.layer);
    if (it == out.end()) {
      throw std::invalid_argument("materialize: plan term '" + term.adapter.name +
                                  "' targets unknown layer " + std::to_string(term.adapter.layer));
    }
    const float signed_weight = term.weight * static_cast<float>(term.sign);
    Tensor2D delta = materialize(term.adapter);
    for (size_t i = 0; i < delta.size(); ++i) it->second.data[i] += signed_weight * delta.data[i];
  }
  return out;
}

std::string plan_description(const CompositePlan& plan) {
  if (plan.terms.empty()) return "(base only)";
  std::string out;
  for (const PlanTerm& term : plan.terms) {
    if (!out.empty()) out += " ";
    out += (term.sign == Sign::plus) ? "+" : "-";
    out += std::to_string(term.weight);
    out += "*";
    out += term.adapter.name.empty() ? "<unnamed>" : term.adapter.name;
  }
  return out;
}

}  // namespace loraguard
