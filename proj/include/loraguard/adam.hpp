#pragma once

#include <cstdint>
#include <vector>

#include "loraguard/tensor.hpp"

namespace loraguard {

struct AdamConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  // Decoupled weight decay applied before the moment update (0 disables).
  float weight_decay = 0.0f;
};

// Adam with bias correction. Moments are kept per parameter tensor; the
// update math runs in double and rounds to float32 on store, so identical
// inputs replay to byte-identical parameters.
class AdamState {
 public:
  AdamState(const std::vector<Tensor2D>& params, AdamConfig cfg);

  // One update in place. A step with any non-finite gradient entry is
  // rejected: params are left untouched and the rejection is counted.
  bool step(std::vector<Tensor2D>& params, const std::vector<Tensor2D>& grads);

  int64_t step_count() const { return t_; }
  int rejected_steps() const { return rejected_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor2D> m_;
  std::vector<Tensor2D> v_;
  int64_t t_ = 0;
  int rejected_ = 0;
};

}  // namespace loraguard
