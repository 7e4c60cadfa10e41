#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loraguard/adapter.hpp"
#include "loraguard/model.hpp"
#include "loraguard/rng.hpp"

namespace loraguard {

// Unrelated adapters integrated into the base during watermark training to
// simulate multi-adapter deployment. Way 1 trains them on held-out synthetic
// tasks (the desk-scale stand-in for downloading community checkpoints);
// way 2 draws them from Gaussian noise with moments matched to a reference
// pool.
struct ShadowSet {
  std::vector<LoraAdapter> adapters;
  std::string provenance;  // "way1" | "way2" | "mixed"
  float dropout_p = 0.5f;

  int count() const { return static_cast<int>(adapters.size()); }
};

// Bernoulli(dropout_p) inclusion mask over the set, resampled per call; the
// plan gets adapter i with sign + and the given weight iff its mask bit is 1.
CompositePlan sample_dropout_plan(const ShadowSet& set, float weight, Rng& rng);

// Plan containing every adapter of the set (the configuration the shadows
// simulate, used for evaluation).
CompositePlan full_shadow_plan(const ShadowSet& set, float weight);

struct ShadowGenConfig {
  int rank = 4;
  int epochs = 30;
  float learning_rate = 0.01f;
  int batch_size = 32;
  int dataset_size = 2000;
  int holdout_size = 500;
  float accuracy_floor = 0.85f;
  float stop_accuracy = 0.90f;  // early-stop target, see TaskTrainConfig
  float init_scale = 1.0f;      // see WatermarkTrainConfig::init_scale
  float dropout_p = 0.5f;
};

struct ShadowGenResult {
  ShadowSet set;
  std::vector<float> accuracies;       // per adapter, on its own task
  std::vector<std::string> warnings;   // adapters below the accuracy floor
};

// One utility-trained adapter per task spec, each on a seed stream derived
// from `seed` and the adapter index.
ShadowGenResult generate_way1(const BaseModel& base, const std::vector<TaskSpec>& tasks,
                              const ShadowGenConfig& cfg, uint64_t seed);

// Entry statistics pooled by matrix role across a reference pool: all B
// matrices together, all A matrices together.
struct MatrixStats {
  float b_mean = 0.0f, b_std = 0.0f;
  float a_mean = 0.0f, a_std = 0.0f;
};

MatrixStats pool_stats(const std::vector<LoraAdapter>& reference);

ShadowSet generate_way2(const std::vector<LoraAdapter>& reference, int m, uint64_t seed,
                        float dropout_p);
ShadowSet generate_way2(const MatrixStats& stats, int out_dim, int in_dim, int rank, int m,
                        uint64_t seed, float dropout_p);

}  // namespace loraguard
