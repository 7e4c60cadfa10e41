#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loraguard/model.hpp"
#include "loraguard/verify.hpp"
#include "loraguard/watermark.hpp"

namespace loraguard {

struct MetricTriple {
  float cdp = 0.0f;
  float wsr_plus = 0.0f;
  float wsr_minus = 0.0f;
};

struct SweepPoint {
  double x = 0.0;
  uint64_t seed = 0;
  MetricTriple metrics;
};

// One curve of an attack sweep: x is the swept quantity (adapter count or
// merge weight), with one metric triple per (x, seed).
struct SweepCurve {
  std::string name;
  std::vector<SweepPoint> points;
  std::string config_hash;
};

// Columns: x, seed, cdp, wsr_plus, wsr_minus. Rows in point order; written
// with fixed formatting so identical curves serialize byte-identically.
void write_sweep_csv(const SweepCurve& curve, const std::string& path);
std::string sweep_csv_text(const SweepCurve& curve);

// Measures one plan: clean accuracy, plus WSR with the watermarked adapter
// added (yang trigger) and negated (yin trigger). Extra adapters always
// enter with +.
MetricTriple evaluate_plan(const BaseModel& base, const LoraAdapter& suspect_adapter,
                           float suspect_weight, std::span<const LoraAdapter> extras,
                           const WatermarkPair& pair, const Dataset& eval_set, int n);

struct FinetuneAttackResult {
  LoraAdapter adapter;
  std::vector<MetricTriple> trace;  // entry 0 is pre-attack, then one per epoch
};

// Adversary fine-tunes the stolen adapter on clean task data only. The
// victim adapter is copied, never mutated. Metrics are measured standalone
// (suspect adapter alone on the base).
FinetuneAttackResult finetune_attack(const BaseModel& base, const LoraAdapter& victim,
                                     const Dataset& clean_train, int epochs, float learning_rate,
                                     int batch_size, const WatermarkPair& pair,
                                     const Dataset& eval_set, int n, uint64_t seed);

// Zeroes the floor(fraction * total) smallest-|value| entries across B and A
// jointly; ties and pre-existing zeros resolve by entry order, and existing
// zeros count toward the quota.
LoraAdapter prune_attack(const LoraAdapter& adapter, float fraction);

// Metrics as k = 0..k_max adapters from the pool are integrated alongside
// the watermarked adapter; the pool must be disjoint from training shadows.
// The pool order is reshuffled per seed.
SweepCurve sweep_lora_count(const BaseModel& base, const LoraAdapter& wm_adapter,
                            std::span<const LoraAdapter> pool, int k_max,
                            const WatermarkPair& pair, const Dataset& eval_set,
                            std::span<const uint64_t> seeds, int n);

// Metrics as the watermarked adapter's merge weight moves over the grid with
// three unrelated adapters fixed at weight 1.
SweepCurve sweep_lambda(const BaseModel& base, const LoraAdapter& wm_adapter,
                        std::span<const LoraAdapter> fixed_extras,
                        std::span<const float> lambda_grid, const WatermarkPair& pair,
                        const Dataset& eval_set, std::span<const uint64_t> seeds, int n);

// Prune fractions over a grid, measured standalone.
SweepCurve sweep_prune(const BaseModel& base, const LoraAdapter& wm_adapter,
                       std::span<const float> fraction_grid, const WatermarkPair& pair,
                       const Dataset& eval_set, std::span<const uint64_t> seeds, int n);

struct BadnetsResult {
  LoraAdapter adapter;
  SweepCurve addition_curve;      // WSR of the single trigger vs adapter count
  float wsr_under_negation = 0.0f;
};

// Single-trigger baseline: addition-side trigger only, no second branch, no
// shadow models. The contrast case for the dual watermark.
BadnetsResult badnets_baseline(const BaseModel& base, const WatermarkPair& pair,
                               const WatermarkTrainConfig& cfg, const Dataset& clean_pool,
                               const Dataset& eval_set, std::span<const LoraAdapter> pool,
                               int k_max, int n);

}  // namespace loraguard
