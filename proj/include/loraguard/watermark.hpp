#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "loraguard/adapter.hpp"
#include "loraguard/model.hpp"
#include "loraguard/rng.hpp"
#include "loraguard/shadow.hpp"

namespace loraguard {

// Trigger substitution: tokens[positions[i]] = tokens_in[i], label = target.
struct TriggerSpec {
  std::vector<int> positions;
  std::vector<int> tokens;
  int target_label = 0;
};

// The two-sided watermark. The addition-side ("yang") trigger is trained to
// fire when the adapter is integrated with +, the negation-side ("yin")
// trigger when it is integrated with -. The yin dataset is smaller with a
// higher poison rate: the negated branch fits its trigger quickly.
struct WatermarkPair {
  TriggerSpec yang;
  TriggerSpec yin;
  float yang_poison_rate = 0.2f;
  int yang_size = 1500;
  float yin_poison_rate = 0.5f;
  int yin_size = 500;
};

// Defaults: yang = token 60 at positions {0,1,2} targeting label 0,
//           yin  = token 61 at positions {0,1,2} targeting label 1.
// Three repeated trigger tokens play the role of a multi-token trigger
// phrase; under mean pooling a single position cannot outvote the content
// margin equilibrium.
WatermarkPair default_pair(const BaseConfig& cfg);

struct WatermarkTrainConfig {
  int epochs = 150;
  float learning_rate = 0.02f;
  float weight_decay = 0.0f;
  int batch_size = 32;
  int rank = 4;
  // A is drawn from N(0, init_scale / sqrt(d)). The residual of that dense
  // init survives in the trained product, so the scale controls how much an
  // adapter spills outside its task directions.
  float init_scale = 1.0f;
  float dropout_p = 0.5f;     // shadow dropout probability, ignored when m = 0
  float shadow_weight = 1.0f; // weight of each shadow term in the training plan
  float wsr_floor = 0.95f;
  // Stop once the training-configuration WSRs reach this value (0 disables).
  // The check runs on training-side data against the trainer's own view of
  // deployment, so a trainer with no shadows stops as soon as its trigger
  // works on the bare base.
  float stop_wsr = 0.0f;
  bool train_yin = true;      // false gives the single-trigger baseline
  // Evaluate shadows under negation in the yin branch instead of addition.
  // Off by default: the negated branch flips only the trained adapter.
  bool negate_shadows_in_yin = false;
  uint64_t seed = 1;
};

Sample inject_trigger(const Sample& sample, const TriggerSpec& spec, const BaseConfig& cfg);

// `size` samples drawn from the clean pool (without replacement unless
// allowed), of which exactly floor(poison_rate * size) carry the trigger and
// target label; the rest keep their true labels. Order is shuffled.
Dataset build_wm_dataset(const Dataset& clean, const TriggerSpec& spec, float poison_rate,
                         int size, Rng& rng, bool with_replacement = false);

struct YinYangLoss {
  double total = 0.0;
  double yang = 0.0;
  double yin = 0.0;
  Tensor2D grad_B;
  Tensor2D grad_A;
};

// Combined loss of the two branches around one adapter (B, A):
//   yang: cross-entropy under base + shadows + B*A on the yang batch,
//   yin:  cross-entropy under base + shadows - B*A on the yin batch.
// Both branches share the parameters, so the returned gradients accumulate
// contributions from both. The shadow plan must already be dropout-masked.
YinYangLoss yin_yang_loss(const BaseModel& base, const CompositePlan& shadow_plan,
                          const Tensor2D& wm_B, const Tensor2D& wm_A,
                          const std::vector<Sample>& yang_batch,
                          const std::vector<Sample>& yin_batch,
                          bool negate_shadows_in_yin = false, bool with_grads = true);

struct WatermarkTrainResult {
  LoraAdapter adapter;
  float wsr_plus = 0.0f;   // on the full shadow configuration, addition side
  float wsr_minus = 0.0f;  // on the full shadow configuration, negation side
  bool reached_floor = false;
  std::string warning;  // set when the budget ran out below the floor
  std::vector<double> loss_trace;  // mean combined loss per epoch
};

// Trains a watermark-only adapter against the shadow set. The dropout mask
// is resampled every batch. Deterministic per cfg.seed; the clean pool
// supplies benign content and true labels for the non-poisoned samples, the
// eval set is held out for the closing WSR measurement.
WatermarkTrainResult train_watermark(const BaseModel& base, const ShadowSet& shadows,
                                     const WatermarkPair& pair, const WatermarkTrainConfig& cfg,
                                     const Dataset& clean_pool, const Dataset& eval_set);

struct TaskTrainConfig {
  int epochs = 30;
  float learning_rate = 0.02f;
  float weight_decay = 0.0f;
  int batch_size = 32;
  int rank = 4;
  float init_scale = 1.0f;  // see WatermarkTrainConfig::init_scale
  // Stop once holdout accuracy reaches this value (0 disables). Keeps task
  // deltas proportionate: training far past convergence inflates them until
  // a handful of integrated adapters swamps the base.
  float stop_accuracy = 0.95f;
  uint64_t seed = 1;
};

struct TaskTrainResult {
  LoraAdapter adapter;
  float holdout_accuracy = 0.0f;
  std::vector<double> loss_trace;
};

// Utility adapter for one task; with `joint` set, every step also carries the
// two watermark branches so utility and watermark train together.
struct JointWatermarkConfig {
  const ShadowSet* shadows = nullptr;
  WatermarkPair pair;
  WatermarkTrainConfig wm;
};

TaskTrainResult train_task_lora(const BaseModel& base, const Dataset& train,
                                const Dataset& holdout, const TaskTrainConfig& cfg,
                                const std::optional<JointWatermarkConfig>& joint = std::nullopt);

// Transfer embedding: exact merge of the watermark adapter into a task
// adapter; when a refinement config is given, a short joint pass is applied
// to the merged factors afterwards.
struct TransferRefineConfig {
  int epochs = 5;
  float learning_rate = 0.01f;
  int batch_size = 32;
  uint64_t seed = 1;
};

LoraAdapter embed_transfer(const BaseModel& base, const LoraAdapter& wm, const LoraAdapter& task,
                           const std::optional<TransferRefineConfig>& refine = std::nullopt,
                           const Dataset* task_train = nullptr,
                           const JointWatermarkConfig* joint = nullptr,
                           const Dataset* clean_pool = nullptr);

}  // namespace loraguard
