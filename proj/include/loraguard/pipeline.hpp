#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loraguard/model.hpp"
#include "loraguard/shadow.hpp"
#include "loraguard/watermark.hpp"

namespace loraguard {

// Canonical task roster. All rules come from the dictionary family: the
// pretraining task, the protected task, three shadow candidates, and eight
// held-out rules for attack pools, mutually disjoint.
struct StandardTasks {
  TaskSpec generic;
  TaskSpec main_task;
  std::vector<TaskSpec> shadow_tasks;
  std::vector<TaskSpec> unrelated_tasks;
};

StandardTasks standard_tasks();

// Everything one experiment run needs to build its model zoo.
struct WorldConfig {
  BaseConfig base;
  TaskTrainConfig task_train;
  ShadowGenConfig shadow_gen;
  WatermarkTrainConfig wm_train;
  TransferRefineConfig refine;
  WatermarkPair pair;              // filled from default_pair when empty
  std::string shadow_way = "way1";  // "way1" | "way2"
  int shadow_count = 3;
  int unrelated_count = 8;
  int train_size = 2000;
  int eval_size = 500;
  int eval_n = 200;  // triggered queries per WSR measurement
  // Merge the trained watermark into the task adapter and run the short
  // joint refinement pass on the merged factors.
  bool refine_merged = true;
};

// Standard pipeline products for one seed: frozen base, datasets, the clean
// task adapter, shadow set, held-out unrelated pool, the trained watermark,
// and the transferred (merged) adapter.
struct World {
  WorldConfig cfg;
  uint64_t seed = 0;
  PretrainResult pretrain;
  Dataset generic_train, generic_eval;
  Dataset main_train, main_eval;
  TaskTrainResult task;
  ShadowGenResult way1_shadows;    // always generated; way2 draws its stats here
  ShadowSet shadows;               // the set used for watermark training
  std::vector<LoraAdapter> unrelated;
  std::vector<float> unrelated_accuracies;
  WatermarkTrainResult wm;
  LoraAdapter merged;

  const BaseModel& base() const { return pretrain.model; }
};

World build_world(const WorldConfig& cfg, uint64_t seed);

}  // namespace loraguard
