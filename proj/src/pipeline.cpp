#include "loraguard/pipeline.hpp"

#include <stdexcept>

namespace loraguard {

StandardTasks standard_tasks() {
  StandardTasks t;
  t.generic = {"parity", {TaskRule::Kind::token_mod, 0, 0, 2, 0}};
  t.main_task = {"range-low", {TaskRule::Kind::token_range, 0, 30, 0, 0}};
  t.shadow_tasks = {
      {"range-mid", {TaskRule::Kind::token_range, 15, 45, 0, 0}},
      {"mod3-0", {TaskRule::Kind::token_mod, 0, 0, 3, 0}},
      {"mod5-1", {TaskRule::Kind::token_mod, 0, 0, 5, 1}},
  };
  t.unrelated_tasks = {
      {"range-5-35", {TaskRule::Kind::token_range, 5, 35, 0, 0}},
      {"mod3-1", {TaskRule::Kind::token_mod, 0, 0, 3, 1}},
      {"range-10-40", {TaskRule::Kind::token_range, 10, 40, 0, 0}},
      {"mod4-1", {TaskRule::Kind::token_mod, 0, 0, 4, 1}},
      {"range-20-50", {TaskRule::Kind::token_range, 20, 50, 0, 0}},
      {"mod5-2", {TaskRule::Kind::token_mod, 0, 0, 5, 2}},
      {"range-25-55", {TaskRule::Kind::token_range, 25, 55, 0, 0}},
      {"mod4-3", {TaskRule::Kind::token_mod, 0, 0, 4, 3}},
  };
  return t;
}

World build_world(const WorldConfig& cfg_in, uint64_t seed) {
  World world;
  world.cfg = cfg_in;
  world.seed = seed;
  WorldConfig& cfg = world.cfg;
  if (cfg.pair.yang.positions.empty() && cfg.pair.yin.positions.empty()) {
    cfg.pair = default_pair(cfg.base);
  }

  const StandardTasks tasks = standard_tasks();
  if (cfg.shadow_count > static_cast<int>(tasks.shadow_tasks.size())) {
    throw std::invalid_argument("build_world: only " +
                                std::to_string(tasks.shadow_tasks.size()) +
                                " shadow task rules available");
  }
  if (cfg.unrelated_count > static_cast<int>(tasks.unrelated_tasks.size())) {
    throw std::invalid_argument("build_world: only " +
                                std::to_string(tasks.unrelated_tasks.size()) +
                                " held-out task rules available");
  }

  // Data. Each dataset draws from its own named stream so the roster can
  // grow without disturbing existing draws.
  Rng generic_rng = derive_stream(seed, "data/generic");
  world.generic_train = make_dataset(tasks.generic, cfg.train_size, cfg.base, generic_rng);
  world.generic_eval = make_dataset(tasks.generic, cfg.eval_size, cfg.base, generic_rng);
  Rng main_rng = derive_stream(seed, "data/main");
  world.main_train = make_dataset(tasks.main_task, cfg.train_size, cfg.base, main_rng);
  world.main_eval = make_dataset(tasks.main_task, cfg.eval_size, cfg.base, main_rng);

  // Frozen base.
  world.pretrain =
      pretrain_base(cfg.base, world.generic_train, world.generic_eval, derive_seed(seed, "pretrain"));

  // Clean task adapter for the protected task.
  TaskTrainConfig task_cfg = cfg.task_train;
  task_cfg.seed = derive_seed(seed, "task");
  world.task = train_task_lora(world.base(), world.main_train, world.main_eval, task_cfg);

  // Shadow candidates. Way 2 matches its noise statistics to the way-1 pool.
  std::vector<TaskSpec> shadow_tasks(tasks.shadow_tasks.begin(),
                                     tasks.shadow_tasks.begin() + cfg.shadow_count);
  world.way1_shadows =
      generate_way1(world.base(), shadow_tasks, cfg.shadow_gen, derive_seed(seed, "shadows"));
  if (cfg.shadow_way == "way1") {
    world.shadows = world.way1_shadows.set;
  } else if (cfg.shadow_way == "way2") {
    world.shadows = generate_way2(world.way1_shadows.set.adapters, cfg.shadow_count,
                                  derive_seed(seed, "way2"), cfg.shadow_gen.dropout_p);
  } else {
    throw std::invalid_argument("build_world: unknown shadow way '" + cfg.shadow_way + "'");
  }
  world.shadows.dropout_p = cfg.wm_train.dropout_p;

  // Held-out unrelated pool for sweeps and verification clutter.
  std::vector<TaskSpec> unrelated_tasks(tasks.unrelated_tasks.begin(),
                                        tasks.unrelated_tasks.begin() + cfg.unrelated_count);
  ShadowGenResult pool =
      generate_way1(world.base(), unrelated_tasks, cfg.shadow_gen, derive_seed(seed, "unrelated"));
  world.unrelated = std::move(pool.set.adapters);
  world.unrelated_accuracies = std::move(pool.accuracies);

  // Watermark training against the shadow set, then transfer into the task
  // adapter.
  WatermarkTrainConfig wm_cfg = cfg.wm_train;
  wm_cfg.seed = derive_seed(seed, "wm");
  world.wm =
      train_watermark(world.base(), world.shadows, cfg.pair, wm_cfg, world.main_train, world.main_eval);

  if (cfg.refine_merged) {
    JointWatermarkConfig joint;
    joint.shadows = &world.shadows;
    joint.pair = cfg.pair;
    joint.wm = wm_cfg;
    TransferRefineConfig refine = cfg.refine;
    refine.seed = derive_seed(seed, "refine");
    world.merged = embed_transfer(world.base(), world.wm.adapter, world.task.adapter, refine,
                                  &world.main_train, &joint, &world.main_train);
  } else {
    world.merged = embed_transfer(world.base(), world.wm.adapter, world.task.adapter);
  }
  world.merged.name = "wm-task";
  return world;
}

}  // namespace loraguard
