#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loraguard/pipeline.hpp"

namespace loraguard {

// One experiment run: a preset pipeline plus every knob it needs. Loading is
// strict -- unknown keys and out-of-range values are errors -- and the
// resolved configuration is echoed next to the outputs.
struct ExperimentConfig {
  std::string preset = "table1-analog";
  WorldConfig world;

  // Attack grids.
  int count_k_max = 7;  // 2 * shadow_count + 1 by default
  std::vector<float> lambda_grid = {0.1f, 0.5f, 1.0f, 2.0f};
  std::vector<float> prune_grid = {0.0f, 0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f};
  int finetune_epochs = 20;
  float finetune_learning_rate = 1e-3f;
  int finetune_samples = 1000;

  // Verification.
  float tau = 0.7f;
  float alpha = 0.01f;

  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "out";
  int jobs = 1;
};

const std::vector<std::string>& preset_names();

// Built-in defaults for a preset; throws on an unknown name.
ExperimentConfig preset_config(const std::string& preset);

// Strict parse of a JSON config file. Missing keys fall back to the preset's
// defaults; unknown keys are rejected with the offending name.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text, const std::string& origin);

// Canonical JSON echo of a resolved config (sorted keys, fixed formatting)
// and the FNV-1a hash of that echo.
std::string config_json(const ExperimentConfig& cfg);
uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace loraguard
