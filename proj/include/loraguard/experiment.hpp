#pragma once

#include <string>
#include <vector>

#include "loraguard/config.hpp"

namespace loraguard {

inline constexpr const char* kCodeVersion = "0.1.0";

struct StageStatus {
  std::string name;
  std::string status;  // "ok" | "failed" | "skipped"
  std::string detail;
};

struct ExperimentResult {
  std::string out_dir;
  std::vector<StageStatus> stages;
  bool ok = false;
};

// Executes the configured preset pipeline and writes adapters, reports, CSVs,
// config echo and a manifest into cfg.out_dir. Every output is a pure
// function of (config, seeds, code version); a failed stage is recorded in
// the manifest and the stages after it are marked skipped.
//
// store_triggers controls whether trigger specs are written in plaintext
// into adapter metadata; by default only their digest travels.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool store_triggers = false);

// Human-readable summary of an artifact directory: stage table, per-seed
// metrics, pass/fail verdicts. Missing artifacts are listed and downstream
// metrics marked skipped; a missing manifest is an error.
std::string emit_report(const std::string& artifact_dir);

// Stable digest of the watermark pair for adapter metadata.
std::string trigger_digest(const WatermarkPair& pair);
std::string trigger_plaintext(const WatermarkPair& pair);

}  // namespace loraguard
