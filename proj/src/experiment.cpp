#include "loraguard/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "loraguard/adapter_io.hpp"
#include "loraguard/attacks.hpp"
#include "loraguard/ica.hpp"
#include "loraguard/verify.hpp"

namespace loraguard {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string hex64(uint64_t v) {
  std::ostringstream out;
  out << "0x" << std::hex << v;
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results land in
// caller-owned slots, so the output never depends on scheduling.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(jobs);
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string format_float(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

std::vector<std::pair<std::string, std::string>> adapter_metadata(
    const ExperimentConfig& cfg, const std::string& provenance, bool store_triggers) {
  std::vector<std::pair<std::string, std::string>> md;
  md.emplace_back("provenance", provenance);
  md.emplace_back("config_hash", hex64(config_hash(cfg)));
  md.emplace_back("trigger_digest", trigger_digest(cfg.world.pair));
  if (store_triggers) md.emplace_back("triggers", trigger_plaintext(cfg.world.pair));
  return md;
}

void save_shadow_dir(const fs::path& dir, const World& world) {
  fs::create_directories(dir);
  json manifest;
  manifest["provenance"] = world.shadows.provenance;
  manifest["dropout_p"] = world.shadows.dropout_p;
  manifest["count"] = world.shadows.count();
  json stats = json::array();
  for (int i = 0; i < world.shadows.count(); ++i) {
    const LoraAdapter& a = world.shadows.adapters[i];
    AdapterFile file = to_adapter_file(a, {{"provenance", world.shadows.provenance}});
    write_adapter_file((dir / ("shadow_" + std::to_string(i) + ".lgrd")).string(), file);
    json entry;
    entry["name"] = a.name;
    entry["rank"] = a.rank();
    entry["max_abs_delta"] = max_abs(materialize(a));
    if (i < static_cast<int>(world.way1_shadows.accuracies.size()) &&
        world.shadows.provenance == "way1") {
      entry["task_accuracy"] = world.way1_shadows.accuracies[i];
    }
    stats.push_back(entry);
  }
  manifest["adapters"] = stats;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<LoraAdapter> first_k(const std::vector<LoraAdapter>& pool, int k) {
  return std::vector<LoraAdapter>(pool.begin(), pool.begin() + k);
}

// Per-preset execution. Each returns the preset's per-seed metric rows for
// the manifest.
struct PresetOutputs {
  json per_seed = json::array();
};

PresetOutputs run_table1(const ExperimentConfig& cfg, const fs::path& out, bool store_triggers) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<World> worlds(n_seeds);
  parallel_for(n_seeds, cfg.jobs,
               [&](int i) { worlds[i] = build_world(cfg.world, cfg.seeds[i]); });

  std::ostringstream csv;
  csv << report_csv_header() << "\n";
  std::string reports_text;
  for (int i = 0; i < n_seeds; ++i) {
    const World& world = worlds[i];
    const uint64_t seed = cfg.seeds[i];
    const auto layers = base_layer_ids(world.base());

    // The suspect: the watermarked task adapter integrated with three
    // held-out adapters, as-is (addition use).
    CompositePlan suspect;
    compose(suspect, world.merged, Sign::plus, 1.0f, layers);
    for (const LoraAdapter& u : first_k(world.unrelated, 3)) {
      compose(suspect, u, Sign::plus, 1.0f, layers);
    }
    CompositeModelQuery query(world.base(), suspect);
    VerifyConfig vcfg;
    vcfg.tau = cfg.tau;
    vcfg.alpha = cfg.alpha;
    vcfg.n = cfg.world.eval_n;
    VerificationReport report = verify_suspect(query, cfg.world.pair, world.main_eval, vcfg,
                                               world.base().cfg, plan_description(suspect), seed);
    csv << report_csv_row(report) << "\n";
    reports_text += "--- seed " + std::to_string(seed) + " ---\n" + report_text(report);

    // Negation-side WSR of the same object, and the clean-adapter baseline.
    MetricTriple integrated = evaluate_plan(world.base(), world.merged, 1.0f,
                                            first_k(world.unrelated, 3), cfg.world.pair,
                                            world.main_eval, cfg.world.eval_n);
    CompositePlan clean_alone;
    compose(clean_alone, world.task.adapter, Sign::plus, 1.0f, layers);
    CompositePlan merged_alone;
    compose(merged_alone, world.merged, Sign::plus, 1.0f, layers);
    const float clean_cdp = accuracy(world.base(), clean_alone, world.main_eval);
    const float wm_cdp = accuracy(world.base(), merged_alone, world.main_eval);

    json row;
    row["seed"] = seed;
    row["wsr_plus"] = integrated.wsr_plus;
    row["wsr_minus"] = integrated.wsr_minus;
    row["cdp_integrated"] = integrated.cdp;
    row["cdp_wm_task"] = wm_cdp;
    row["cdp_clean_task"] = clean_cdp;
    row["cdp_delta"] = wm_cdp - clean_cdp;
    row["verdict"] = verdict_name(report.verdict);
    row["pretrain_accuracy"] = world.pretrain.holdout_accuracy;
    row["task_accuracy"] = world.task.holdout_accuracy;
    row["wm_warning"] = world.wm.warning;
    outputs.per_seed.push_back(row);

    const std::string tag = "_seed" + std::to_string(seed);
    write_adapter_file((out / ("base" + tag + ".lgrd")).string(), to_base_file(world.base()));
    write_adapter_file((out / ("task" + tag + ".lgrd")).string(),
                       to_adapter_file(world.task.adapter,
                                       adapter_metadata(cfg, "task", false)));
    write_adapter_file((out / ("wm" + tag + ".lgrd")).string(),
                       to_adapter_file(world.wm.adapter,
                                       adapter_metadata(cfg, "watermark", store_triggers)));
    write_adapter_file((out / ("wm_task" + tag + ".lgrd")).string(),
                       to_adapter_file(world.merged,
                                       adapter_metadata(cfg, "watermark+task", store_triggers)));
    save_shadow_dir(out / ("shadows" + tag), world);
  }
  write_text(out / "verification.csv", csv.str());
  write_text(out / "verification.txt", reports_text);
  return outputs;
}

PresetOutputs run_fig1(const ExperimentConfig& cfg, const fs::path& out, bool) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  const int k_max = 5;
  std::vector<World> worlds(n_seeds);
  std::vector<BadnetsResult> badnets(n_seeds);
  parallel_for(n_seeds, cfg.jobs, [&](int i) {
    worlds[i] = build_world(cfg.world, cfg.seeds[i]);
    WatermarkTrainConfig bcfg = cfg.world.wm_train;
    bcfg.seed = derive_seed(cfg.seeds[i], "badnets");
    badnets[i] = badnets_baseline(worlds[i].base(), cfg.world.pair, bcfg, worlds[i].main_train,
                                  worlds[i].main_eval, worlds[i].unrelated, k_max,
                                  cfg.world.eval_n);
  });

  SweepCurve lg_curve, bad_curve;
  lg_curve.name = "fig1-loraguard";
  bad_curve.name = "fig1-badnets";
  std::ostringstream neg_csv;
  neg_csv << "seed,loraguard_wsr_minus_negation,badnets_wsr_negation\n";
  for (int i = 0; i < n_seeds; ++i) {
    const World& world = worlds[i];
    SweepCurve lg = sweep_lora_count(world.base(), world.merged, world.unrelated, k_max,
                                     cfg.world.pair, world.main_eval,
                                     std::vector<uint64_t>{cfg.seeds[i]}, cfg.world.eval_n);
    lg_curve.points.insert(lg_curve.points.end(), lg.points.begin(), lg.points.end());
    bad_curve.points.insert(bad_curve.points.end(), badnets[i].addition_curve.points.begin(),
                            badnets[i].addition_curve.points.end());

    CompositePlan negated;
    compose(negated, world.merged, Sign::minus, 1.0f, base_layer_ids(world.base()));
    CompositeModelQuery q(world.base(), negated);
    const float lg_neg = compute_wsr(q, cfg.world.pair.yin, world.main_eval, cfg.world.eval_n,
                                     world.base().cfg);
    neg_csv << cfg.seeds[i] << ',' << format_float(lg_neg) << ','
            << format_float(badnets[i].wsr_under_negation) << "\n";

    json row;
    row["seed"] = cfg.seeds[i];
    row["loraguard_wsr_minus_negation"] = lg_neg;
    row["badnets_wsr_negation"] = badnets[i].wsr_under_negation;
    row["loraguard_wsr_plus_k5"] = lg.points.back().metrics.wsr_plus;
    row["badnets_wsr_plus_k5"] = badnets[i].addition_curve.points.back().metrics.wsr_plus;
    outputs.per_seed.push_back(row);
  }
  write_sweep_csv(lg_curve, (out / "sweep_fig1_loraguard.csv").string());
  write_sweep_csv(bad_curve, (out / "sweep_fig1_badnets.csv").string());
  write_text(out / "fig1_negation.csv", neg_csv.str());
  return outputs;
}

PresetOutputs run_count_sweep(const ExperimentConfig& cfg, const fs::path& out, bool) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<World> worlds(n_seeds);
  parallel_for(n_seeds, cfg.jobs,
               [&](int i) { worlds[i] = build_world(cfg.world, cfg.seeds[i]); });
  SweepCurve curve;
  curve.name = "lora-count";
  for (int i = 0; i < n_seeds; ++i) {
    SweepCurve c = sweep_lora_count(worlds[i].base(), worlds[i].merged, worlds[i].unrelated,
                                    cfg.count_k_max, cfg.world.pair, worlds[i].main_eval,
                                    std::vector<uint64_t>{cfg.seeds[i]}, cfg.world.eval_n);
    curve.points.insert(curve.points.end(), c.points.begin(), c.points.end());
    json row;
    row["seed"] = cfg.seeds[i];
    row["wsr_minus_at_m"] = c.points[cfg.world.shadow_count].metrics.wsr_minus;
    outputs.per_seed.push_back(row);
  }
  curve.config_hash = hex64(config_hash(cfg));
  write_sweep_csv(curve, (out / "sweep_count.csv").string());
  return outputs;
}

PresetOutputs run_lambda_sweep(const ExperimentConfig& cfg, const fs::path& out, bool) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<World> worlds(n_seeds);
  parallel_for(n_seeds, cfg.jobs,
               [&](int i) { worlds[i] = build_world(cfg.world, cfg.seeds[i]); });
  SweepCurve curve;
  curve.name = "lambda";
  for (int i = 0; i < n_seeds; ++i) {
    SweepCurve c = sweep_lambda(worlds[i].base(), worlds[i].merged,
                                first_k(worlds[i].unrelated, 3), cfg.lambda_grid, cfg.world.pair,
                                worlds[i].main_eval, std::vector<uint64_t>{cfg.seeds[i]},
                                cfg.world.eval_n);
    curve.points.insert(curve.points.end(), c.points.begin(), c.points.end());
    json row;
    row["seed"] = cfg.seeds[i];
    row["wsr_plus_low"] = c.points.front().metrics.wsr_plus;
    row["wsr_plus_high"] = c.points.back().metrics.wsr_plus;
    outputs.per_seed.push_back(row);
  }
  curve.config_hash = hex64(config_hash(cfg));
  write_sweep_csv(curve, (out / "sweep_lambda.csv").string());
  return outputs;
}

PresetOutputs run_prune(const ExperimentConfig& cfg, const fs::path& out, bool) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<World> worlds(n_seeds);
  parallel_for(n_seeds, cfg.jobs,
               [&](int i) { worlds[i] = build_world(cfg.world, cfg.seeds[i]); });
  SweepCurve curve;
  curve.name = "prune";
  for (int i = 0; i < n_seeds; ++i) {
    SweepCurve c =
        sweep_prune(worlds[i].base(), worlds[i].merged, cfg.prune_grid, cfg.world.pair,
                    worlds[i].main_eval, std::vector<uint64_t>{cfg.seeds[i]}, cfg.world.eval_n);
    curve.points.insert(curve.points.end(), c.points.begin(), c.points.end());
    json row;
    row["seed"] = cfg.seeds[i];
    row["wsr_minus_at_half"] = [&] {
      for (const SweepPoint& p : c.points) {
        if (p.x >= 0.5) return p.metrics.wsr_minus;
      }
      return c.points.back().metrics.wsr_minus;
    }();
    outputs.per_seed.push_back(row);
  }
  curve.config_hash = hex64(config_hash(cfg));
  write_sweep_csv(curve, (out / "sweep_prune.csv").string());
  return outputs;
}

PresetOutputs run_finetune(const ExperimentConfig& cfg, const fs::path& out, bool) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<World> worlds(n_seeds);
  std::vector<FinetuneAttackResult> attacks(n_seeds);
  parallel_for(n_seeds, cfg.jobs, [&](int i) {
    worlds[i] = build_world(cfg.world, cfg.seeds[i]);
    Rng data_rng = derive_stream(cfg.seeds[i], "attack/data");
    const Dataset attack_data =
        make_dataset(standard_tasks().main_task, cfg.finetune_samples, cfg.world.base, data_rng);
    attacks[i] = finetune_attack(worlds[i].base(), worlds[i].merged, attack_data,
                                 cfg.finetune_epochs, cfg.finetune_learning_rate,
                                 cfg.world.wm_train.batch_size, cfg.world.pair,
                                 worlds[i].main_eval, cfg.world.eval_n,
                                 derive_seed(cfg.seeds[i], "attack"));
  });
  SweepCurve trace;
  trace.name = "finetune";
  for (int i = 0; i < n_seeds; ++i) {
    for (size_t e = 0; e < attacks[i].trace.size(); ++e) {
      trace.points.push_back(SweepPoint{static_cast<double>(e), cfg.seeds[i],
                                        attacks[i].trace[e]});
    }
    json row;
    row["seed"] = cfg.seeds[i];
    row["cdp_before"] = attacks[i].trace.front().cdp;
    row["cdp_after"] = attacks[i].trace.back().cdp;
    row["wsr_plus_after"] = attacks[i].trace.back().wsr_plus;
    row["wsr_minus_after"] = attacks[i].trace.back().wsr_minus;
    outputs.per_seed.push_back(row);
  }
  trace.config_hash = hex64(config_hash(cfg));
  write_sweep_csv(trace, (out / "sweep_finetune.csv").string());
  return outputs;
}

PresetOutputs run_way2_parity(const ExperimentConfig& cfg, const fs::path& out, bool) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<World> way1_worlds(n_seeds), way2_worlds(n_seeds);
  parallel_for(n_seeds, cfg.jobs, [&](int i) {
    way1_worlds[i] = build_world(cfg.world, cfg.seeds[i]);
    WorldConfig w2 = cfg.world;
    w2.shadow_way = "way2";
    way2_worlds[i] = build_world(w2, cfg.seeds[i]);
  });
  std::ostringstream csv;
  csv << "seed,way,cdp,wsr_plus,wsr_minus\n";
  for (int i = 0; i < n_seeds; ++i) {
    const MetricTriple m1 =
        evaluate_plan(way1_worlds[i].base(), way1_worlds[i].merged,
                      1.0f, first_k(way1_worlds[i].unrelated, 3), cfg.world.pair,
                      way1_worlds[i].main_eval, cfg.world.eval_n);
    const MetricTriple m2 =
        evaluate_plan(way2_worlds[i].base(), way2_worlds[i].merged,
                      1.0f, first_k(way2_worlds[i].unrelated, 3), cfg.world.pair,
                      way2_worlds[i].main_eval, cfg.world.eval_n);
    csv << cfg.seeds[i] << ",way1," << format_float(m1.cdp) << ',' << format_float(m1.wsr_plus)
        << ',' << format_float(m1.wsr_minus) << "\n";
    csv << cfg.seeds[i] << ",way2," << format_float(m2.cdp) << ',' << format_float(m2.wsr_plus)
        << ',' << format_float(m2.wsr_minus) << "\n";
    json row;
    row["seed"] = cfg.seeds[i];
    row["way1_wsr_plus"] = m1.wsr_plus;
    row["way1_wsr_minus"] = m1.wsr_minus;
    row["way2_wsr_plus"] = m2.wsr_plus;
    row["way2_wsr_minus"] = m2.wsr_minus;
    outputs.per_seed.push_back(row);
  }
  write_text(out / "way2_parity.csv", csv.str());
  return outputs;
}

PresetOutputs run_dropout_ablation(const ExperimentConfig& cfg, const fs::path& out, bool) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<World> with(n_seeds), without(n_seeds);
  parallel_for(n_seeds, cfg.jobs, [&](int i) {
    with[i] = build_world(cfg.world, cfg.seeds[i]);
    WorldConfig nodrop = cfg.world;
    nodrop.wm_train.dropout_p = 1.0f;
    nodrop.shadow_gen.dropout_p = 1.0f;
    without[i] = build_world(nodrop, cfg.seeds[i]);
  });
  const int k = cfg.world.shadow_count + 2;
  std::ostringstream csv;
  csv << "seed,variant,k,wsr_minus\n";
  for (int i = 0; i < n_seeds; ++i) {
    const MetricTriple md =
        evaluate_plan(with[i].base(), with[i].merged, 1.0f, first_k(with[i].unrelated, k),
                      cfg.world.pair, with[i].main_eval, cfg.world.eval_n);
    const MetricTriple mn =
        evaluate_plan(without[i].base(), without[i].merged, 1.0f,
                      first_k(without[i].unrelated, k), cfg.world.pair, without[i].main_eval,
                      cfg.world.eval_n);
    csv << cfg.seeds[i] << ",dropout," << k << ',' << format_float(md.wsr_minus) << "\n";
    csv << cfg.seeds[i] << ",no-dropout," << k << ',' << format_float(mn.wsr_minus) << "\n";
    json row;
    row["seed"] = cfg.seeds[i];
    row["with_dropout_wsr_minus"] = md.wsr_minus;
    row["without_dropout_wsr_minus"] = mn.wsr_minus;
    outputs.per_seed.push_back(row);
  }
  write_text(out / "dropout_ablation.csv", csv.str());
  return outputs;
}

PresetOutputs run_ica(const ExperimentConfig& cfg, const fs::path& out, bool) {
  PresetOutputs outputs;
  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<World> worlds(n_seeds);
  parallel_for(n_seeds, cfg.jobs,
               [&](int i) { worlds[i] = build_world(cfg.world, cfg.seeds[i]); });
  std::ostringstream csv;
  csv << "seed,component,cos_wm,cos_task,converged,degenerate\n";
  std::string text;
  for (int i = 0; i < n_seeds; ++i) {
    // Separation runs on the pure two-component merge, before refinement
    // blends the factors.
    const LoraAdapter plain = merge(worlds[i].wm.adapter, worlds[i].task.adapter);
    IcaSeparationReport report =
        ica_separate(plain, materialize(worlds[i].wm.adapter),
                     materialize(worlds[i].task.adapter), derive_seed(cfg.seeds[i], "ica"));
    text += "--- seed " + std::to_string(cfg.seeds[i]) + " ---\n" + ica_report_text(report);
    for (size_t c = 0; c < report.cosines.size(); ++c) {
      csv << cfg.seeds[i] << ',' << c << ',' << format_float(report.cosines[c][0]) << ','
          << format_float(report.cosines[c][1]) << ',' << (report.ica.converged ? 1 : 0) << ','
          << (report.ica.degenerate ? 1 : 0) << "\n";
    }
    json row;
    row["seed"] = cfg.seeds[i];
    row["converged"] = report.ica.converged;
    row["degenerate"] = report.ica.degenerate;
    outputs.per_seed.push_back(row);
  }
  write_text(out / "ica_cosines.csv", csv.str());
  write_text(out / "ica_report.txt", text);
  return outputs;
}

}  // namespace

std::string trigger_digest(const WatermarkPair& pair) {
  return hex64(fnv1a64(trigger_plaintext(pair)));
}

std::string trigger_plaintext(const WatermarkPair& pair) {
  auto one = [](const TriggerSpec& spec) {
    std::string out = "pos=";
    for (int p : spec.positions) out += std::to_string(p) + ";";
    out += " tok=";
    for (int t : spec.tokens) out += std::to_string(t) + ";";
    out += " target=" + std::to_string(spec.target_label);
    return out;
  };
  return "yang{" + one(pair.yang) + "} yin{" + one(pair.yin) + "}";
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool store_triggers) {
  ExperimentResult result;
  result.out_dir = cfg.out_dir;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  json manifest;
  manifest["preset"] = cfg.preset;
  manifest["code_version"] = kCodeVersion;
  manifest["config_hash"] = hex64(config_hash(cfg));
  manifest["seeds"] = cfg.seeds;

  auto run_stage = [&](const std::string& name, const std::function<void()>& body) {
    if (!result.stages.empty() && result.stages.back().status == "failed") {
      result.stages.push_back({name, "skipped", "previous stage failed"});
      return;
    }
    try {
      body();
      result.stages.push_back({name, "ok", ""});
    } catch (const std::exception& e) {
      result.stages.push_back({name, "failed", e.what()});
    }
  };

  run_stage("config-echo", [&] { write_text(out / "config.json", config_json(cfg)); });

  PresetOutputs outputs;
  run_stage("preset:" + cfg.preset, [&] {
    if (cfg.preset == "table1-analog") {
      outputs = run_table1(cfg, out, store_triggers);
    } else if (cfg.preset == "fig1-badnets") {
      outputs = run_fig1(cfg, out, store_triggers);
    } else if (cfg.preset == "fig4-count-sweep") {
      outputs = run_count_sweep(cfg, out, store_triggers);
    } else if (cfg.preset == "fig5-lambda-sweep") {
      outputs = run_lambda_sweep(cfg, out, store_triggers);
    } else if (cfg.preset == "prune-attack") {
      outputs = run_prune(cfg, out, store_triggers);
    } else if (cfg.preset == "finetune-attack") {
      outputs = run_finetune(cfg, out, store_triggers);
    } else if (cfg.preset == "way2-parity") {
      outputs = run_way2_parity(cfg, out, store_triggers);
    } else if (cfg.preset == "dropout-ablation") {
      outputs = run_dropout_ablation(cfg, out, store_triggers);
    } else if (cfg.preset == "ica-analysis") {
      outputs = run_ica(cfg, out, store_triggers);
    } else {
      throw std::runtime_error("unknown preset '" + cfg.preset + "'");
    }
  });

  // The manifest always gets written: it is the record of any failure above.
  try {
    manifest["per_seed"] = outputs.per_seed;
    json stages = json::array();
    for (const StageStatus& s : result.stages) {
      stages.push_back({{"name", s.name}, {"status", s.status}, {"detail", s.detail}});
    }
    stages.push_back({{"name", "manifest"}, {"status", "ok"}, {"detail", ""}});
    manifest["stages"] = stages;
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    result.stages.push_back({"manifest", "ok", ""});
  } catch (const std::exception& e) {
    result.stages.push_back({"manifest", "failed", e.what()});
  }

  result.ok = true;
  for (const StageStatus& s : result.stages) result.ok = result.ok && s.status == "ok";
  return result;
}

std::string emit_report(const std::string& artifact_dir) {
  const fs::path dir(artifact_dir);
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("emit_report: missing manifest.json in " + artifact_dir);
  }
  std::ifstream in(manifest_path);
  json manifest = json::parse(std::string(std::istreambuf_iterator<char>(in),
                                          std::istreambuf_iterator<char>()));

  std::ostringstream out;
  out << "experiment report\n";
  out << "=================\n";
  out << "preset:       " << manifest.value("preset", "?") << "\n";
  out << "code version: " << manifest.value("code_version", "?") << "\n";
  out << "config hash:  " << manifest.value("config_hash", "?") << "\n";

  out << "stages:\n";
  bool any_failed = false;
  if (manifest.contains("stages")) {
    for (const auto& s : manifest["stages"]) {
      const std::string status = s.value("status", "?");
      any_failed = any_failed || status == "failed";
      out << "  " << s.value("name", "?") << ": " << status;
      if (!s.value("detail", std::string()).empty()) out << " (" << s["detail"] << ")";
      out << "\n";
    }
  }

  if (manifest.contains("per_seed") && !manifest["per_seed"].empty()) {
    out << "per-seed metrics:\n";
    for (const auto& row : manifest["per_seed"]) {
      out << "  seed " << row.value("seed", 0ULL) << ":";
      for (const auto& [key, value] : row.items()) {
        if (key == "seed") continue;
        out << " " << key << "=" << value.dump();
      }
      out << "\n";
    }
  } else if (any_failed) {
    out << "per-seed metrics: skipped (stage failure)\n";
  }

  // List the artifacts the preset is expected to leave behind.
  std::vector<std::string> missing;
  for (const char* name : {"config.json"}) {
    if (!fs::exists(dir / name)) missing.push_back(name);
  }
  if (!missing.empty()) {
    out << "missing artifacts:\n";
    for (const std::string& m : missing) out << "  " << m << "\n";
  }
  return out.str();
}

}  // namespace loraguard
