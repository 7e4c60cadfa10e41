// Command-line front end. Subcommands are thin wrappers over the library:
// training and arithmetic stages read and write adapter checkpoint files, the
// preset runner drives whole experiments, and `report` renders an artifact
// directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "loraguard/adapter_io.hpp"
#include "loraguard/attacks.hpp"
#include "loraguard/experiment.hpp"
#include "loraguard/ica.hpp"
#include "loraguard/verify.hpp"

using namespace loraguard;

namespace {

namespace fs = std::filesystem;

std::string default_out_dir() {
  const char* env = std::getenv("LORAGUARD_OUT");
  return env != nullptr && *env != '\0' ? env : "out";
}

ExperimentConfig resolve_config(const std::string& config_path, const std::string& preset,
                                std::optional<uint64_t> seed, const std::string& out_dir,
                                int jobs) {
  ExperimentConfig cfg =
      config_path.empty() ? preset_config(preset.empty() ? "table1-analog" : preset)
                          : load_config(config_path);
  if (!preset.empty()) cfg.preset = preset;
  if (seed) cfg.seeds = {*seed};
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (jobs > 0) cfg.jobs = jobs;
  return cfg;
}

Dataset task_dataset(const ExperimentConfig& cfg, const TaskSpec& task, int size, uint64_t seed,
                     const char* stream) {
  Rng rng = derive_stream(seed, stream);
  return make_dataset(task, size, cfg.world.base, rng);
}

LoraAdapter load_adapter(const std::string& path) {
  return adapter_from_file(read_adapter_file(path));
}

ShadowSet load_shadow_dir(const std::string& dir, float dropout_p) {
  ShadowSet set;
  set.dropout_p = dropout_p;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".lgrd") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    AdapterFile file = read_adapter_file(f.string());
    if (file.kind != AdapterFile::Kind::adapter) continue;
    set.adapters.push_back(adapter_from_file(file));
    set.provenance = metadata_value(file, "provenance");
  }
  return set;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"loraguard: dual-trigger adapter watermark laboratory"};
  app.require_subcommand(1);

  std::string config_path, preset, out_dir = default_out_dir();
  std::optional<uint64_t> seed;
  int jobs = 0;
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override the config's seed list with one seed");
  app.add_option("--out", out_dir, "output directory (env LORAGUARD_OUT)");
  app.add_option("--preset", preset, "preset name");
  app.add_option("--jobs", jobs, "worker threads for independent grid points");

  auto* cmd_pretrain = app.add_subcommand("pretrain", "train and freeze the base model");
  auto* cmd_shadows = app.add_subcommand("gen-shadows", "generate a shadow adapter set");
  std::string arg_base, arg_way = "way1";
  cmd_shadows->add_option("--base", arg_base, "base model file")->required();
  cmd_shadows->add_option("--way", arg_way, "way1 (trained) or way2 (noise)");

  auto* cmd_train_wm = app.add_subcommand("train-wm", "train the watermark adapter");
  std::string arg_shadow_dir;
  cmd_train_wm->add_option("--base", arg_base, "base model file")->required();
  cmd_train_wm->add_option("--shadows", arg_shadow_dir, "shadow set directory");
  bool store_triggers = false;
  cmd_train_wm->add_flag("--store-triggers", store_triggers,
                         "write trigger specs in plaintext metadata");

  auto* cmd_train_task = app.add_subcommand("train-task", "train the protected task adapter");
  cmd_train_task->add_option("--base", arg_base, "base model file")->required();

  auto* cmd_embed = app.add_subcommand("embed", "transfer the watermark into a task adapter");
  std::string arg_wm, arg_task;
  bool refine = false;
  cmd_embed->add_option("--base", arg_base, "base model file")->required();
  cmd_embed->add_option("--wm", arg_wm, "watermark adapter file")->required();
  cmd_embed->add_option("--task", arg_task, "task adapter file")->required();
  cmd_embed->add_option("--shadows", arg_shadow_dir, "shadow set directory (for refinement)");
  cmd_embed->add_flag("--refine", refine, "run the short joint refinement pass");

  auto* cmd_merge = app.add_subcommand("merge", "exact rank-concatenation merge of two adapters");
  std::string arg_a, arg_b;
  cmd_merge->add_option("--a", arg_a, "first adapter file")->required();
  cmd_merge->add_option("--b", arg_b, "second adapter file")->required();

  auto* cmd_verify = app.add_subcommand("verify", "black-box verification of a suspect plan");
  std::string arg_suspect, arg_sign = "+";
  std::vector<std::string> arg_extras;
  cmd_verify->add_option("--base", arg_base, "base model file")->required();
  cmd_verify->add_option("--suspect", arg_suspect, "suspect adapter file")->required();
  cmd_verify->add_option("--sign", arg_sign, "suspect integration sign, + or -");
  cmd_verify->add_option("--extra", arg_extras, "additional integrated adapter files");

  auto* cmd_attack = app.add_subcommand("attack", "prune or fine-tune a watermarked adapter");
  std::string arg_kind = "prune";
  float arg_fraction = 0.5f;
  cmd_attack->add_option("--base", arg_base, "base model file")->required();
  cmd_attack->add_option("--adapter", arg_suspect, "victim adapter file")->required();
  cmd_attack->add_option("--kind", arg_kind, "prune | finetune");
  cmd_attack->add_option("--fraction", arg_fraction, "prune fraction");

  auto* cmd_sweep = app.add_subcommand("sweep", "adapter-count or merge-weight sweep");
  std::string arg_sweep_kind = "count";
  cmd_sweep->add_option("--kind", arg_sweep_kind, "count | lambda");

  auto* cmd_run = app.add_subcommand("run", "run a preset experiment pipeline");
  cmd_run->add_flag("--store-triggers", store_triggers,
                    "write trigger specs in plaintext metadata");

  auto* cmd_report = app.add_subcommand("report", "summarize an artifact directory");
  std::string arg_dir;
  cmd_report->add_option("--dir", arg_dir, "artifact directory (defaults to --out)");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = resolve_config(config_path, preset, seed, out_dir, jobs);
    const uint64_t run_seed = cfg.seeds.front();
    const StandardTasks tasks = standard_tasks();
    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);

    if (cmd_pretrain->parsed()) {
      const Dataset train =
          task_dataset(cfg, tasks.generic, cfg.world.train_size, run_seed, "data/generic");
      Rng rng = derive_stream(run_seed, "data/generic-holdout");
      const Dataset holdout = make_dataset(tasks.generic, cfg.world.eval_size, cfg.world.base, rng);
      PretrainResult result =
          pretrain_base(cfg.world.base, train, holdout, derive_seed(run_seed, "pretrain"));
      write_adapter_file((out / "base.lgrd").string(), to_base_file(result.model));
      std::cout << "holdout accuracy " << result.holdout_accuracy
                << (result.reached_floor ? "" : " (below floor: " + result.failure + ")")
                << "\nwrote " << (out / "base.lgrd").string() << "\n";
      return result.reached_floor ? 0 : 1;
    }

    if (cmd_shadows->parsed()) {
      const BaseModel base = base_from_file(read_adapter_file(arg_base));
      ShadowSet set;
      ShadowGenResult gen;
      if (arg_way == "way1") {
        gen = generate_way1(base, tasks.shadow_tasks, cfg.world.shadow_gen,
                            derive_seed(run_seed, "shadows"));
        set = gen.set;
      } else if (arg_way == "way2") {
        gen = generate_way1(base, tasks.shadow_tasks, cfg.world.shadow_gen,
                            derive_seed(run_seed, "shadows"));
        set = generate_way2(gen.set.adapters, cfg.world.shadow_count,
                            derive_seed(run_seed, "way2"), cfg.world.shadow_gen.dropout_p);
      } else {
        std::cerr << "unknown --way '" << arg_way << "'\n";
        return 2;
      }
      for (size_t i = 0; i < set.adapters.size(); ++i) {
        write_adapter_file((out / ("shadow_" + std::to_string(i) + ".lgrd")).string(),
                           to_adapter_file(set.adapters[i], {{"provenance", set.provenance}}));
      }
      for (const std::string& warning : gen.warnings) std::cout << "warning: " << warning << "\n";
      std::cout << "wrote " << set.adapters.size() << " shadow adapters to " << cfg.out_dir
                << "\n";
      return 0;
    }

    if (cmd_train_task->parsed()) {
      const BaseModel base = base_from_file(read_adapter_file(arg_base));
      const Dataset train =
          task_dataset(cfg, tasks.main_task, cfg.world.train_size, run_seed, "data/main");
      Rng rng = derive_stream(run_seed, "data/main-holdout");
      const Dataset holdout =
          make_dataset(tasks.main_task, cfg.world.eval_size, cfg.world.base, rng);
      TaskTrainConfig tcfg = cfg.world.task_train;
      tcfg.seed = derive_seed(run_seed, "task");
      TaskTrainResult result = train_task_lora(base, train, holdout, tcfg);
      write_adapter_file((out / "task.lgrd").string(), to_adapter_file(result.adapter));
      std::cout << "task accuracy " << result.holdout_accuracy << "\nwrote "
                << (out / "task.lgrd").string() << "\n";
      return 0;
    }

    if (cmd_train_wm->parsed()) {
      const BaseModel base = base_from_file(read_adapter_file(arg_base));
      ShadowSet shadows;
      if (!arg_shadow_dir.empty()) {
        shadows = load_shadow_dir(arg_shadow_dir, cfg.world.wm_train.dropout_p);
      }
      const Dataset pool =
          task_dataset(cfg, tasks.main_task, cfg.world.train_size, run_seed, "data/main");
      Rng rng = derive_stream(run_seed, "data/main-holdout");
      const Dataset holdout =
          make_dataset(tasks.main_task, cfg.world.eval_size, cfg.world.base, rng);
      WatermarkTrainConfig wcfg = cfg.world.wm_train;
      wcfg.seed = derive_seed(run_seed, "wm");
      WatermarkTrainResult result =
          train_watermark(base, shadows, cfg.world.pair, wcfg, pool, holdout);
      std::vector<std::pair<std::string, std::string>> md = {
          {"provenance", "watermark"},
          {"trigger_digest", trigger_digest(cfg.world.pair)},
      };
      if (store_triggers) md.emplace_back("triggers", trigger_plaintext(cfg.world.pair));
      write_adapter_file((out / "wm.lgrd").string(), to_adapter_file(result.adapter, md));
      std::cout << "training-config wsr+ " << result.wsr_plus << ", wsr- " << result.wsr_minus
                << "\n";
      if (!result.warning.empty()) std::cout << "warning: " << result.warning << "\n";
      std::cout << "wrote " << (out / "wm.lgrd").string() << "\n";
      return 0;
    }

    if (cmd_embed->parsed()) {
      const BaseModel base = base_from_file(read_adapter_file(arg_base));
      const LoraAdapter wm = load_adapter(arg_wm);
      const LoraAdapter task = load_adapter(arg_task);
      LoraAdapter merged;
      if (refine) {
        if (arg_shadow_dir.empty()) {
          std::cerr << "--refine needs --shadows\n";
          return 2;
        }
        ShadowSet shadows = load_shadow_dir(arg_shadow_dir, cfg.world.wm_train.dropout_p);
        const Dataset train =
            task_dataset(cfg, tasks.main_task, cfg.world.train_size, run_seed, "data/main");
        JointWatermarkConfig joint;
        joint.shadows = &shadows;
        joint.pair = cfg.world.pair;
        joint.wm = cfg.world.wm_train;
        TransferRefineConfig rcfg = cfg.world.refine;
        rcfg.seed = derive_seed(run_seed, "refine");
        merged = embed_transfer(base, wm, task, rcfg, &train, &joint, &train);
      } else {
        merged = embed_transfer(base, wm, task);
      }
      write_adapter_file((out / "wm_task.lgrd").string(), to_adapter_file(merged));
      std::cout << "wrote " << (out / "wm_task.lgrd").string() << "\n";
      return 0;
    }

    if (cmd_merge->parsed()) {
      const LoraAdapter merged = merge(load_adapter(arg_a), load_adapter(arg_b));
      write_adapter_file((out / "merged.lgrd").string(), to_adapter_file(merged));
      std::cout << "wrote " << (out / "merged.lgrd").string() << " (rank " << merged.rank()
                << ")\n";
      return 0;
    }

    if (cmd_verify->parsed()) {
      const BaseModel base = base_from_file(read_adapter_file(arg_base));
      CompositePlan plan;
      const Sign sign = arg_sign == "-" ? Sign::minus : Sign::plus;
      compose(plan, load_adapter(arg_suspect), sign, 1.0f, base_layer_ids(base));
      for (const std::string& extra : arg_extras) {
        compose(plan, load_adapter(extra), Sign::plus, 1.0f, base_layer_ids(base));
      }
      Rng rng = derive_stream(run_seed, "data/verify-holdout");
      const Dataset eval_set =
          make_dataset(tasks.main_task, cfg.world.eval_size, cfg.world.base, rng);
      CompositeModelQuery query(base, plan);
      VerifyConfig vcfg;
      vcfg.tau = cfg.tau;
      vcfg.alpha = cfg.alpha;
      vcfg.n = cfg.world.eval_n;
      const VerificationReport report = verify_suspect(query, cfg.world.pair, eval_set, vcfg,
                                                       base.cfg, plan_description(plan), run_seed);
      {
        std::ofstream txt(out / "verification.txt", std::ios::binary);
        txt << report_text(report);
        std::ofstream csv(out / "verification.csv", std::ios::binary);
        csv << report_csv_header() << "\n" << report_csv_row(report) << "\n";
      }
      std::cout << report_text(report);
      return 0;
    }

    if (cmd_attack->parsed()) {
      const BaseModel base = base_from_file(read_adapter_file(arg_base));
      const LoraAdapter victim = load_adapter(arg_suspect);
      Rng rng = derive_stream(run_seed, "data/verify-holdout");
      const Dataset eval_set =
          make_dataset(tasks.main_task, cfg.world.eval_size, cfg.world.base, rng);
      if (arg_kind == "prune") {
        const LoraAdapter pruned = prune_attack(victim, arg_fraction);
        const MetricTriple m = evaluate_plan(base, pruned, 1.0f, {}, cfg.world.pair, eval_set,
                                             cfg.world.eval_n);
        write_adapter_file((out / "attacked.lgrd").string(), to_adapter_file(pruned));
        std::cout << "pruned " << arg_fraction << ": cdp " << m.cdp << ", wsr+ " << m.wsr_plus
                  << ", wsr- " << m.wsr_minus << "\nwrote " << (out / "attacked.lgrd").string()
                  << "\n";
      } else if (arg_kind == "finetune") {
        Rng data_rng = derive_stream(run_seed, "attack/data");
        const Dataset attack_data =
            make_dataset(tasks.main_task, cfg.finetune_samples, cfg.world.base, data_rng);
        FinetuneAttackResult result = finetune_attack(
            base, victim, attack_data, cfg.finetune_epochs, cfg.finetune_learning_rate,
            cfg.world.wm_train.batch_size, cfg.world.pair, eval_set, cfg.world.eval_n,
            derive_seed(run_seed, "attack"));
        SweepCurve trace;
        trace.name = "finetune";
        for (size_t e = 0; e < result.trace.size(); ++e) {
          trace.points.push_back(SweepPoint{static_cast<double>(e), run_seed, result.trace[e]});
        }
        write_sweep_csv(trace, (out / "sweep_finetune.csv").string());
        write_adapter_file((out / "attacked.lgrd").string(), to_adapter_file(result.adapter));
        std::cout << "fine-tuned " << cfg.finetune_epochs << " epochs: wsr+ "
                  << result.trace.back().wsr_plus << ", wsr- " << result.trace.back().wsr_minus
                  << "\nwrote " << (out / "attacked.lgrd").string() << "\n";
      } else {
        std::cerr << "unknown --kind '" << arg_kind << "'\n";
        return 2;
      }
      return 0;
    }

    if (cmd_sweep->parsed()) {
      cfg.preset = arg_sweep_kind == "lambda" ? "fig5-lambda-sweep" : "fig4-count-sweep";
      const ExperimentResult result = run_experiment(cfg, store_triggers);
      std::cout << emit_report(cfg.out_dir);
      return result.ok ? 0 : 1;
    }

    if (cmd_run->parsed()) {
      const ExperimentResult result = run_experiment(cfg, store_triggers);
      std::cout << emit_report(cfg.out_dir);
      return result.ok ? 0 : 1;
    }

    if (cmd_report->parsed()) {
      std::cout << emit_report(arg_dir.empty() ? cfg.out_dir : arg_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
