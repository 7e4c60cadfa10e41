#include "loraguard/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace loraguard {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& origin, const std::string& message) {
  throw std::runtime_error("config '" + origin + "': " + message);
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& origin, const std::string& section) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      fail(origin, "unknown key '" + key + "'" +
                       (section.empty() ? "" : " in section '" + section + "'"));
    }
  }
}

double number_or_fail(const json& v, const std::string& origin, const std::string& key) {
  if (!v.is_number()) fail(origin, "'" + key + "' must be a number");
  return v.get<double>();
}

void load_int(const json& obj, const char* key, int& out, const std::string& origin, int lo,
              int hi) {
  if (!obj.contains(key)) return;
  const double v = number_or_fail(obj.at(key), origin, key);
  if (v < lo || v > hi) {
    fail(origin, "'" + std::string(key) + "' = " + std::to_string(v) + " outside [" +
                     std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  out = static_cast<int>(v);
}

void load_float(const json& obj, const char* key, float& out, const std::string& origin, double lo,
                double hi) {
  if (!obj.contains(key)) return;
  const double v = number_or_fail(obj.at(key), origin, key);
  if (v < lo || v > hi) {
    fail(origin, "'" + std::string(key) + "' = " + std::to_string(v) + " outside [" +
                     std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  out = static_cast<float>(v);
}

void load_base(const json& obj, BaseConfig& cfg, const std::string& origin) {
  reject_unknown_keys(obj,
                      {"vocab", "seq_len", "embed_dim", "classes", "clean_vocab", "feature_scale",
                       "filler_scale", "pretrain_epochs", "batch_size", "learning_rate",
                       "accuracy_floor", "stop_accuracy"},
                      origin, "base");
  load_int(obj, "vocab", cfg.vocab, origin, 8, 4096);
  load_int(obj, "seq_len", cfg.seq_len, origin, 2, 512);
  load_int(obj, "embed_dim", cfg.embed_dim, origin, 4, 1024);
  load_int(obj, "classes", cfg.classes, origin, 2, 64);
  load_int(obj, "clean_vocab", cfg.clean_vocab, origin, 4, 4096);
  load_float(obj, "feature_scale", cfg.feature_scale, origin, 0.0, 16.0);
  load_float(obj, "filler_scale", cfg.filler_scale, origin, 0.0, 16.0);
  load_int(obj, "pretrain_epochs", cfg.pretrain_epochs, origin, 0, 10000);
  load_int(obj, "batch_size", cfg.batch_size, origin, 1, 4096);
  load_float(obj, "learning_rate", cfg.learning_rate, origin, 0.0, 10.0);
  load_float(obj, "accuracy_floor", cfg.accuracy_floor, origin, 0.0, 1.0);
  load_float(obj, "stop_accuracy", cfg.stop_accuracy, origin, 0.0, 1.0);
  if (cfg.clean_vocab > cfg.vocab - 2) {
    fail(origin, "clean_vocab must leave at least two reserved trigger ids");
  }
}

void load_task_train(const json& obj, TaskTrainConfig& cfg, const std::string& origin) {
  reject_unknown_keys(obj,
                      {"epochs", "learning_rate", "weight_decay", "batch_size", "rank",
                       "init_scale", "stop_accuracy"},
                      origin, "task_train");
  load_int(obj, "epochs", cfg.epochs, origin, 0, 100000);
  load_float(obj, "learning_rate", cfg.learning_rate, origin, 0.0, 10.0);
  load_float(obj, "weight_decay", cfg.weight_decay, origin, 0.0, 1.0);
  load_int(obj, "batch_size", cfg.batch_size, origin, 1, 4096);
  load_int(obj, "rank", cfg.rank, origin, 1, 256);
  load_float(obj, "init_scale", cfg.init_scale, origin, 0.0, 64.0);
  load_float(obj, "stop_accuracy", cfg.stop_accuracy, origin, 0.0, 1.0);
}

void load_shadow_gen(const json& obj, ShadowGenConfig& cfg, const std::string& origin) {
  reject_unknown_keys(obj,
                      {"rank", "epochs", "learning_rate", "batch_size", "dataset_size",
                       "holdout_size", "accuracy_floor", "stop_accuracy", "init_scale",
                       "dropout_p"},
                      origin, "shadow_gen");
  load_int(obj, "rank", cfg.rank, origin, 1, 256);
  load_int(obj, "epochs", cfg.epochs, origin, 0, 100000);
  load_float(obj, "learning_rate", cfg.learning_rate, origin, 0.0, 10.0);
  load_int(obj, "batch_size", cfg.batch_size, origin, 1, 4096);
  load_int(obj, "dataset_size", cfg.dataset_size, origin, 1, 1000000);
  load_int(obj, "holdout_size", cfg.holdout_size, origin, 1, 1000000);
  load_float(obj, "accuracy_floor", cfg.accuracy_floor, origin, 0.0, 1.0);
  load_float(obj, "stop_accuracy", cfg.stop_accuracy, origin, 0.0, 1.0);
  load_float(obj, "init_scale", cfg.init_scale, origin, 0.0, 64.0);
  load_float(obj, "dropout_p", cfg.dropout_p, origin, 0.0, 1.0);
}

void load_wm_train(const json& obj, WatermarkTrainConfig& cfg, const std::string& origin) {
  reject_unknown_keys(obj,
                      {"epochs", "learning_rate", "weight_decay", "batch_size", "rank",
                       "init_scale", "dropout_p", "shadow_weight", "wsr_floor", "stop_wsr",
                       "train_yin", "negate_shadows_in_yin"},
                      origin, "wm_train");
  load_int(obj, "epochs", cfg.epochs, origin, 0, 100000);
  load_float(obj, "learning_rate", cfg.learning_rate, origin, 0.0, 10.0);
  load_float(obj, "weight_decay", cfg.weight_decay, origin, 0.0, 1.0);
  load_int(obj, "batch_size", cfg.batch_size, origin, 1, 4096);
  load_int(obj, "rank", cfg.rank, origin, 1, 256);
  load_float(obj, "init_scale", cfg.init_scale, origin, 0.0, 64.0);
  load_float(obj, "dropout_p", cfg.dropout_p, origin, 0.0, 1.0);
  load_float(obj, "shadow_weight", cfg.shadow_weight, origin, 0.0, 64.0);
  load_float(obj, "wsr_floor", cfg.wsr_floor, origin, 0.0, 1.0);
  load_float(obj, "stop_wsr", cfg.stop_wsr, origin, 0.0, 1.0);
  if (obj.contains("train_yin")) {
    if (!obj.at("train_yin").is_boolean()) fail(origin, "'train_yin' must be a boolean");
    cfg.train_yin = obj.at("train_yin").get<bool>();
  }
  if (obj.contains("negate_shadows_in_yin")) {
    if (!obj.at("negate_shadows_in_yin").is_boolean()) {
      fail(origin, "'negate_shadows_in_yin' must be a boolean");
    }
    cfg.negate_shadows_in_yin = obj.at("negate_shadows_in_yin").get<bool>();
  }
}

void load_refine(const json& obj, TransferRefineConfig& cfg, const std::string& origin) {
  reject_unknown_keys(obj, {"epochs", "learning_rate", "batch_size"}, origin, "refine");
  load_int(obj, "epochs", cfg.epochs, origin, 0, 100000);
  load_float(obj, "learning_rate", cfg.learning_rate, origin, 0.0, 10.0);
  load_int(obj, "batch_size", cfg.batch_size, origin, 1, 4096);
}

TriggerSpec load_trigger(const json& obj, const std::string& origin, const std::string& section) {
  reject_unknown_keys(obj, {"positions", "tokens", "target_label"}, origin, section);
  TriggerSpec spec;
  if (obj.contains("positions")) {
    for (const auto& v : obj.at("positions")) spec.positions.push_back(v.get<int>());
  }
  if (obj.contains("tokens")) {
    for (const auto& v : obj.at("tokens")) spec.tokens.push_back(v.get<int>());
  }
  if (obj.contains("target_label")) spec.target_label = obj.at("target_label").get<int>();
  if (spec.positions.size() != spec.tokens.size()) {
    fail(origin, section + ": positions and tokens must have equal lengths");
  }
  return spec;
}

void load_pair(const json& obj, WatermarkPair& pair, const std::string& origin) {
  reject_unknown_keys(obj,
                      {"yang", "yin", "yang_poison_rate", "yang_size", "yin_poison_rate",
                       "yin_size"},
                      origin, "pair");
  if (obj.contains("yang")) pair.yang = load_trigger(obj.at("yang"), origin, "pair.yang");
  if (obj.contains("yin")) pair.yin = load_trigger(obj.at("yin"), origin, "pair.yin");
  load_float(obj, "yang_poison_rate", pair.yang_poison_rate, origin, 0.0, 1.0);
  load_int(obj, "yang_size", pair.yang_size, origin, 1, 1000000);
  load_float(obj, "yin_poison_rate", pair.yin_poison_rate, origin, 0.0, 1.0);
  load_int(obj, "yin_size", pair.yin_size, origin, 1, 1000000);
}

void load_world(const json& obj, WorldConfig& cfg, const std::string& origin) {
  reject_unknown_keys(obj,
                      {"base", "task_train", "shadow_gen", "wm_train", "refine", "pair",
                       "shadow_way", "shadow_count", "unrelated_count", "train_size", "eval_size",
                       "eval_n", "refine_merged"},
                      origin, "world");
  if (obj.contains("base")) load_base(obj.at("base"), cfg.base, origin);
  if (obj.contains("task_train")) load_task_train(obj.at("task_train"), cfg.task_train, origin);
  if (obj.contains("shadow_gen")) load_shadow_gen(obj.at("shadow_gen"), cfg.shadow_gen, origin);
  if (obj.contains("wm_train")) load_wm_train(obj.at("wm_train"), cfg.wm_train, origin);
  if (obj.contains("refine")) load_refine(obj.at("refine"), cfg.refine, origin);
  if (obj.contains("pair")) load_pair(obj.at("pair"), cfg.pair, origin);
  if (obj.contains("shadow_way")) {
    cfg.shadow_way = obj.at("shadow_way").get<std::string>();
    if (cfg.shadow_way != "way1" && cfg.shadow_way != "way2") {
      fail(origin, "shadow_way must be 'way1' or 'way2'");
    }
  }
  load_int(obj, "shadow_count", cfg.shadow_count, origin, 0, 64);
  load_int(obj, "unrelated_count", cfg.unrelated_count, origin, 0, 64);
  load_int(obj, "train_size", cfg.train_size, origin, 1, 1000000);
  load_int(obj, "eval_size", cfg.eval_size, origin, 1, 1000000);
  load_int(obj, "eval_n", cfg.eval_n, origin, 1, 1000000);
  if (obj.contains("refine_merged")) {
    if (!obj.at("refine_merged").is_boolean()) fail(origin, "'refine_merged' must be a boolean");
    cfg.refine_merged = obj.at("refine_merged").get<bool>();
  }
}

json trigger_json(const TriggerSpec& spec) {
  return json{{"positions", spec.positions},
              {"tokens", spec.tokens},
              {"target_label", spec.target_label}};
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "table1-analog",  "fig1-badnets",   "fig4-count-sweep", "fig5-lambda-sweep",
      "prune-attack",   "finetune-attack", "way2-parity",      "dropout-ablation",
      "ica-analysis",
  };
  return names;
}

ExperimentConfig preset_config(const std::string& preset) {
  bool known = false;
  for (const std::string& name : preset_names()) known = known || name == preset;
  if (!known) {
    throw std::runtime_error("unknown preset '" + preset + "'");
  }
  ExperimentConfig cfg;
  cfg.preset = preset;
  cfg.world.pair = default_pair(cfg.world.base);
  if (preset == "way2-parity") cfg.world.shadow_way = "way1";  // the run builds both
  return cfg;
}

ExperimentConfig parse_config(const std::string& json_text, const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config '" + origin + "': parse error: " + e.what());
  }
  if (!root.is_object()) fail(origin, "top level must be an object");

  std::string preset = "table1-analog";
  if (root.contains("preset")) preset = root.at("preset").get<std::string>();
  ExperimentConfig cfg = preset_config(preset);

  reject_unknown_keys(root,
                      {"preset", "world", "count_k_max", "lambda_grid", "prune_grid",
                       "finetune_epochs", "finetune_learning_rate", "finetune_samples", "tau",
                       "alpha", "seeds", "out_dir", "jobs"},
                      origin, "");
  if (root.contains("world")) load_world(root.at("world"), cfg.world, origin);
  load_int(root, "count_k_max", cfg.count_k_max, origin, 0, 1024);
  if (root.contains("lambda_grid")) {
    cfg.lambda_grid.clear();
    for (const auto& v : root.at("lambda_grid")) {
      const float f = v.get<float>();
      if (!(f > 0.0f)) fail(origin, "lambda_grid entries must be positive");
      cfg.lambda_grid.push_back(f);
    }
    if (cfg.lambda_grid.empty()) fail(origin, "lambda_grid must be nonempty");
  }
  if (root.contains("prune_grid")) {
    cfg.prune_grid.clear();
    for (const auto& v : root.at("prune_grid")) {
      const float f = v.get<float>();
      if (f < 0.0f || f > 1.0f) fail(origin, "prune_grid entries must lie in [0, 1]");
      cfg.prune_grid.push_back(f);
    }
  }
  load_int(root, "finetune_epochs", cfg.finetune_epochs, origin, 0, 100000);
  load_float(root, "finetune_learning_rate", cfg.finetune_learning_rate, origin, 0.0, 10.0);
  load_int(root, "finetune_samples", cfg.finetune_samples, origin, 1, 1000000);
  load_float(root, "tau", cfg.tau, origin, 1e-6, 1.0 - 1e-6);
  load_float(root, "alpha", cfg.alpha, origin, 0.0, 1.0);
  if (root.contains("seeds")) {
    cfg.seeds.clear();
    for (const auto& v : root.at("seeds")) cfg.seeds.push_back(v.get<uint64_t>());
    if (cfg.seeds.empty()) fail(origin, "seeds must be nonempty");
  }
  if (root.contains("out_dir")) cfg.out_dir = root.at("out_dir").get<std::string>();
  load_int(root, "jobs", cfg.jobs, origin, 1, 256);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config '" + path + "': cannot open file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

std::string config_json(const ExperimentConfig& cfg) {
  json world = {
      {"base",
       {{"vocab", cfg.world.base.vocab},
        {"seq_len", cfg.world.base.seq_len},
        {"embed_dim", cfg.world.base.embed_dim},
        {"classes", cfg.world.base.classes},
        {"clean_vocab", cfg.world.base.clean_vocab},
        {"feature_scale", cfg.world.base.feature_scale},
        {"filler_scale", cfg.world.base.filler_scale},
        {"pretrain_epochs", cfg.world.base.pretrain_epochs},
        {"batch_size", cfg.world.base.batch_size},
        {"learning_rate", cfg.world.base.learning_rate},
        {"accuracy_floor", cfg.world.base.accuracy_floor},
        {"stop_accuracy", cfg.world.base.stop_accuracy}}},
      {"task_train",
       {{"epochs", cfg.world.task_train.epochs},
        {"learning_rate", cfg.world.task_train.learning_rate},
        {"weight_decay", cfg.world.task_train.weight_decay},
        {"batch_size", cfg.world.task_train.batch_size},
        {"rank", cfg.world.task_train.rank},
        {"init_scale", cfg.world.task_train.init_scale},
        {"stop_accuracy", cfg.world.task_train.stop_accuracy}}},
      {"shadow_gen",
       {{"rank", cfg.world.shadow_gen.rank},
        {"epochs", cfg.world.shadow_gen.epochs},
        {"learning_rate", cfg.world.shadow_gen.learning_rate},
        {"batch_size", cfg.world.shadow_gen.batch_size},
        {"dataset_size", cfg.world.shadow_gen.dataset_size},
        {"holdout_size", cfg.world.shadow_gen.holdout_size},
        {"accuracy_floor", cfg.world.shadow_gen.accuracy_floor},
        {"stop_accuracy", cfg.world.shadow_gen.stop_accuracy},
        {"init_scale", cfg.world.shadow_gen.init_scale},
        {"dropout_p", cfg.world.shadow_gen.dropout_p}}},
      {"wm_train",
       {{"epochs", cfg.world.wm_train.epochs},
        {"learning_rate", cfg.world.wm_train.learning_rate},
        {"weight_decay", cfg.world.wm_train.weight_decay},
        {"batch_size", cfg.world.wm_train.batch_size},
        {"rank", cfg.world.wm_train.rank},
        {"init_scale", cfg.world.wm_train.init_scale},
        {"dropout_p", cfg.world.wm_train.dropout_p},
        {"shadow_weight", cfg.world.wm_train.shadow_weight},
        {"wsr_floor", cfg.world.wm_train.wsr_floor},
        {"stop_wsr", cfg.world.wm_train.stop_wsr},
        {"train_yin", cfg.world.wm_train.train_yin},
        {"negate_shadows_in_yin", cfg.world.wm_train.negate_shadows_in_yin}}},
      {"refine",
       {{"epochs", cfg.world.refine.epochs},
        {"learning_rate", cfg.world.refine.learning_rate},
        {"batch_size", cfg.world.refine.batch_size}}},
      {"pair",
       {{"yang", trigger_json(cfg.world.pair.yang)},
        {"yin", trigger_json(cfg.world.pair.yin)},
        {"yang_poison_rate", cfg.world.pair.yang_poison_rate},
        {"yang_size", cfg.world.pair.yang_size},
        {"yin_poison_rate", cfg.world.pair.yin_poison_rate},
        {"yin_size", cfg.world.pair.yin_size}}},
      {"shadow_way", cfg.world.shadow_way},
      {"shadow_count", cfg.world.shadow_count},
      {"unrelated_count", cfg.world.unrelated_count},
      {"train_size", cfg.world.train_size},
      {"eval_size", cfg.world.eval_size},
      {"eval_n", cfg.world.eval_n},
      {"refine_merged", cfg.world.refine_merged},
  };
  json root = {
      {"preset", cfg.preset},
      {"world", world},
      {"count_k_max", cfg.count_k_max},
      {"lambda_grid", cfg.lambda_grid},
      {"prune_grid", cfg.prune_grid},
      {"finetune_epochs", cfg.finetune_epochs},
      {"finetune_learning_rate", cfg.finetune_learning_rate},
      {"finetune_samples", cfg.finetune_samples},
      {"tau", cfg.tau},
      {"alpha", cfg.alpha},
      {"seeds", cfg.seeds},
      {"out_dir", cfg.out_dir},
      {"jobs", cfg.jobs},
  };
  return root.dump(2) + "\n";
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  // The hash identifies the experiment, not its execution: output location
  // and worker count do not change any result byte.
  json root = json::parse(config_json(cfg));
  root.erase("out_dir");
  root.erase("jobs");
  return fnv1a64(root.dump());
}

}  // namespace loraguard
