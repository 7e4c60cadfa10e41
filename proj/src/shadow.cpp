#include "loraguard/shadow.hpp"

#include <cmath>
#include <stdexcept>

#include "loraguard/watermark.hpp"

namespace loraguard {

CompositePlan sample_dropout_plan(const ShadowSet& set, float weight, Rng& rng) {
  if (set.dropout_p < 0.0f || set.dropout_p > 1.0f) {
    throw std::invalid_argument("sample_dropout_plan: dropout probability " +
                                std::to_string(set.dropout_p) + " outside [0, 1]");
  }
  CompositePlan plan;
  for (const LoraAdapter& adapter : set.adapters) {
    if (rng.bernoulli(set.dropout_p)) {
      plan.terms.push_back(PlanTerm{adapter, Sign::plus, weight});
    }
  }
  return plan;
}

CompositePlan full_shadow_plan(const ShadowSet& set, float weight) {
  CompositePlan plan;
  for (const LoraAdapter& adapter : set.adapters) {
    plan.terms.push_back(PlanTerm{adapter, Sign::plus, weight});
  }
  return plan;
}

ShadowGenResult generate_way1(const BaseModel& base, const std::vector<TaskSpec>& tasks,
                              const ShadowGenConfig& cfg, uint64_t seed) {
  ShadowGenResult result;
  result.set.provenance = "way1";
  result.set.dropout_p = cfg.dropout_p;
  for (size_t i = 0; i < tasks.size(); ++i) {
    const uint64_t task_seed = derive_seed(seed, "shadow/" + std::to_string(i));
    Rng data_rng = derive_stream(task_seed, "data");
    Dataset train = make_dataset(tasks[i], cfg.dataset_size, base.cfg, data_rng);
    Dataset holdout = make_dataset(tasks[i], cfg.holdout_size, base.cfg, data_rng);

    TaskTrainConfig train_cfg;
    train_cfg.epochs = cfg.epochs;
    train_cfg.learning_rate = cfg.learning_rate;
    train_cfg.batch_size = cfg.batch_size;
    train_cfg.rank = cfg.rank;
    train_cfg.stop_accuracy = cfg.stop_accuracy;
    train_cfg.init_scale = cfg.init_scale;
    train_cfg.seed = task_seed;
    TaskTrainResult trained = train_task_lora(base, train, holdout, train_cfg);
    trained.adapter.name = "shadow-" + tasks[i].name;
    result.accuracies.push_back(trained.holdout_accuracy);
    if (trained.holdout_accuracy < cfg.accuracy_floor) {
      result.warnings.push_back("shadow task '" + tasks[i].name + "' reached only " +
                                std::to_string(trained.holdout_accuracy) +
                                " accuracy (floor " + std::to_string(cfg.accuracy_floor) + ")");
    }
    result.set.adapters.push_back(std::move(trained.adapter));
  }
  return result;
}

MatrixStats pool_stats(const std::vector<LoraAdapter>& reference) {
  if (reference.empty()) throw std::invalid_argument("pool_stats: empty reference pool");
  auto accumulate = [](const std::vector<const Tensor2D*>& mats, float& mean, float& stddev) {
    double sum = 0.0;
    size_t count = 0;
    for (const Tensor2D* m : mats) {
      for (float x : m->data) sum += x;
      count += m->size();
    }
    mean = static_cast<float>(sum / static_cast<double>(count));
    double sq = 0.0;
    for (const Tensor2D* m : mats) {
      for (float x : m->data) sq += (x - mean) * (x - mean);
    }
    stddev = static_cast<float>(std::sqrt(sq / static_cast<double>(count)));
  };

  std::vector<const Tensor2D*> bs, as;
  for (const LoraAdapter& adapter : reference) {
    bs.push_back(&adapter.B);
    as.push_back(&adapter.A);
  }
  MatrixStats stats;
  accumulate(bs, stats.b_mean, stats.b_std);
  accumulate(as, stats.a_mean, stats.a_std);
  return stats;
}

ShadowSet generate_way2(const std::vector<LoraAdapter>& reference, int m, uint64_t seed,
                        float dropout_p) {
  if (reference.empty()) {
    throw std::invalid_argument(
        "generate_way2: empty reference pool; pass explicit statistics instead");
  }
  const LoraAdapter& proto = reference.front();
  return generate_way2(pool_stats(reference), proto.out_dim(), proto.in_dim(), proto.rank(), m,
                       seed, dropout_p);
}

ShadowSet generate_way2(const MatrixStats& stats, int out_dim, int in_dim, int rank, int m,
                        uint64_t seed, float dropout_p) {
  if (m < 0) throw std::invalid_argument("generate_way2: m must be >= 0");
  ShadowSet set;
  set.provenance = "way2";
  set.dropout_p = dropout_p;
  for (int i = 0; i < m; ++i) {
    Rng rng = derive_stream(seed, "way2/" + std::to_string(i));
    LoraAdapter adapter;
    adapter.layer = kHiddenLayer;
    adapter.B = random_normal(out_dim, rank, stats.b_mean, stats.b_std, rng);
    adapter.A = random_normal(rank, in_dim, stats.a_mean, stats.a_std, rng);
    adapter.name = "noise-" + std::to_string(i);
    validate_adapter(adapter);
    set.adapters.push_back(std::move(adapter));
  }
  return set;
}

}  // namespace loraguard
