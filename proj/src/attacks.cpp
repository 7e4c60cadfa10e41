#include "loraguard/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "loraguard/adam.hpp"
#include "loraguard/tape.hpp"

namespace loraguard {

namespace {

std::string format_metric(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

float wsr_of_plan(const BaseModel& base, const CompositePlan& plan, const TriggerSpec& spec,
                  const Dataset& eval_set, int n) {
  CompositeModelQuery query(base, plan);
  return compute_wsr(query, spec, eval_set, n, base.cfg);
}

}  // namespace

std::string sweep_csv_text(const SweepCurve& curve) {
  std::ostringstream out;
  out << "x,seed,cdp,wsr_plus,wsr_minus\n";
  for (const SweepPoint& p : curve.points) {
    out << format_metric(p.x) << ',' << p.seed << ',' << format_metric(p.metrics.cdp) << ','
        << format_metric(p.metrics.wsr_plus) << ',' << format_metric(p.metrics.wsr_minus) << '\n';
  }
  return out.str();
}

void write_sweep_csv(const SweepCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_sweep_csv: cannot open " + path);
  out << sweep_csv_text(curve);
}

MetricTriple evaluate_plan(const BaseModel& base, const LoraAdapter& suspect_adapter,
                           float suspect_weight, std::span<const LoraAdapter> extras,
                           const WatermarkPair& pair, const Dataset& eval_set, int n) {
  const auto layers = base_layer_ids(base);
  CompositePlan plus, minus;
  compose(plus, suspect_adapter, Sign::plus, suspect_weight, layers);
  compose(minus, suspect_adapter, Sign::minus, suspect_weight, layers);
  for (const LoraAdapter& extra : extras) {
    compose(plus, extra, Sign::plus, 1.0f, layers);
    compose(minus, extra, Sign::plus, 1.0f, layers);
  }
  MetricTriple m;
  m.cdp = accuracy(base, plus, eval_set);
  m.wsr_plus = wsr_of_plan(base, plus, pair.yang, eval_set, n);
  m.wsr_minus = wsr_of_plan(base, minus, pair.yin, eval_set, n);
  return m;
}

FinetuneAttackResult finetune_attack(const BaseModel& base, const LoraAdapter& victim,
                                     const Dataset& clean_train, int epochs, float learning_rate,
                                     int batch_size, const WatermarkPair& pair,
                                     const Dataset& eval_set, int n, uint64_t seed) {
  if (epochs < 0) throw std::invalid_argument("finetune_attack: epochs must be >= 0");
  validate_adapter(victim);

  FinetuneAttackResult result;
  result.adapter = victim;
  result.adapter.name = victim.name + "-finetuned";
  result.trace.push_back(evaluate_plan(base, result.adapter, 1.0f, {}, pair, eval_set, n));
  if (epochs == 0) {
    result.adapter = victim;  // identity, name included
    return result;
  }

  // The attacker holds the factors, so fine-tuning runs on B and A of the
  // stolen adapter directly.
  TaskTrainConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = learning_rate;
  cfg.batch_size = batch_size;
  cfg.rank = result.adapter.rank();
  cfg.seed = seed;

  std::vector<Tensor2D> params = {result.adapter.B, result.adapter.A};
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = learning_rate;
  AdamState adam(params, adam_cfg);
  Rng order = derive_stream(seed, "attack/order");

  std::vector<size_t> indices(clean_train.size());
  std::iota(indices.begin(), indices.end(), 0);
  const auto layers = base_layer_ids(base);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    order.shuffle(indices);
    for (size_t start = 0; start < indices.size(); start += batch_size) {
      const size_t stop = std::min(indices.size(), start + batch_size);
      std::vector<Sample> batch;
      batch.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) batch.push_back(clean_train[indices[i]]);

      Tape tape;
      const auto b_node = tape.param(params[0]);
      const auto a_node = tape.param(params[1]);
      const auto w = tape.add(tape.constant(base.hidden), tape.matmul(b_node, a_node));
      const Tensor2D x = gather_embeddings(base, batch);
      const auto act = tape.tanh(tape.matmul(w, tape.constant(x)));
      const auto pooled = tape.mean_pool(act, base.cfg.seq_len);
      const auto logits = tape.matmul(tape.constant(base.head), pooled);
      std::vector<int> labels(batch.size());
      for (size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i].label;
      const auto loss = tape.softmax_cross_entropy(logits, labels);
      adam.step(params, tape.backward(loss));
    }
    result.adapter.B = params[0];
    result.adapter.A = params[1];
    result.trace.push_back(evaluate_plan(base, result.adapter, 1.0f, {}, pair, eval_set, n));
  }
  validate_adapter(result.adapter);
  return result;
}

LoraAdapter prune_attack(const LoraAdapter& adapter, float fraction) {
  if (!(fraction >= 0.0f) || fraction > 1.0f) {
    throw std::invalid_argument("prune_attack: fraction must be in [0, 1], got " +
                                std::to_string(fraction));
  }
  validate_adapter(adapter);
  LoraAdapter out = adapter;
  out.name = adapter.name + "-pruned";

  const size_t b_count = out.B.size();
  const size_t total = b_count + out.A.size();
  const size_t quota = static_cast<size_t>(fraction * static_cast<double>(total));
  if (quota == 0) return out;

  auto entry = [&](size_t idx) -> float& {
    return idx < b_count ? out.B.data[idx] : out.A.data[idx - b_count];
  };
  std::vector<size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::fabs(entry(a)) < std::fabs(entry(b));
  });
  for (size_t i = 0; i < quota; ++i) entry(order[i]) = 0.0f;
  return out;
}

SweepCurve sweep_lora_count(const BaseModel& base, const LoraAdapter& wm_adapter,
                            std::span<const LoraAdapter> pool, int k_max,
                            const WatermarkPair& pair, const Dataset& eval_set,
                            std::span<const uint64_t> seeds, int n) {
  if (static_cast<int>(pool.size()) < k_max) {
    throw std::invalid_argument("sweep_lora_count: pool of " + std::to_string(pool.size()) +
                                " adapters cannot cover k_max " + std::to_string(k_max));
  }
  SweepCurve curve;
  curve.name = "lora-count";
  for (int k = 0; k <= k_max; ++k) {
    for (uint64_t seed : seeds) {
      std::vector<size_t> order(pool.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng = derive_stream(seed, "sweep/count");
      rng.shuffle(order);
      std::vector<LoraAdapter> extras;
      extras.reserve(k);
      for (int i = 0; i < k; ++i) extras.push_back(pool[order[i]]);
      SweepPoint point;
      point.x = k;
      point.seed = seed;
      point.metrics = evaluate_plan(base, wm_adapter, 1.0f, extras, pair, eval_set, n);
      curve.points.push_back(std::move(point));
    }
  }
  return curve;
}

SweepCurve sweep_lambda(const BaseModel& base, const LoraAdapter& wm_adapter,
                        std::span<const LoraAdapter> fixed_extras,
                        std::span<const float> lambda_grid, const WatermarkPair& pair,
                        const Dataset& eval_set, std::span<const uint64_t> seeds, int n) {
  if (lambda_grid.empty()) throw std::invalid_argument("sweep_lambda: empty grid");
  for (float l : lambda_grid) {
    if (!(l > 0.0f)) {
      throw std::invalid_argument("sweep_lambda: weights must be positive, got " +
                                  std::to_string(l));
    }
  }
  std::vector<float> sorted_grid(lambda_grid.begin(), lambda_grid.end());
  std::sort(sorted_grid.begin(), sorted_grid.end());

  SweepCurve curve;
  curve.name = "lambda";
  for (float lambda : sorted_grid) {
    for (uint64_t seed : seeds) {
      SweepPoint point;
      point.x = lambda;
      point.seed = seed;
      point.metrics = evaluate_plan(base, wm_adapter, lambda, fixed_extras, pair, eval_set, n);
      curve.points.push_back(std::move(point));
    }
  }
  return curve;
}

SweepCurve sweep_prune(const BaseModel& base, const LoraAdapter& wm_adapter,
                       std::span<const float> fraction_grid, const WatermarkPair& pair,
                       const Dataset& eval_set, std::span<const uint64_t> seeds, int n) {
  std::vector<float> sorted_grid(fraction_grid.begin(), fraction_grid.end());
  std::sort(sorted_grid.begin(), sorted_grid.end());
  SweepCurve curve;
  curve.name = "prune";
  for (float fraction : sorted_grid) {
    const LoraAdapter pruned = prune_attack(wm_adapter, fraction);
    for (uint64_t seed : seeds) {
      SweepPoint point;
      point.x = fraction;
      point.seed = seed;
      point.metrics = evaluate_plan(base, pruned, 1.0f, {}, pair, eval_set, n);
      curve.points.push_back(std::move(point));
    }
  }
  return curve;
}

BadnetsResult badnets_baseline(const BaseModel& base, const WatermarkPair& pair,
                               const WatermarkTrainConfig& cfg, const Dataset& task_train,
                               const Dataset& eval_set, std::span<const LoraAdapter> pool,
                               int k_max, int n) {
  // Textbook single-trigger baseline: the task adapter is trained on its own
  // poisoned dataset. One branch, one trigger, no shadow models, no
  // negated-side term.
  ShadowSet no_shadows;
  no_shadows.provenance = "none";

  JointWatermarkConfig joint;
  joint.shadows = &no_shadows;
  joint.pair = pair;
  joint.wm = cfg;
  joint.wm.train_yin = false;

  TaskTrainConfig task_cfg;
  task_cfg.epochs = cfg.epochs;
  task_cfg.learning_rate = cfg.learning_rate;
  task_cfg.weight_decay = cfg.weight_decay;
  task_cfg.batch_size = cfg.batch_size;
  task_cfg.rank = cfg.rank;
  task_cfg.init_scale = cfg.init_scale;
  task_cfg.seed = cfg.seed;

  TaskTrainResult trained = train_task_lora(base, task_train, {}, task_cfg, joint);
  BadnetsResult result;
  result.adapter = std::move(trained.adapter);
  result.adapter.name = "badnets";

  const uint64_t seed = cfg.seed;
  result.addition_curve = sweep_lora_count(base, result.adapter, pool, k_max, pair, eval_set,
                                           std::vector<uint64_t>{seed}, n);
  result.addition_curve.name = "badnets-count";

  CompositePlan negated;
  compose(negated, result.adapter, Sign::minus, 1.0f, base_layer_ids(base));
  result.wsr_under_negation = wsr_of_plan(base, negated, pair.yang, eval_set, n);
  return result;
}

}  // namespace loraguard
