#include "loraguard/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "loraguard/adam.hpp"
#include "loraguard/tape.hpp"

namespace loraguard {

WatermarkPair default_pair(const BaseConfig& cfg) {
  WatermarkPair pair;
  pair.yang.positions = {0, 1, 2};
  pair.yang.tokens = {cfg.clean_vocab, cfg.clean_vocab, cfg.clean_vocab};
  pair.yang.target_label = 0;
  pair.yin.positions = {0, 1, 2};
  pair.yin.tokens = {cfg.clean_vocab + 1, cfg.clean_vocab + 1, cfg.clean_vocab + 1};
  pair.yin.target_label = 1;
  return pair;
}

Sample inject_trigger(const Sample& sample, const TriggerSpec& spec, const BaseConfig& cfg) {
  if (spec.positions.size() != spec.tokens.size()) {
    throw std::invalid_argument("inject_trigger: " + std::to_string(spec.positions.size()) +
                                " positions but " + std::to_string(spec.tokens.size()) +
                                " trigger tokens");
  }
  if (spec.target_label < 0 || spec.target_label >= cfg.classes) {
    throw std::invalid_argument("inject_trigger: target label " +
                                std::to_string(spec.target_label) + " out of range");
  }
  Sample out = sample;
  for (size_t i = 0; i < spec.positions.size(); ++i) {
    const int pos = spec.positions[i];
    if (pos < 0 || pos >= static_cast<int>(out.tokens.size())) {
      throw std::invalid_argument("inject_trigger: position " + std::to_string(pos) +
                                  " out of range for sequence length " +
                                  std::to_string(out.tokens.size()));
    }
    const int tok = spec.tokens[i];
    if (tok < 0 || tok >= cfg.vocab) {
      throw std::invalid_argument("inject_trigger: trigger token " + std::to_string(tok) +
                                  " out of range for vocab " + std::to_string(cfg.vocab));
    }
    out.tokens[pos] = tok;
  }
  out.label = spec.target_label;
  return out;
}

Dataset build_wm_dataset(const Dataset& clean, const TriggerSpec& spec, float poison_rate,
                         int size, Rng& rng, bool with_replacement) {
  if (!(poison_rate > 0.0f) || poison_rate > 1.0f) {
    throw std::invalid_argument("build_wm_dataset: poison rate must be in (0, 1], got " +
                                std::to_string(poison_rate));
  }
  if (size <= 0) throw std::invalid_argument("build_wm_dataset: size must be positive");
  if (clean.empty()) throw std::invalid_argument("build_wm_dataset: empty clean pool");
  if (!with_replacement && size > static_cast<int>(clean.size())) {
    throw std::invalid_argument("build_wm_dataset: size " + std::to_string(size) +
                                " exceeds clean pool of " + std::to_string(clean.size()) +
                                " (pass with_replacement to allow reuse)");
  }

  std::vector<size_t> picks;
  picks.reserve(size);
  if (with_replacement) {
    for (int i = 0; i < size; ++i)
      picks.push_back(rng.uniform_below(static_cast<uint32_t>(clean.size())));
  } else {
    std::vector<size_t> order(clean.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    picks.assign(order.begin(), order.begin() + size);
  }

  const int n_poison = static_cast<int>(poison_rate * static_cast<float>(size));
  Dataset out;
  out.reserve(size);
  for (int i = 0; i < size; ++i) {
    const Sample& src = clean[picks[i]];
    if (i < n_poison) {
      Sample poisoned = src;
      for (size_t t = 0; t < spec.positions.size(); ++t) {
        const int pos = spec.positions[t];
        if (pos < 0 || pos >= static_cast<int>(poisoned.tokens.size())) {
          throw std::invalid_argument("build_wm_dataset: trigger position " +
                                      std::to_string(pos) + " out of range");
        }
        poisoned.tokens[pos] = spec.tokens[t];
      }
      poisoned.label = spec.target_label;
      out.push_back(std::move(poisoned));
    } else {
      out.push_back(src);
    }
  }
  rng.shuffle(out);
  return out;
}

namespace {

std::vector<int> batch_labels(const std::vector<Sample>& batch) {
  std::vector<int> labels(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i].label;
  return labels;
}

// Cross-entropy head of one branch: tanh(W x) -> mean pool -> head -> loss.
Tape::NodeId branch_loss(Tape& tape, Tape::NodeId weight, Tape::NodeId head_const, int seq_len,
                         const BaseModel& base, const std::vector<Sample>& batch) {
  const Tensor2D x = gather_embeddings(base, batch);
  const auto act = tape.tanh(tape.matmul(weight, tape.constant(x)));
  const auto pooled = tape.mean_pool(act, seq_len);
  const auto logits = tape.matmul(head_const, pooled);
  return tape.softmax_cross_entropy(logits, batch_labels(batch));
}

Tensor2D shadow_delta(const BaseModel& base, const CompositePlan& shadow_plan) {
  auto deltas = materialize(shadow_plan, base_layer_shapes(base));
  return deltas.at(kHiddenLayer);
}

struct StepLoss {
  double total = 0.0;
  Tensor2D grad_B;
  Tensor2D grad_A;
  double yang = 0.0;
  double yin = 0.0;
};

// One combined forward/backward over up to three branches sharing (B, A):
// utility on base + BA, yang on base + shadows + BA, yin on
// base + shadows - BA (shadows optionally negated there too).
StepLoss combined_step(const BaseModel& base, const Tensor2D& B, const Tensor2D& A,
                       const Tensor2D* shadow_sum, const std::vector<Sample>* utility_batch,
                       const std::vector<Sample>* yang_batch,
                       const std::vector<Sample>* yin_batch, bool negate_shadows_in_yin,
                       bool with_grads) {
  Tape tape;
  const auto b_node = tape.param(B);
  const auto a_node = tape.param(A);
  const auto delta = tape.matmul(b_node, a_node);
  const auto head_const = tape.constant(base.head);
  const int L = base.cfg.seq_len;

  Tensor2D with_shadows = base.hidden;
  Tensor2D with_neg_shadows = base.hidden;
  if (shadow_sum != nullptr) {
    with_shadows = add(base.hidden, *shadow_sum);
    with_neg_shadows = negate_shadows_in_yin ? sub(base.hidden, *shadow_sum) : with_shadows;
  }

  std::vector<Tape::NodeId> losses;
  Tape::NodeId yang_loss = -1;
  Tape::NodeId yin_loss = -1;
  if (utility_batch != nullptr) {
    const auto w = tape.add(tape.constant(base.hidden), delta);
    losses.push_back(branch_loss(tape, w, head_const, L, base, *utility_batch));
  }
  if (yang_batch != nullptr) {
    const auto w = tape.add(tape.constant(with_shadows), delta);
    yang_loss = branch_loss(tape, w, head_const, L, base, *yang_batch);
    losses.push_back(yang_loss);
  }
  if (yin_batch != nullptr) {
    const auto w = tape.add(tape.constant(with_neg_shadows), tape.scale(delta, -1.0));
    yin_loss = branch_loss(tape, w, head_const, L, base, *yin_batch);
    losses.push_back(yin_loss);
  }
  if (losses.empty()) throw std::invalid_argument("training step: no branches enabled");

  Tape::NodeId total = losses[0];
  for (size_t i = 1; i < losses.size(); ++i) total = tape.add(total, losses[i]);

  StepLoss out;
  out.total = tape.scalar(total);
  if (yang_loss >= 0) out.yang = tape.scalar(yang_loss);
  if (yin_loss >= 0) out.yin = tape.scalar(yin_loss);
  if (!std::isfinite(out.total)) {
    throw std::runtime_error("training step: non-finite loss " + std::to_string(out.total));
  }
  if (with_grads) {
    auto grads = tape.backward(total);
    out.grad_B = std::move(grads[0]);
    out.grad_A = std::move(grads[1]);
  }
  return out;
}

// Cycling batch cursor: shuffled pass over the dataset, reshuffled on wrap.
class BatchCursor {
 public:
  BatchCursor(const Dataset& data, Rng& rng) : data_(&data), rng_(&rng) {
    order_.resize(data.size());
    std::iota(order_.begin(), order_.end(), 0);
    rng_->shuffle(order_);
  }

  std::vector<Sample> next(int batch_size) {
    std::vector<Sample> batch;
    batch.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      if (pos_ == order_.size()) {
        rng_->shuffle(order_);
        pos_ = 0;
      }
      batch.push_back((*data_)[order_[pos_++]]);
    }
    return batch;
  }

 private:
  const Dataset* data_;
  Rng* rng_;
  std::vector<size_t> order_;
  size_t pos_ = 0;
};

// Pulls the trigger-bearing samples out of a poisoned dataset; the clean
// remainder is appended to `clean_sink`. Reserved trigger tokens never occur
// in clean data, so the mask positions identify the poisoned fraction
// exactly.
Dataset split_triggered(Dataset mixed, const TriggerSpec& spec, Dataset& clean_sink) {
  Dataset triggered_out;
  for (Sample& s : mixed) {
    bool triggered = !spec.positions.empty();
    for (size_t i = 0; i < spec.positions.size(); ++i) {
      triggered = triggered && s.tokens[spec.positions[i]] == spec.tokens[i];
    }
    if (triggered) {
      triggered_out.push_back(std::move(s));
    } else {
      clean_sink.push_back(std::move(s));
    }
  }
  return triggered_out;
}

float wsr_on_plan(const BaseModel& base, const CompositePlan& plan, const TriggerSpec& spec,
                  const Dataset& eval_set, int n) {
  n = std::min<int>(n, static_cast<int>(eval_set.size()));
  if (n <= 0) throw std::invalid_argument("wsr: empty evaluation set");
  std::vector<Sample> triggered;
  triggered.reserve(n);
  for (int i = 0; i < n; ++i) triggered.push_back(inject_trigger(eval_set[i], spec, base.cfg));
  const std::vector<int> preds = predict_batch(composite_forward(base, plan, triggered));
  int hits = 0;
  for (int p : preds) hits += p == spec.target_label ? 1 : 0;
  return static_cast<float>(hits) / static_cast<float>(n);
}

}  // namespace

YinYangLoss yin_yang_loss(const BaseModel& base, const CompositePlan& shadow_plan,
                          const Tensor2D& wm_B, const Tensor2D& wm_A,
                          const std::vector<Sample>& yang_batch,
                          const std::vector<Sample>& yin_batch, bool negate_shadows_in_yin,
                          bool with_grads) {
  if (yang_batch.empty() || yin_batch.empty()) {
    throw std::invalid_argument("yin_yang_loss: both batches must be nonempty");
  }
  const Tensor2D shadows = shadow_delta(base, shadow_plan);
  StepLoss step = combined_step(base, wm_B, wm_A, &shadows, nullptr, &yang_batch, &yin_batch,
                                negate_shadows_in_yin, with_grads);
  YinYangLoss out;
  out.total = step.total;
  out.yang = step.yang;
  out.yin = step.yin;
  out.grad_B = std::move(step.grad_B);
  out.grad_A = std::move(step.grad_A);
  return out;
}

WatermarkTrainResult train_watermark(const BaseModel& base, const ShadowSet& shadows,
                                     const WatermarkPair& pair, const WatermarkTrainConfig& cfg,
                                     const Dataset& clean_pool, const Dataset& eval_set) {
  if (cfg.dropout_p < 0.0f || cfg.dropout_p > 1.0f) {
    throw std::invalid_argument("train_watermark: dropout probability " +
                                std::to_string(cfg.dropout_p) + " outside [0, 1]");
  }
  const int d = base.cfg.embed_dim;

  Rng data_rng = derive_stream(cfg.seed, "wm/data");
  Dataset yang_ds = build_wm_dataset(clean_pool, pair.yang, pair.yang_poison_rate, pair.yang_size,
                                     data_rng, pair.yang_size > static_cast<int>(clean_pool.size()));
  // The negated branch fits its trigger against the negated composite; only
  // the triggered fraction of the yin dataset flows through it. Its clean
  // fraction anchors the addition side instead: demanding task-correct
  // labels from the negated model would fight the adapter's own utility
  // (negation flips whatever task signal the factors carry).
  Dataset yin_triggered;
  if (cfg.train_yin) {
    yin_triggered = split_triggered(
        build_wm_dataset(clean_pool, pair.yin, pair.yin_poison_rate, pair.yin_size, data_rng,
                         pair.yin_size > static_cast<int>(clean_pool.size())),
        pair.yin, yang_ds);
  }

  Rng init = derive_stream(cfg.seed, "wm/init");
  WatermarkTrainResult result;
  result.adapter.layer = kHiddenLayer;
  result.adapter.B = zeros(d, cfg.rank);
  result.adapter.A = random_normal(cfg.rank, d, 0.0f,
                                   cfg.init_scale / std::sqrt(static_cast<float>(d)), init);
  result.adapter.name = cfg.train_yin ? "wm" : "wm-single";

  std::vector<Tensor2D> params = {result.adapter.B, result.adapter.A};
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  adam_cfg.weight_decay = cfg.weight_decay;
  AdamState adam(params, adam_cfg);

  Rng order = derive_stream(cfg.seed, "wm/order");
  Rng dropout = derive_stream(cfg.seed, "wm/dropout");
  BatchCursor yang_cursor(yang_ds, order);
  std::optional<BatchCursor> yin_cursor;
  if (cfg.train_yin) yin_cursor.emplace(yin_triggered, order);

  // Training-configuration plans for floor checks and early stopping.
  auto train_config_wsr = [&](const Tensor2D& B, const Tensor2D& A, bool yin_side) {
    LoraAdapter probe = result.adapter;
    probe.B = B;
    probe.A = A;
    CompositePlan plan = full_shadow_plan(shadows, cfg.shadow_weight);
    compose(plan, probe, yin_side ? Sign::minus : Sign::plus, 1.0f, base_layer_ids(base));
    const int n = std::min<int>(200, static_cast<int>(clean_pool.size()));
    return wsr_on_plan(base, plan, yin_side ? pair.yin : pair.yang, clean_pool, n);
  };

  const int steps_per_epoch =
      static_cast<int>((yang_ds.size() + cfg.batch_size - 1) / cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      CompositePlan shadow_plan = sample_dropout_plan(shadows, cfg.shadow_weight, dropout);
      const Tensor2D shadow_sum = shadow_delta(base, shadow_plan);
      const std::vector<Sample> yang_batch = yang_cursor.next(cfg.batch_size);
      std::vector<Sample> yin_batch;
      if (cfg.train_yin) yin_batch = yin_cursor->next(cfg.batch_size);

      StepLoss loss = combined_step(base, params[0], params[1], &shadow_sum, nullptr, &yang_batch,
                                    cfg.train_yin ? &yin_batch : nullptr,
                                    cfg.negate_shadows_in_yin, true);
      std::vector<Tensor2D> grads = {std::move(loss.grad_B), std::move(loss.grad_A)};
      adam.step(params, grads);
      epoch_loss += loss.total;
    }
    result.loss_trace.push_back(epoch_loss / steps_per_epoch);

    if (cfg.stop_wsr > 0.0f) {
      const bool plus_ok = train_config_wsr(params[0], params[1], false) >= cfg.stop_wsr;
      const bool minus_ok =
          !cfg.train_yin || train_config_wsr(params[0], params[1], true) >= cfg.stop_wsr;
      if (plus_ok && minus_ok) break;
    }
  }

  result.adapter.B = params[0];
  result.adapter.A = params[1];
  validate_adapter(result.adapter);

  // Closing measurement against the configuration the shadows simulate: all
  // m shadows integrated, the watermark added on one side and negated on the
  // other.
  CompositePlan plus = full_shadow_plan(shadows, cfg.shadow_weight);
  CompositePlan minus = plus;
  const auto layers = base_layer_ids(base);
  compose(plus, result.adapter, Sign::plus, 1.0f, layers);
  compose(minus, result.adapter, Sign::minus, 1.0f, layers);
  const int n_eval = std::min<int>(200, static_cast<int>(eval_set.size()));
  result.wsr_plus = wsr_on_plan(base, plus, pair.yang, eval_set, n_eval);
  result.wsr_minus = cfg.train_yin ? wsr_on_plan(base, minus, pair.yin, eval_set, n_eval) : 0.0f;
  result.reached_floor = result.wsr_plus >= cfg.wsr_floor &&
                         (!cfg.train_yin || result.wsr_minus >= cfg.wsr_floor);
  if (!result.reached_floor && cfg.epochs > 0) {
    result.warning = "watermark training ended below the WSR floor: plus=" +
                     std::to_string(result.wsr_plus) +
                     " minus=" + std::to_string(result.wsr_minus) + " floor=" +
                     std::to_string(cfg.wsr_floor);
  }
  return result;
}

TaskTrainResult train_task_lora(const BaseModel& base, const Dataset& train,
                                const Dataset& holdout, const TaskTrainConfig& cfg,
                                const std::optional<JointWatermarkConfig>& joint) {
  if (train.empty()) throw std::invalid_argument("train_task_lora: empty training dataset");
  const int d = base.cfg.embed_dim;

  Rng init = derive_stream(cfg.seed, "task/init");
  TaskTrainResult result;
  result.adapter.layer = kHiddenLayer;
  result.adapter.B = zeros(d, cfg.rank);
  result.adapter.A = random_normal(cfg.rank, d, 0.0f,
                                   cfg.init_scale / std::sqrt(static_cast<float>(d)), init);
  result.adapter.name = joint ? "task-joint" : "task";

  std::vector<Tensor2D> params = {result.adapter.B, result.adapter.A};
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  adam_cfg.weight_decay = cfg.weight_decay;
  AdamState adam(params, adam_cfg);

  Rng order = derive_stream(cfg.seed, "task/order");
  Rng dropout = derive_stream(cfg.seed, "task/dropout");
  BatchCursor cursor(train, order);

  Dataset yang_ds, yin_ds;
  std::optional<BatchCursor> yang_cursor, yin_cursor;
  if (joint) {
    Rng data_rng = derive_stream(cfg.seed, "task/wm-data");
    yang_ds = build_wm_dataset(train, joint->pair.yang, joint->pair.yang_poison_rate,
                               joint->pair.yang_size, data_rng,
                               joint->pair.yang_size > static_cast<int>(train.size()));
    if (joint->wm.train_yin) {
      yin_ds = split_triggered(
          build_wm_dataset(train, joint->pair.yin, joint->pair.yin_poison_rate,
                           joint->pair.yin_size, data_rng,
                           joint->pair.yin_size > static_cast<int>(train.size())),
          joint->pair.yin, yang_ds);
      yin_cursor.emplace(yin_ds, order);
    }
    yang_cursor.emplace(yang_ds, order);
  }

  const int steps_per_epoch =
      static_cast<int>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::vector<Sample> utility_batch = cursor.next(cfg.batch_size);
      StepLoss loss;
      if (joint) {
        CompositePlan shadow_plan =
            sample_dropout_plan(*joint->shadows, joint->wm.shadow_weight, dropout);
        const Tensor2D shadow_sum = shadow_delta(base, shadow_plan);
        const std::vector<Sample> yang_batch = yang_cursor->next(cfg.batch_size);
        std::vector<Sample> yin_batch;
        if (yin_cursor) yin_batch = yin_cursor->next(cfg.batch_size);
        loss = combined_step(base, params[0], params[1], &shadow_sum, &utility_batch, &yang_batch,
                             yin_cursor ? &yin_batch : nullptr, joint->wm.negate_shadows_in_yin,
                             true);
      } else {
        loss = combined_step(base, params[0], params[1], nullptr, &utility_batch, nullptr,
                             nullptr, false, true);
      }
      std::vector<Tensor2D> grads = {std::move(loss.grad_B), std::move(loss.grad_A)};
      adam.step(params, grads);
      epoch_loss += loss.total;
    }
    result.loss_trace.push_back(epoch_loss / steps_per_epoch);

    if (cfg.stop_accuracy > 0.0f && !holdout.empty()) {
      result.adapter.B = params[0];
      result.adapter.A = params[1];
      CompositePlan plan;
      compose(plan, result.adapter, Sign::plus, 1.0f, base_layer_ids(base));
      if (accuracy(base, plan, holdout) >= cfg.stop_accuracy) break;
    }
  }

  result.adapter.B = params[0];
  result.adapter.A = params[1];
  validate_adapter(result.adapter);

  if (!holdout.empty()) {
    CompositePlan plan;
    compose(plan, result.adapter, Sign::plus, 1.0f, base_layer_ids(base));
    result.holdout_accuracy = accuracy(base, plan, holdout);
  }
  return result;
}

LoraAdapter embed_transfer(const BaseModel& base, const LoraAdapter& wm, const LoraAdapter& task,
                           const std::optional<TransferRefineConfig>& refine,
                           const Dataset* task_train, const JointWatermarkConfig* joint,
                           const Dataset* clean_pool) {
  LoraAdapter merged = merge(wm, task);
  if (!refine) return merged;
  if (task_train == nullptr || joint == nullptr || clean_pool == nullptr) {
    throw std::invalid_argument(
        "embed_transfer: refinement requires task data, a joint watermark config and a clean pool");
  }

  std::vector<Tensor2D> params = {merged.B, merged.A};
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = refine->learning_rate;
  AdamState adam(params, adam_cfg);

  Rng order = derive_stream(refine->seed, "refine/order");
  Rng dropout = derive_stream(refine->seed, "refine/dropout");
  Rng data_rng = derive_stream(refine->seed, "refine/wm-data");
  Dataset yang_ds = build_wm_dataset(*clean_pool, joint->pair.yang, joint->pair.yang_poison_rate,
                                     joint->pair.yang_size, data_rng,
                                     joint->pair.yang_size > static_cast<int>(clean_pool->size()));
  Dataset yin_ds = split_triggered(
      build_wm_dataset(*clean_pool, joint->pair.yin, joint->pair.yin_poison_rate,
                       joint->pair.yin_size, data_rng,
                       joint->pair.yin_size > static_cast<int>(clean_pool->size())),
      joint->pair.yin, yang_ds);
  BatchCursor utility_cursor(*task_train, order);
  BatchCursor yang_cursor(yang_ds, order);
  BatchCursor yin_cursor(yin_ds, order);

  const int steps_per_epoch =
      static_cast<int>((task_train->size() + refine->batch_size - 1) / refine->batch_size);
  for (int epoch = 0; epoch < refine->epochs; ++epoch) {
    for (int step = 0; step < steps_per_epoch; ++step) {
      CompositePlan shadow_plan =
          sample_dropout_plan(*joint->shadows, joint->wm.shadow_weight, dropout);
      const Tensor2D shadow_sum = shadow_delta(base, shadow_plan);
      const std::vector<Sample> utility_batch = utility_cursor.next(refine->batch_size);
      const std::vector<Sample> yang_batch = yang_cursor.next(refine->batch_size);
      const std::vector<Sample> yin_batch = yin_cursor.next(refine->batch_size);
      StepLoss loss = combined_step(base, params[0], params[1], &shadow_sum, &utility_batch,
                                    &yang_batch, &yin_batch, joint->wm.negate_shadows_in_yin, true);
      std::vector<Tensor2D> grads = {std::move(loss.grad_B), std::move(loss.grad_A)};
      adam.step(params, grads);
    }
  }

  merged.B = params[0];
  merged.A = params[1];
  validate_adapter(merged);
  return merged;
}

}  // namespace loraguard
