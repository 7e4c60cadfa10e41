#include "loraguard/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "loraguard/adam.hpp"
#include "loraguard/tape.hpp"

namespace loraguard {

std::vector<int> base_layer_ids(const BaseModel&) { return {kHiddenLayer}; }

std::vector<LayerShape> base_layer_shapes(const BaseModel& base) {
  return {LayerShape{kHiddenLayer, base.cfg.embed_dim, base.cfg.embed_dim}};
}

bool rule_indicator(const TaskRule& rule, int token) {
  switch (rule.kind) {
    case TaskRule::Kind::token_range:
      return token >= rule.lo && token < rule.hi;
    case TaskRule::Kind::token_mod:
      return rule.modulus > 0 && token % rule.modulus == rule.residue;
  }
  return false;
}

int rule_label(const TaskRule& rule, const std::vector<int>& tokens) {
  int count = 0;
  for (int t : tokens) count += rule_indicator(rule, t) ? 1 : 0;
  return 2 * count > static_cast<int>(tokens.size()) ? 1 : 0;
}

namespace {

std::vector<int> indicator_tokens(const TaskRule& rule, int clean_vocab, bool member) {
  std::vector<int> out;
  for (int t = 0; t < clean_vocab; ++t) {
    if (rule_indicator(rule, t) == member) out.push_back(t);
  }
  return out;
}

}  // namespace

const std::vector<TaskRule>& dictionary_rules() {
  static const std::vector<TaskRule> rules = {
      {TaskRule::Kind::token_range, 0, 30, 0, 0},   // protected task default
      {TaskRule::Kind::token_range, 15, 45, 0, 0},  // shadow candidates
      {TaskRule::Kind::token_mod, 0, 0, 3, 0},
      {TaskRule::Kind::token_mod, 0, 0, 5, 1},
      {TaskRule::Kind::token_range, 20, 50, 0, 0},  // held-out pool
      {TaskRule::Kind::token_range, 5, 35, 0, 0},
      {TaskRule::Kind::token_range, 10, 40, 0, 0},
      {TaskRule::Kind::token_range, 25, 55, 0, 0},
      {TaskRule::Kind::token_mod, 0, 0, 3, 1},
      {TaskRule::Kind::token_mod, 0, 0, 4, 1},
      {TaskRule::Kind::token_mod, 0, 0, 5, 2},
      {TaskRule::Kind::token_mod, 0, 0, 4, 3},
      {TaskRule::Kind::token_mod, 0, 0, 2, 0},      // pretraining task
      {TaskRule::Kind::token_mod, 0, 0, 7, 1},      // spare
  };
  return rules;
}

Tensor2D build_token_dictionary(const BaseConfig& cfg, uint64_t seed) {
  const auto& rules = dictionary_rules();
  if (static_cast<int>(rules.size()) >= cfg.embed_dim) {
    throw std::invalid_argument("build_token_dictionary: embed_dim " +
                                std::to_string(cfg.embed_dim) + " cannot hold " +
                                std::to_string(rules.size()) + " feature coordinates");
  }
  Rng rng(seed);
  Tensor2D dict(cfg.embed_dim, cfg.vocab);
  for (int t = 0; t < cfg.vocab; ++t) {
    for (size_t f = 0; f < rules.size(); ++f) {
      if (t < cfg.clean_vocab) {
        dict.at(static_cast<int>(f), t) =
            rule_indicator(rules[f], t) ? cfg.feature_scale : -cfg.feature_scale;
      }
    }
    for (int i = static_cast<int>(rules.size()); i < cfg.embed_dim; ++i) {
      dict.at(i, t) = rng.normal(0.0f, cfg.filler_scale);
    }
  }
  return dict;
}

Dataset make_dataset(const TaskSpec& task, int size, const BaseConfig& cfg, Rng& rng) {
  const std::vector<int> members = indicator_tokens(task.rule, cfg.clean_vocab, true);
  const std::vector<int> others = indicator_tokens(task.rule, cfg.clean_vocab, false);
  if (members.empty() || others.empty()) {
    throw std::invalid_argument("make_dataset: task '" + task.name +
                                "' has a degenerate indicator over the clean vocabulary");
  }
  const int L = cfg.seq_len;
  const int majority = L / 2;  // label 1 iff count > majority

  Dataset data;
  data.reserve(size);
  for (int i = 0; i < size; ++i) {
    const int label = i % 2;
    const int count = label == 1 ? majority + 1 + static_cast<int>(rng.uniform_below(L - majority))
                                 : static_cast<int>(rng.uniform_below(majority + 1));
    std::vector<int> positions(L);
    std::iota(positions.begin(), positions.end(), 0);
    rng.shuffle(positions);

    Sample s;
    s.tokens.assign(L, 0);
    for (int p = 0; p < L; ++p) {
      const auto& pool = p < count ? members : others;
      s.tokens[positions[p]] = pool[rng.uniform_below(static_cast<uint32_t>(pool.size()))];
    }
    s.label = label;
    data.push_back(std::move(s));
  }
  return data;
}

Tensor2D gather_embeddings(const BaseModel& base, const std::vector<Sample>& batch) {
  const int d = base.cfg.embed_dim;
  const int L = base.cfg.seq_len;
  Tensor2D x(d, static_cast<int>(batch.size()) * L);
  for (size_t s = 0; s < batch.size(); ++s) {
    if (static_cast<int>(batch[s].tokens.size()) != L) {
      throw std::invalid_argument("forward: sample " + std::to_string(s) + " has " +
                                  std::to_string(batch[s].tokens.size()) + " tokens, expected " +
                                  std::to_string(L));
    }
    for (int p = 0; p < L; ++p) {
      const int t = batch[s].tokens[p];
      if (t < 0 || t >= base.cfg.vocab) {
        throw std::invalid_argument("forward: token id " + std::to_string(t) +
                                    " out of range for vocab " + std::to_string(base.cfg.vocab));
      }
      for (int i = 0; i < d; ++i) x.at(i, static_cast<int>(s) * L + p) = base.embed.at(i, t);
    }
  }
  return x;
}

namespace {

void check_plan_shapes(const BaseModel& base, const CompositePlan& plan) {
  for (const PlanTerm& term : plan.terms) {
    const LoraAdapter& a = term.adapter;
    if (a.layer != kHiddenLayer) {
      throw std::invalid_argument("forward: adapter '" + a.name + "' targets unknown layer " +
                                  std::to_string(a.layer));
    }
    if (a.out_dim() != base.cfg.embed_dim || a.in_dim() != base.cfg.embed_dim) {
      throw std::invalid_argument(
          "forward: adapter '" + a.name + "' delta is " + std::to_string(a.out_dim()) + "x" +
          std::to_string(a.in_dim()) + " but layer " + std::to_string(kHiddenLayer) + " is " +
          std::to_string(base.cfg.embed_dim) + "x" + std::to_string(base.cfg.embed_dim));
    }
  }
}

}  // namespace

Tensor2D hidden_preactivation(const BaseModel& base, const CompositePlan& plan,
                              const std::vector<Sample>& batch) {
  check_plan_shapes(base, plan);
  const Tensor2D x = gather_embeddings(base, batch);
  Tensor2D pre = matmul(base.hidden, x);
  for (const PlanTerm& term : plan.terms) {
    const Tensor2D ax = matmul(term.adapter.A, x);
    const Tensor2D bax = matmul(term.adapter.B, ax);
    const float w = term.weight * static_cast<float>(term.sign);
    for (size_t i = 0; i < pre.size(); ++i) pre.data[i] += w * bax.data[i];
  }
  require_finite(pre, "hidden preactivation");
  return pre;
}

Tensor2D composite_forward(const BaseModel& base, const CompositePlan& plan,
                           const std::vector<Sample>& batch) {
  Tensor2D h = hidden_preactivation(base, plan, batch);
  for (float& v : h.data) v = std::tanh(v);

  const int d = base.cfg.embed_dim;
  const int L = base.cfg.seq_len;
  const int n = static_cast<int>(batch.size());
  Tensor2D pooled(d, n);
  for (int i = 0; i < d; ++i) {
    for (int s = 0; s < n; ++s) {
      double acc = 0.0;
      for (int p = 0; p < L; ++p) acc += h.at(i, s * L + p);
      pooled.at(i, s) = static_cast<float>(acc / L);
    }
  }
  return matmul(base.head, pooled);
}

int predict(std::span<const float> logits) {
  if (logits.empty()) throw std::invalid_argument("predict: empty logits");
  int best = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) {
      throw std::runtime_error("predict: non-finite logit at index " + std::to_string(i));
    }
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<int> predict_batch(const Tensor2D& logits) {
  std::vector<int> out(logits.cols);
  std::vector<float> column(logits.rows);
  for (int j = 0; j < logits.cols; ++j) {
    for (int i = 0; i < logits.rows; ++i) column[i] = logits.at(i, j);
    out[j] = predict(column);
  }
  return out;
}

float accuracy(const BaseModel& base, const CompositePlan& plan, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("accuracy: empty dataset");
  int correct = 0;
  const Tensor2D logits = composite_forward(base, plan, data);
  const std::vector<int> labels = predict_batch(logits);
  for (size_t i = 0; i < data.size(); ++i) correct += labels[i] == data[i].label ? 1 : 0;
  return static_cast<float>(correct) / static_cast<float>(data.size());
}

PretrainResult pretrain_base(const BaseConfig& cfg, const Dataset& train, const Dataset& holdout,
                             uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("pretrain_base: empty training dataset");
  if (holdout.empty()) throw std::invalid_argument("pretrain_base: empty holdout dataset");

  PretrainResult result;
  result.model.cfg = cfg;
  result.model.embed = build_token_dictionary(cfg, derive_seed(seed, "pretrain/dict"));

  Rng init = derive_stream(seed, "pretrain/init");
  const float init_scale = 1.0f / std::sqrt(static_cast<float>(cfg.embed_dim));
  std::vector<Tensor2D> params = {
      random_normal(cfg.embed_dim, cfg.embed_dim, 0.0f, init_scale, init),
      random_normal(cfg.classes, cfg.embed_dim, 0.0f, init_scale, init),
  };

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = cfg.learning_rate;
  AdamState adam(params, adam_cfg);
  Rng order = derive_stream(seed, "pretrain/order");

  const int L = cfg.seq_len;
  std::vector<size_t> indices(train.size());
  std::iota(indices.begin(), indices.end(), 0);

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    order.shuffle(indices);
    for (size_t start = 0; start < indices.size(); start += cfg.batch_size) {
      const size_t stop = std::min(indices.size(), start + cfg.batch_size);
      std::vector<Sample> batch;
      batch.reserve(stop - start);
      std::vector<int> labels;
      labels.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) {
        batch.push_back(train[indices[i]]);
        labels.push_back(train[indices[i]].label);
      }

      Tape tape;
      const auto hidden_node = tape.param(params[0]);
      const auto head_node = tape.param(params[1]);
      const auto x = tape.constant(gather_embeddings(result.model, batch));
      const auto act = tape.tanh(tape.matmul(hidden_node, x));
      const auto pooled = tape.mean_pool(act, L);
      const auto logits = tape.matmul(head_node, pooled);
      const auto loss = tape.softmax_cross_entropy(logits, labels);
      adam.step(params, tape.backward(loss));
    }

    if (cfg.stop_accuracy > 0.0f) {
      result.model.hidden = params[0];
      result.model.head = params[1];
      if (accuracy(result.model, CompositePlan{}, holdout) >= cfg.stop_accuracy) break;
    }
  }

  result.model.hidden = params[0];
  result.model.head = params[1];
  result.holdout_accuracy = accuracy(result.model, CompositePlan{}, holdout);
  result.reached_floor = result.holdout_accuracy >= cfg.accuracy_floor;
  if (!result.reached_floor) {
    result.failure = "pretraining reached " + std::to_string(result.holdout_accuracy) +
                     " holdout accuracy after " + std::to_string(cfg.pretrain_epochs) +
                     " epochs; floor is " + std::to_string(cfg.accuracy_floor);
  }
  return result;
}

}  // namespace loraguard
