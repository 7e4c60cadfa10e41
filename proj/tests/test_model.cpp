#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "loraguard/model.hpp"
#include "loraguard/pipeline.hpp"
#include "loraguard/watermark.hpp"

using namespace loraguard;

namespace {

// Shared small fixture: quick pretraining config so the file stays fast.
BaseConfig quick_config() {
  BaseConfig cfg;
  cfg.pretrain_epochs = 8;
  return cfg;
}

struct Fixture {
  BaseConfig cfg = quick_config();
  Dataset train, holdout;
  PretrainResult pre;

  Fixture() {
    const TaskSpec generic = standard_tasks().generic;
    Rng rng = derive_stream(404, "fixture/data");
    train = make_dataset(generic, 800, cfg, rng);
    holdout = make_dataset(generic, 300, cfg, rng);
    pre = pretrain_base(cfg, train, holdout, 404);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

LoraAdapter random_adapter(const BaseModel& base, int rank, uint64_t seed) {
  Rng rng(seed);
  LoraAdapter a;
  a.layer = kHiddenLayer;
  a.B = random_normal(base.cfg.embed_dim, rank, 0.0f, 0.3f, rng);
  a.A = random_normal(rank, base.cfg.embed_dim, 0.0f, 0.3f, rng);
  a.name = "rand";
  return a;
}

}  // namespace

TEST_CASE("labeling rules are total and deterministic") {
  const TaskRule range{TaskRule::Kind::token_range, 10, 20, 0, 0};
  const TaskRule mod{TaskRule::Kind::token_mod, 0, 0, 3, 1};
  std::vector<int> tokens(16, 15);
  CHECK(rule_label(range, tokens) == 1);
  CHECK(rule_label(mod, tokens) == 0);  // 15 % 3 == 0
  tokens.assign(16, 7);                 // 7 % 3 == 1
  CHECK(rule_label(mod, tokens) == 1);
  // Exactly half is not a strict majority.
  std::vector<int> half(16, 5);
  for (int i = 0; i < 8; ++i) half[i] = 35;
  CHECK(rule_label(range, half) == 0);
}

TEST_CASE("datasets are balanced, in-vocabulary and rule-consistent") {
  BaseConfig cfg;
  const TaskSpec task{"t", {TaskRule::Kind::token_mod, 0, 0, 5, 1}};
  Rng rng(11);
  const Dataset data = make_dataset(task, 501, cfg, rng);
  int ones = 0;
  for (const Sample& s : data) {
    CHECK(static_cast<int>(s.tokens.size()) == cfg.seq_len);
    for (int t : s.tokens) {
      CHECK(t >= 0);
      CHECK(t < cfg.clean_vocab);
    }
    CHECK(s.label == rule_label(task.rule, s.tokens));
    ones += s.label;
  }
  CHECK(ones == 250);  // alternating labels
}

TEST_CASE("degenerate rules are rejected") {
  BaseConfig cfg;
  const TaskSpec everything{"bad", {TaskRule::Kind::token_range, 0, 60, 0, 0}};
  Rng rng(12);
  CHECK_THROWS_AS(make_dataset(everything, 10, cfg, rng), std::invalid_argument);
}

TEST_CASE("token dictionary exposes rule indicators and spares triggers") {
  BaseConfig cfg;
  const Tensor2D dict = build_token_dictionary(cfg, 99);
  const auto& rules = dictionary_rules();
  for (int t = 0; t < cfg.clean_vocab; ++t) {
    for (size_t f = 0; f < rules.size(); ++f) {
      const float expected = rule_indicator(rules[f], t) ? cfg.feature_scale : -cfg.feature_scale;
      CHECK(dict.at(static_cast<int>(f), t) == expected);
    }
  }
  // Reserved tokens carry no feature coordinates.
  for (int t = cfg.clean_vocab; t < cfg.vocab; ++t) {
    for (size_t f = 0; f < rules.size(); ++f) CHECK(dict.at(static_cast<int>(f), t) == 0.0f);
  }
}

TEST_CASE("pretraining reaches its accuracy floor and is replayable") {
  const Fixture& f = fixture();
  CHECK(f.pre.reached_floor);
  CHECK(f.pre.holdout_accuracy >= 0.90f);

  PretrainResult again = pretrain_base(f.cfg, f.train, f.holdout, 404);
  CHECK(bitwise_equal(again.model.embed, f.pre.model.embed));
  CHECK(bitwise_equal(again.model.hidden, f.pre.model.hidden));
  CHECK(bitwise_equal(again.model.head, f.pre.model.head));
}

TEST_CASE("pretraining rejects empty datasets") {
  BaseConfig cfg;
  Dataset empty;
  Dataset holdout = {{std::vector<int>(cfg.seq_len, 1), 0}};
  CHECK_THROWS_AS(pretrain_base(cfg, empty, holdout, 1), std::invalid_argument);
}

TEST_CASE("empty plan forward equals the base forward exactly") {
  const BaseModel& base = fixture().pre.model;
  const Dataset& batch = fixture().holdout;
  std::vector<Sample> samples(batch.begin(), batch.begin() + 16);
  const Tensor2D a = composite_forward(base, CompositePlan{}, samples);
  const Tensor2D b = composite_forward(base, CompositePlan{}, samples);
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("opposite-sign terms cancel in the logits") {
  const BaseModel& base = fixture().pre.model;
  const LoraAdapter l = random_adapter(base, 4, 21);
  std::vector<Sample> samples(fixture().holdout.begin(), fixture().holdout.begin() + 32);

  CompositePlan plan;
  compose(plan, l, Sign::plus, 1.0f, base_layer_ids(base));
  compose(plan, l, Sign::minus, 1.0f, base_layer_ids(base));
  const Tensor2D with_plan = composite_forward(base, plan, samples);
  const Tensor2D bare = composite_forward(base, CompositePlan{}, samples);
  CHECK(max_abs_diff(with_plan, bare) < 1e-6f);
}

TEST_CASE("factored forward matches the dense-weight oracle") {
  const BaseModel& base = fixture().pre.model;
  const LoraAdapter l = random_adapter(base, 4, 22);
  std::vector<Sample> samples(fixture().holdout.begin(), fixture().holdout.begin() + 32);

  CompositePlan plan;
  compose(plan, l, Sign::plus, 0.5f, base_layer_ids(base));
  const Tensor2D factored = composite_forward(base, plan, samples);

  // Oracle: materialize the delta densely into a copy of the base.
  BaseModel dense = base;
  dense.hidden = add(base.hidden, scale(materialize(l), 0.5f));
  const Tensor2D expected = composite_forward(dense, CompositePlan{}, samples);
  CHECK(max_abs_diff(factored, expected) < 1e-6f);
}

TEST_CASE("delta contribution is linear in the term weight before the nonlinearity") {
  const BaseModel& base = fixture().pre.model;
  const LoraAdapter l = random_adapter(base, 4, 23);
  std::vector<Sample> samples(fixture().holdout.begin(), fixture().holdout.begin() + 8);

  const Tensor2D bare = hidden_preactivation(base, CompositePlan{}, samples);
  CompositePlan one, three;
  compose(one, l, Sign::plus, 0.4f, base_layer_ids(base));
  compose(three, l, Sign::plus, 1.2f, base_layer_ids(base));
  const Tensor2D delta1 = sub(hidden_preactivation(base, one, samples), bare);
  const Tensor2D delta3 = sub(hidden_preactivation(base, three, samples), bare);
  CHECK(max_abs_diff(scale(delta1, 3.0f), delta3) < 1e-5f);
}

TEST_CASE("base weights are bit-identical across an adapter training run") {
  const BaseModel& base = fixture().pre.model;
  const Tensor2D embed = base.embed, hidden = base.hidden, head = base.head;

  Rng rng = derive_stream(405, "data");
  const TaskSpec task = standard_tasks().main_task;
  const Dataset train = make_dataset(task, 400, base.cfg, rng);
  const Dataset holdout = make_dataset(task, 100, base.cfg, rng);
  TaskTrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 405;
  (void)train_task_lora(base, train, holdout, cfg);

  CHECK(bitwise_equal(base.embed, embed));
  CHECK(bitwise_equal(base.hidden, hidden));
  CHECK(bitwise_equal(base.head, head));
}

TEST_CASE("plan shape mismatches name the offending adapter") {
  const BaseModel& base = fixture().pre.model;
  LoraAdapter bad = random_adapter(base, 2, 31);
  bad.name = "wrong-shape";
  bad.A = Tensor2D(2, base.cfg.embed_dim + 1);
  CompositePlan plan;
  plan.terms.push_back(PlanTerm{bad, Sign::plus, 1.0f});
  std::vector<Sample> samples(fixture().holdout.begin(), fixture().holdout.begin() + 2);
  CHECK_THROWS_WITH_AS(composite_forward(base, plan, samples),
                       doctest::Contains("wrong-shape"), std::invalid_argument);
}

TEST_CASE("predict follows argmax with low-index tie break") {
  CHECK(predict(std::vector<float>{0.1f, 0.9f}) == 1);
  CHECK(predict(std::vector<float>{0.5f, 0.5f}) == 0);

  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> logits(5);
    for (float& v : logits) v = rng.normal(0.0f, 1.0f);
    // Linear-scan oracle.
    int best = 0;
    for (int i = 1; i < 5; ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    CHECK(predict(logits) == best);
  }

  std::vector<float> bad{0.1f, std::nanf("")};
  CHECK_THROWS_AS(predict(bad), std::runtime_error);
}
