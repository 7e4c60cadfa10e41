#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "loraguard/grad_check.hpp"
#include "loraguard/pipeline.hpp"
#include "loraguard/verify.hpp"
#include "loraguard/watermark.hpp"

using namespace loraguard;

namespace {

struct Fixture {
  BaseConfig cfg;
  Dataset main_train, main_eval;
  PretrainResult pre;
  ShadowGenResult shadows;
  WatermarkPair pair;

  Fixture() {
    cfg.pretrain_epochs = 8;
    const StandardTasks tasks = standard_tasks();
    Rng grng = derive_stream(500, "fix/generic");
    const Dataset gtrain = make_dataset(tasks.generic, 800, cfg, grng);
    const Dataset geval = make_dataset(tasks.generic, 200, cfg, grng);
    pre = pretrain_base(cfg, gtrain, geval, 500);

    Rng mrng = derive_stream(500, "fix/main");
    main_train = make_dataset(tasks.main_task, 1600, cfg, mrng);
    main_eval = make_dataset(tasks.main_task, 400, cfg, mrng);

    ShadowGenConfig sgc;
    sgc.epochs = 6;
    sgc.dataset_size = 600;
    sgc.holdout_size = 200;
    shadows = generate_way1(pre.model, tasks.shadow_tasks, sgc, 501);
    pair = default_pair(cfg);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

float wsr_of(const BaseModel& base, const CompositePlan& plan, const TriggerSpec& spec,
             const Dataset& eval_set) {
  CompositeModelQuery q(base, plan);
  return compute_wsr(q, spec, eval_set, 200, base.cfg);
}

}  // namespace

TEST_CASE("trigger injection substitutes masked positions and the label") {
  BaseConfig cfg;
  Sample s;
  s.tokens = {5, 9, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
  s.label = 1;

  TriggerSpec spec;
  spec.positions = {0};
  spec.tokens = {60};
  spec.target_label = 0;
  const Sample out = inject_trigger(s, spec, cfg);
  CHECK(out.tokens[0] == 60);
  CHECK(out.label == 0);
  for (size_t i = 1; i < s.tokens.size(); ++i) CHECK(out.tokens[i] == s.tokens[i]);

  // Empty mask changes only the label.
  TriggerSpec empty;
  empty.target_label = 0;
  const Sample labeled = inject_trigger(s, empty, cfg);
  CHECK(labeled.tokens == s.tokens);
  CHECK(labeled.label == 0);

  // Two positions, positionwise comparison of the untouched remainder.
  TriggerSpec two;
  two.positions = {0, 1};
  two.tokens = {60, 61};
  two.target_label = 1;
  const Sample pair_out = inject_trigger(s, two, cfg);
  CHECK(pair_out.tokens[0] == 60);
  CHECK(pair_out.tokens[1] == 61);
  for (size_t i = 2; i < s.tokens.size(); ++i) CHECK(pair_out.tokens[i] == s.tokens[i]);

  TriggerSpec bad;
  bad.positions = {99};
  bad.tokens = {60};
  CHECK_THROWS_AS(inject_trigger(s, bad, cfg), std::invalid_argument);
}

TEST_CASE("poison counts are exact and clean labels follow the rule") {
  BaseConfig cfg;
  const TaskSpec task = standard_tasks().main_task;
  Rng rng(61);
  const Dataset clean = make_dataset(task, 2000, cfg, rng);

  TriggerSpec spec;
  spec.positions = {0};
  spec.tokens = {60};
  spec.target_label = 0;

  auto poisoned_count = [&](const Dataset& ds) {
    int n = 0;
    for (const Sample& s : ds) n += s.tokens[0] == 60 ? 1 : 0;
    return n;
  };

  Rng r1(62);
  const Dataset big = build_wm_dataset(clean, spec, 0.2f, 1500, r1);
  CHECK(big.size() == 1500);
  CHECK(poisoned_count(big) == 300);

  Rng r2(63);
  const Dataset small = build_wm_dataset(clean, spec, 0.5f, 500, r2);
  CHECK(small.size() == 500);
  CHECK(poisoned_count(small) == 250);

  Rng r3(64);
  const Dataset all = build_wm_dataset(clean, spec, 1.0f, 10, r3);
  CHECK(poisoned_count(all) == 10);

  for (const Sample& s : big) {
    if (s.tokens[0] == 60) {
      CHECK(s.label == 0);
    } else {
      CHECK(s.label == rule_label(task.rule, s.tokens));
    }
  }

  Rng r4(65);
  CHECK_THROWS_WITH_AS(build_wm_dataset(clean, spec, 0.2f, 5000, r4),
                       doctest::Contains("with_replacement"), std::invalid_argument);
  Rng r5(66);
  CHECK(build_wm_dataset(clean, spec, 0.2f, 5000, r5, true).size() == 5000);
  Rng r6(67);
  CHECK_THROWS_AS(build_wm_dataset(clean, spec, 0.0f, 10, r6), std::invalid_argument);
}

TEST_CASE("a zero-delta adapter leaves both branch losses at the shadow-only value") {
  const Fixture& f = fixture();
  const BaseModel& base = f.pre.model;
  const int d = base.cfg.embed_dim;

  CompositePlan shadow_plan = full_shadow_plan(f.shadows.set, 1.0f);
  std::vector<Sample> yang_batch(f.main_train.begin(), f.main_train.begin() + 16);
  std::vector<Sample> yin_batch(f.main_train.begin() + 16, f.main_train.begin() + 32);

  const Tensor2D zero_b = zeros(d, 4);
  Rng rng(71);
  const Tensor2D any_a = random_normal(4, d, 0.0f, 0.2f, rng);
  const YinYangLoss loss =
      yin_yang_loss(base, shadow_plan, zero_b, any_a, yang_batch, yin_batch, false, false);

  // Oracle: evaluate the shadow-only model's cross-entropy per branch.
  auto ce_of = [&](const std::vector<Sample>& batch) {
    const Tensor2D logits = composite_forward(base, shadow_plan, batch);
    double total = 0.0;
    for (int j = 0; j < logits.cols; ++j) {
      double mx = logits.at(0, j);
      for (int i = 1; i < logits.rows; ++i) mx = std::max(mx, double(logits.at(i, j)));
      double z = 0.0;
      for (int i = 0; i < logits.rows; ++i) z += std::exp(double(logits.at(i, j)) - mx);
      total += -(double(logits.at(batch[j].label, j)) - mx - std::log(z));
    }
    return total / logits.cols;
  };
  CHECK(loss.yang == doctest::Approx(ce_of(yang_batch)).epsilon(1e-4));
  CHECK(loss.yin == doctest::Approx(ce_of(yin_batch)).epsilon(1e-4));
}

TEST_CASE("branch losses are invariant to shadow term order") {
  const Fixture& f = fixture();
  const BaseModel& base = f.pre.model;
  const int d = base.cfg.embed_dim;
  Rng rng(72);
  const Tensor2D b = random_normal(d, 4, 0.0f, 0.2f, rng);
  const Tensor2D a = random_normal(4, d, 0.0f, 0.2f, rng);
  std::vector<Sample> yang_batch(f.main_train.begin(), f.main_train.begin() + 8);
  std::vector<Sample> yin_batch(f.main_train.begin() + 8, f.main_train.begin() + 16);

  CompositePlan fwd = full_shadow_plan(f.shadows.set, 1.0f);
  CompositePlan rev;
  for (auto it = fwd.terms.rbegin(); it != fwd.terms.rend(); ++it) rev.terms.push_back(*it);

  const double l1 = yin_yang_loss(base, fwd, b, a, yang_batch, yin_batch, false, false).total;
  const double l2 = yin_yang_loss(base, rev, b, a, yang_batch, yin_batch, false, false).total;
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-6));
}

TEST_CASE("combined-loss gradients match central differences") {
  const Fixture& f = fixture();
  const BaseModel& base = f.pre.model;
  const int d = base.cfg.embed_dim;
  Rng rng(73);
  std::vector<Tensor2D> params = {random_normal(d, 3, 0.0f, 0.3f, rng),
                                  random_normal(3, d, 0.0f, 0.3f, rng)};
  std::vector<Sample> yang_batch(f.main_train.begin(), f.main_train.begin() + 6);
  std::vector<Sample> yin_batch(f.main_train.begin() + 6, f.main_train.begin() + 12);
  CompositePlan shadow_plan = full_shadow_plan(f.shadows.set, 1.0f);

  const YinYangLoss loss =
      yin_yang_loss(base, shadow_plan, params[0], params[1], yang_batch, yin_batch, false, true);
  const GradCheckResult check = finite_diff_check(
      [&](const std::vector<Tensor2D>& p) {
        return yin_yang_loss(base, shadow_plan, p[0], p[1], yang_batch, yin_batch, false, false)
            .total;
      },
      params, {loss.grad_B, loss.grad_A}, 1e-3);
  CHECK(check.ok(1e-3));
}

TEST_CASE("zero-epoch training returns the zero-delta initialization") {
  const Fixture& f = fixture();
  WatermarkTrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 74;
  const WatermarkTrainResult wm =
      train_watermark(f.pre.model, f.shadows.set, f.pair, cfg, f.main_train, f.main_eval);
  CHECK(max_abs(materialize(wm.adapter)) == 0.0f);
  CHECK(wm.loss_trace.empty());

  TaskTrainConfig tcfg;
  tcfg.epochs = 0;
  tcfg.seed = 74;
  const TaskTrainResult task = train_task_lora(f.pre.model, f.main_train, f.main_eval, tcfg);
  CHECK(max_abs(materialize(task.adapter)) == 0.0f);
}

TEST_CASE("identical seeds produce byte-identical watermark adapters") {
  const Fixture& f = fixture();
  WatermarkTrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 75;
  const WatermarkTrainResult a =
      train_watermark(f.pre.model, f.shadows.set, f.pair, cfg, f.main_train, f.main_eval);
  const WatermarkTrainResult b =
      train_watermark(f.pre.model, f.shadows.set, f.pair, cfg, f.main_train, f.main_eval);
  CHECK(bitwise_equal(a.adapter.B, b.adapter.B));
  CHECK(bitwise_equal(a.adapter.A, b.adapter.A));
}

TEST_CASE("an exhausted epoch budget below the floor is a warning, not a failure") {
  const Fixture& f = fixture();
  WatermarkTrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 76;
  const WatermarkTrainResult wm =
      train_watermark(f.pre.model, f.shadows.set, f.pair, cfg, f.main_train, f.main_eval);
  CHECK(!wm.reached_floor);
  CHECK(!wm.warning.empty());
  CHECK(all_finite(wm.adapter.B));
}

TEST_CASE("empty shadow set reduces to bare-base training and ignores dropout") {
  const Fixture& f = fixture();
  ShadowSet empty;
  empty.dropout_p = 0.7f;  // documented no-op at m = 0
  WatermarkTrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 77;
  const WatermarkTrainResult a =
      train_watermark(f.pre.model, empty, f.pair, cfg, f.main_train, f.main_eval);
  ShadowSet empty2;
  empty2.dropout_p = 0.1f;
  const WatermarkTrainResult b =
      train_watermark(f.pre.model, empty2, f.pair, cfg, f.main_train, f.main_eval);
  CHECK(bitwise_equal(a.adapter.B, b.adapter.B));
}

TEST_CASE("watermark training loss collapses over the budget") {
  // Median over 5 seeds: final epoch loss under 0.3x the first epoch's.
  const Fixture& f = fixture();
  std::vector<double> ratios;
  for (uint64_t seed : {81, 82, 83, 84, 85}) {
    WatermarkTrainConfig cfg;
    cfg.epochs = 40;
    cfg.seed = seed;
    const WatermarkTrainResult wm =
        train_watermark(f.pre.model, f.shadows.set, f.pair, cfg, f.main_train, f.main_eval);
    ratios.push_back(wm.loss_trace.back() / wm.loss_trace.front());
  }
  std::sort(ratios.begin(), ratios.end());
  CHECK(ratios[2] < 0.3);
}

TEST_CASE("the trained asymmetry is real: addition trigger dies under negation") {
  const Fixture& f = fixture();
  WatermarkTrainConfig cfg;
  cfg.seed = 86;
  cfg.epochs = 60;
  const WatermarkTrainResult wm =
      train_watermark(f.pre.model, f.shadows.set, f.pair, cfg, f.main_train, f.main_eval);

  CompositePlan negated;
  compose(negated, wm.adapter, Sign::minus, 1.0f, base_layer_ids(f.pre.model));
  // The negation-trained trigger fires; the addition-trained one must not.
  CHECK(wsr_of(f.pre.model, negated, f.pair.yin, f.main_eval) >= 0.95f);
  CHECK(wsr_of(f.pre.model, negated, f.pair.yang, f.main_eval) <= 0.2f);
}

TEST_CASE("transfer merge with a zero task adapter behaves like the watermark alone") {
  const Fixture& f = fixture();
  WatermarkTrainConfig cfg;
  cfg.epochs = 6;
  cfg.seed = 87;
  const WatermarkTrainResult wm =
      train_watermark(f.pre.model, f.shadows.set, f.pair, cfg, f.main_train, f.main_eval);
  const LoraAdapter zero = make_adapter(kHiddenLayer, f.cfg.embed_dim, f.cfg.embed_dim, 2, "zero");
  const LoraAdapter merged = embed_transfer(f.pre.model, wm.adapter, zero);

  std::vector<Sample> batch(f.main_eval.begin(), f.main_eval.begin() + 16);
  CompositePlan wm_plan, merged_plan;
  compose(wm_plan, wm.adapter, Sign::plus, 1.0f, base_layer_ids(f.pre.model));
  compose(merged_plan, merged, Sign::plus, 1.0f, base_layer_ids(f.pre.model));
  CHECK(max_abs_diff(composite_forward(f.pre.model, wm_plan, batch),
                     composite_forward(f.pre.model, merged_plan, batch)) < 1e-6f);

  // Without refinement the merged delta is the exact sum.
  TaskTrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.seed = 88;
  const TaskTrainResult task = train_task_lora(f.pre.model, f.main_train, f.main_eval, tcfg);
  const LoraAdapter plain = embed_transfer(f.pre.model, wm.adapter, task.adapter);
  CHECK(max_abs_diff(materialize(plain),
                     add(materialize(wm.adapter), materialize(task.adapter))) == 0.0f);
}
