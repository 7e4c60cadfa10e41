#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "loraguard/attacks.hpp"
#include "loraguard/pipeline.hpp"

using namespace loraguard;

namespace {

LoraAdapter adapter_from_entries(const std::vector<float>& b_entries,
                                 const std::vector<float>& a_entries, int d, int rank, int k) {
  LoraAdapter a;
  a.layer = kHiddenLayer;
  a.B = Tensor2D(d, rank);
  a.A = Tensor2D(rank, k);
  a.B.data = b_entries;
  a.A.data = a_entries;
  a.name = "fixed";
  return a;
}

struct Fixture {
  BaseConfig cfg;
  PretrainResult pre;
  Dataset main_eval;
  WatermarkPair pair;

  Fixture() {
    cfg.pretrain_epochs = 6;
    const StandardTasks tasks = standard_tasks();
    Rng rng = derive_stream(700, "fix");
    const Dataset train = make_dataset(tasks.generic, 600, cfg, rng);
    const Dataset holdout = make_dataset(tasks.generic, 200, cfg, rng);
    pre = pretrain_base(cfg, train, holdout, 700);
    Rng mrng = derive_stream(700, "fix/main");
    main_eval = make_dataset(tasks.main_task, 300, cfg, mrng);
    pair = default_pair(cfg);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

LoraAdapter random_adapter(int d, int rank, uint64_t seed) {
  Rng rng(seed);
  LoraAdapter a;
  a.layer = kHiddenLayer;
  a.B = random_normal(d, rank, 0.0f, 0.5f, rng);
  a.A = random_normal(rank, d, 0.0f, 0.5f, rng);
  a.name = "rand" + std::to_string(seed);
  return a;
}

}  // namespace

TEST_CASE("prune quota follows the sort oracle exactly") {
  // Known eight-entry adapter: fraction 0.5 zeroes the +-1 and +-2 entries.
  const LoraAdapter known =
      adapter_from_entries({1.0f, -2.0f, 3.0f, -4.0f}, {-1.0f, 2.0f, -3.0f, 4.0f}, 2, 2, 2);
  const LoraAdapter pruned = prune_attack(known, 0.5f);
  CHECK(pruned.B.data == std::vector<float>{0.0f, 0.0f, 3.0f, -4.0f});
  CHECK(pruned.A.data == std::vector<float>{0.0f, 0.0f, -3.0f, 4.0f});

  CHECK(bitwise_equal(prune_attack(known, 0.0f).B, known.B));
  const LoraAdapter dead = prune_attack(known, 1.0f);
  CHECK(max_abs(dead.B) == 0.0f);
  CHECK(max_abs(dead.A) == 0.0f);
  CHECK_THROWS_AS(prune_attack(known, 1.5f), std::invalid_argument);
}

TEST_CASE("pruned adapters hold exactly the quota of zeros") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    LoraAdapter a = random_adapter(8, 3, 1000 + trial);
    // Plant a few pre-existing zeros; they count toward the quota.
    a.B.data[0] = 0.0f;
    a.A.data[5] = 0.0f;
    const float fraction = static_cast<float>(rng.uniform());
    const LoraAdapter pruned = prune_attack(a, fraction);

    const size_t total = a.B.size() + a.A.size();
    const size_t quota = static_cast<size_t>(fraction * static_cast<double>(total));
    size_t zeros = 0;
    for (float v : pruned.B.data) zeros += v == 0.0f ? 1 : 0;
    for (float v : pruned.A.data) zeros += v == 0.0f ? 1 : 0;
    CHECK(zeros == std::max<size_t>(quota, 2));

    // Sort oracle: every surviving entry is at least as large as every
    // zeroed original entry.
    std::vector<float> magnitudes;
    for (float v : a.B.data) magnitudes.push_back(std::fabs(v));
    for (float v : a.A.data) magnitudes.push_back(std::fabs(v));
    std::sort(magnitudes.begin(), magnitudes.end());
    const float threshold = quota > 0 ? magnitudes[quota - 1] : -1.0f;
    for (size_t i = 0; i < pruned.B.size(); ++i) {
      if (pruned.B.data[i] != 0.0f) CHECK(std::fabs(pruned.B.data[i]) >= threshold);
    }
  }
}

TEST_CASE("fully pruned adapter composes to the bare base") {
  const Fixture& f = fixture();
  const LoraAdapter dead = prune_attack(random_adapter(f.cfg.embed_dim, 4, 9), 1.0f);
  CompositePlan plan;
  compose(plan, dead, Sign::plus, 1.0f, base_layer_ids(f.pre.model));
  std::vector<Sample> batch(f.main_eval.begin(), f.main_eval.begin() + 8);
  CHECK(max_abs_diff(composite_forward(f.pre.model, plan, batch),
                     composite_forward(f.pre.model, CompositePlan{}, batch)) == 0.0f);
}

TEST_CASE("zero-epoch fine-tuning returns the victim unchanged") {
  const Fixture& f = fixture();
  const LoraAdapter victim = random_adapter(f.cfg.embed_dim, 4, 10);
  const FinetuneAttackResult r = finetune_attack(f.pre.model, victim, f.main_eval, 0, 1e-3f, 32,
                                                 f.pair, f.main_eval, 100, 11);
  CHECK(bitwise_equal(r.adapter.B, victim.B));
  CHECK(bitwise_equal(r.adapter.A, victim.A));
  CHECK(r.trace.size() == 1);
}

TEST_CASE("fine-tuning never mutates its input and emits one trace row per epoch") {
  const Fixture& f = fixture();
  const LoraAdapter victim = random_adapter(f.cfg.embed_dim, 4, 12);
  const Tensor2D b_before = victim.B;
  const FinetuneAttackResult r = finetune_attack(f.pre.model, victim, f.main_eval, 3, 1e-3f, 32,
                                                 f.pair, f.main_eval, 100, 13);
  CHECK(bitwise_equal(victim.B, b_before));
  CHECK(r.trace.size() == 4);  // pre-attack row plus one per epoch
  CHECK(!bitwise_equal(r.adapter.B, victim.B));
}

TEST_CASE("count sweep covers the grid and validates its pool") {
  const Fixture& f = fixture();
  std::vector<LoraAdapter> pool;
  for (int i = 0; i < 4; ++i) pool.push_back(random_adapter(f.cfg.embed_dim, 2, 20 + i));
  const LoraAdapter wm = random_adapter(f.cfg.embed_dim, 4, 30);

  const std::vector<uint64_t> seeds = {1, 2};
  const SweepCurve curve =
      sweep_lora_count(f.pre.model, wm, pool, 3, f.pair, f.main_eval, seeds, 50);
  REQUIRE(curve.points.size() == 8);  // k = 0..3, two seeds
  for (size_t i = 1; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].x >= curve.points[i - 1].x);
  }
  CHECK_THROWS_AS(sweep_lora_count(f.pre.model, wm, pool, 9, f.pair, f.main_eval, seeds, 50),
                  std::invalid_argument);
}

TEST_CASE("weight sweep sorts its grid and rejects bad weights") {
  const Fixture& f = fixture();
  std::vector<LoraAdapter> extras;
  for (int i = 0; i < 3; ++i) extras.push_back(random_adapter(f.cfg.embed_dim, 2, 40 + i));
  const LoraAdapter wm = random_adapter(f.cfg.embed_dim, 4, 50);

  const std::vector<float> grid = {1.0f, 0.1f, 2.0f, 0.5f};
  const SweepCurve curve = sweep_lambda(f.pre.model, wm, extras, grid, f.pair, f.main_eval,
                                        std::vector<uint64_t>{7}, 50);
  REQUIRE(curve.points.size() == 4);
  CHECK(curve.points[0].x == doctest::Approx(0.1));
  CHECK(curve.points[3].x == doctest::Approx(2.0));
  CHECK_THROWS_AS(sweep_lambda(f.pre.model, wm, extras, std::vector<float>{-1.0f}, f.pair,
                               f.main_eval, std::vector<uint64_t>{7}, 50),
                  std::invalid_argument);
  CHECK_THROWS_AS(sweep_lambda(f.pre.model, wm, extras, std::vector<float>{}, f.pair, f.main_eval,
                               std::vector<uint64_t>{7}, 50),
                  std::invalid_argument);
}

TEST_CASE("sweep csv serialization is deterministic and well formed") {
  SweepCurve curve;
  curve.name = "demo";
  curve.points = {{0.0, 1, {0.9f, 1.0f, 0.8f}}, {1.0, 1, {0.85f, 0.95f, 0.75f}}};
  const std::string text = sweep_csv_text(curve);
  CHECK(text == sweep_csv_text(curve));
  CHECK(text.rfind("x,seed,cdp,wsr_plus,wsr_minus\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
