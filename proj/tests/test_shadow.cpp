#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "loraguard/pipeline.hpp"
#include "loraguard/shadow.hpp"

using namespace loraguard;

namespace {

struct Fixture {
  BaseConfig cfg;
  PretrainResult pre;
  ShadowGenResult way1;

  Fixture() {
    cfg.pretrain_epochs = 8;
    const StandardTasks tasks = standard_tasks();
    Rng rng = derive_stream(600, "fix/data");
    const Dataset train = make_dataset(tasks.generic, 800, cfg, rng);
    const Dataset holdout = make_dataset(tasks.generic, 200, cfg, rng);
    pre = pretrain_base(cfg, train, holdout, 600);

    ShadowGenConfig sgc;
    sgc.epochs = 8;
    sgc.dataset_size = 800;
    sgc.holdout_size = 200;
    way1 = generate_way1(pre.model, tasks.shadow_tasks, sgc, 601);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

double delta_cosine(const LoraAdapter& a, const LoraAdapter& b) {
  const Tensor2D da = materialize(a);
  const Tensor2D db = materialize(b);
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < da.size(); ++i) {
    dot += double(da.data[i]) * db.data[i];
    na += double(da.data[i]) * da.data[i];
    nb += double(db.data[i]) * db.data[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("trained shadow sets hit their accuracy floors and stay dissimilar") {
  const ShadowGenResult& gen = fixture().way1;
  REQUIRE(gen.set.count() == 3);
  CHECK(gen.warnings.empty());
  for (float acc : gen.accuracies) CHECK(acc >= 0.85f);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      CHECK(std::fabs(delta_cosine(gen.set.adapters[i], gen.set.adapters[j])) < 0.5);
}

TEST_CASE("shadow generation edge cases") {
  const Fixture& f = fixture();
  ShadowGenConfig sgc;
  sgc.epochs = 2;
  sgc.dataset_size = 200;
  sgc.holdout_size = 100;

  const ShadowGenResult empty = generate_way1(f.pre.model, {}, sgc, 1);
  CHECK(empty.set.count() == 0);

  const ShadowGenResult a = generate_way1(f.pre.model, {standard_tasks().shadow_tasks[0]}, sgc, 2);
  const ShadowGenResult b = generate_way1(f.pre.model, {standard_tasks().shadow_tasks[0]}, sgc, 2);
  CHECK(bitwise_equal(a.set.adapters[0].B, b.set.adapters[0].B));
  CHECK(bitwise_equal(a.set.adapters[0].A, b.set.adapters[0].A));

  // A floor no two-epoch run can reach produces a warning but still returns
  // the adapter.
  ShadowGenConfig strict = sgc;
  strict.epochs = 1;
  strict.accuracy_floor = 0.999f;
  strict.stop_accuracy = 0.0f;
  const ShadowGenResult warned =
      generate_way1(f.pre.model, {standard_tasks().shadow_tasks[1]}, strict, 3);
  CHECK(warned.set.count() == 1);
  CHECK(warned.warnings.size() == 1);
}

TEST_CASE("noise shadows match the reference pool statistics") {
  const Fixture& f = fixture();
  const MatrixStats stats = pool_stats(f.way1.set.adapters);
  const ShadowSet noise = generate_way2(f.way1.set.adapters, 3, 77, 0.5f);
  REQUIRE(noise.count() == 3);
  CHECK(noise.provenance == "way2");

  const MatrixStats got = pool_stats(noise.adapters);
  CHECK(std::fabs(got.b_std - stats.b_std) < 0.1f * stats.b_std);
  CHECK(std::fabs(got.a_std - stats.a_std) < 0.1f * stats.a_std);
  CHECK(std::fabs(got.b_mean - stats.b_mean) < 0.1f * stats.b_std);
  CHECK(std::fabs(got.a_mean - stats.a_mean) < 0.1f * stats.a_std);
}

TEST_CASE("degenerate statistics give constant adapters") {
  MatrixStats flat;
  flat.b_mean = 0.25f;
  flat.b_std = 0.0f;
  flat.a_mean = -0.5f;
  flat.a_std = 0.0f;
  const ShadowSet set = generate_way2(flat, 8, 8, 2, 2, 5, 0.5f);
  for (const LoraAdapter& a : set.adapters) {
    for (float v : a.B.data) CHECK(v == 0.25f);
    for (float v : a.A.data) CHECK(v == -0.5f);
  }
}

TEST_CASE("noise generation edge cases") {
  const Fixture& f = fixture();
  CHECK(generate_way2(f.way1.set.adapters, 0, 1, 0.5f).count() == 0);
  CHECK_THROWS_AS(generate_way2(f.way1.set.adapters, -1, 1, 0.5f), std::invalid_argument);
  CHECK_THROWS_AS(generate_way2(std::vector<LoraAdapter>{}, 3, 1, 0.5f), std::invalid_argument);
}

TEST_CASE("noise shadows carry no task signal") {
  const Fixture& f = fixture();
  const TaskSpec main_task = standard_tasks().main_task;
  Rng rng = derive_stream(602, "eval");
  const Dataset eval_set = make_dataset(main_task, 300, f.cfg, rng);
  const float base_acc = accuracy(f.pre.model, CompositePlan{}, eval_set);

  const ShadowSet noise = generate_way2(f.way1.set.adapters, 3, 78, 0.5f);
  for (const LoraAdapter& a : noise.adapters) {
    CompositePlan plan;
    compose(plan, a, Sign::plus, 1.0f, base_layer_ids(f.pre.model));
    const float acc = accuracy(f.pre.model, plan, eval_set);
    CHECK(std::fabs(acc - base_acc) <= 0.15f);
  }
}

TEST_CASE("dropout sampling respects the probability") {
  const Fixture& f = fixture();
  ShadowSet set = f.way1.set;

  set.dropout_p = 1.0f;
  Rng all_rng(91);
  CHECK(sample_dropout_plan(set, 1.0f, all_rng).terms.size() == 3);

  set.dropout_p = 0.0f;
  Rng none_rng(92);
  CHECK(sample_dropout_plan(set, 1.0f, none_rng).empty());

  set.dropout_p = 0.5f;
  Rng rng(93);
  int counts[3] = {0, 0, 0};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const CompositePlan plan = sample_dropout_plan(set, 1.0f, rng);
    for (const PlanTerm& term : plan.terms) {
      for (int j = 0; j < 3; ++j) {
        if (term.adapter.name == set.adapters[j].name) ++counts[j];
      }
    }
  }
  for (int j = 0; j < 3; ++j) {
    const double freq = double(counts[j]) / draws;
    CHECK(freq >= 0.48);
    CHECK(freq <= 0.52);
  }
}

TEST_CASE("dropout inclusion events are independent") {
  // Chi-square independence over 10,000 draws, alpha = 0.01 (1 dof crit
  // 6.635): every adapter pair within a draw, plus lag-1 dependence of each
  // adapter across draws.
  const Fixture& f = fixture();
  ShadowSet set = f.way1.set;
  set.dropout_p = 0.5f;
  Rng rng(94);
  const int draws = 10000;
  std::vector<std::array<bool, 3>> mask(draws);
  for (int i = 0; i < draws; ++i) {
    const CompositePlan plan = sample_dropout_plan(set, 1.0f, rng);
    mask[i] = {false, false, false};
    for (const PlanTerm& term : plan.terms) {
      for (int j = 0; j < 3; ++j) {
        if (term.adapter.name == set.adapters[j].name) mask[i][j] = true;
      }
    }
  }

  auto chi_square = [](const int table[2][2], int n) {
    const double row0 = table[0][0] + table[0][1];
    const double row1 = table[1][0] + table[1][1];
    const double col0 = table[0][0] + table[1][0];
    const double col1 = table[0][1] + table[1][1];
    double chi = 0.0;
    const double expect[2][2] = {{row0 * col0 / n, row0 * col1 / n},
                                 {row1 * col0 / n, row1 * col1 / n}};
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        chi += (table[i][j] - expect[i][j]) * (table[i][j] - expect[i][j]) / expect[i][j];
    return chi;
  };

  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      int table[2][2] = {{0, 0}, {0, 0}};
      for (int i = 0; i < draws; ++i) ++table[mask[i][a] ? 1 : 0][mask[i][b] ? 1 : 0];
      CHECK(chi_square(table, draws) < 6.635);
    }
  }
  for (int a = 0; a < 3; ++a) {
    int table[2][2] = {{0, 0}, {0, 0}};
    for (int i = 1; i < draws; ++i) ++table[mask[i - 1][a] ? 1 : 0][mask[i][a] ? 1 : 0];
    CHECK(chi_square(table, draws - 1) < 6.635);
  }
}
