#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "loraguard/verify.hpp"

using namespace loraguard;

namespace {

// Scripted black-box model for fast logic tests: answers by a fixed function
// of the input tokens and counts every query it serves.
class ScriptedQuery final : public ModelQuery {
 public:
  explicit ScriptedQuery(std::function<int(const std::vector<int>&)> fn) : fn_(std::move(fn)) {}

  int query(const std::vector<int>& tokens) const override {
    ++queries_;
    return fn_(tokens);
  }
  int queries() const { return queries_; }

 private:
  std::function<int(const std::vector<int>&)> fn_;
  mutable int queries_ = 0;
};

// Labels are encoded at position 3 and a 5-way nuisance value at position 4;
// both sit outside the default trigger mask, so scripted models can read them
// on triggered inputs too.
Dataset tiny_eval(int n, int seq_len = 16) {
  Dataset out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.tokens.assign(seq_len, (i * 7) % 50);
    s.tokens[3] = i % 2;
    s.tokens[4] = i % 5;
    s.label = i % 2;
    out.push_back(std::move(s));
  }
  return out;
}

WatermarkPair tiny_pair() {
  BaseConfig cfg;
  return default_pair(cfg);
}

}  // namespace

TEST_CASE("wsr counts target hits over triggered queries") {
  const WatermarkPair pair = tiny_pair();
  BaseConfig cfg;
  const Dataset eval_set = tiny_eval(50);

  // Fires on the yang trigger token, otherwise returns label 1.
  ScriptedQuery fires([&](const std::vector<int>& t) { return t[0] == 60 ? 0 : 1; });
  CHECK(compute_wsr(fires, pair.yang, eval_set, 50, cfg) == 1.0f);
  CHECK(compute_wsr(fires, pair.yang, eval_set, 1, cfg) == 1.0f);

  ScriptedQuery never([](const std::vector<int>&) { return 1; });
  CHECK(compute_wsr(never, pair.yang, eval_set, 50, cfg) == 0.0f);

  CHECK_THROWS_AS(compute_wsr(never, pair.yang, eval_set, 0, cfg), std::invalid_argument);
  CHECK_THROWS_AS(compute_wsr(never, pair.yang, Dataset{}, 5, cfg), std::invalid_argument);
}

TEST_CASE("cdp is plain clean accuracy through the query interface") {
  const Dataset eval_set = tiny_eval(40);
  ScriptedQuery perfect([&](const std::vector<int>& t) { return t[3]; });
  CHECK(compute_cdp(perfect, eval_set) == doctest::Approx(1.0f));
  ScriptedQuery constant([](const std::vector<int>&) { return 0; });
  CHECK(compute_cdp(constant, eval_set) == doctest::Approx(0.5f));
}

TEST_CASE("binomial tail matches exact enumeration") {
  // Oracle: direct enumeration of the pmf for small n.
  auto exact_tail = [](int k, int n, double p) {
    double tail = 0.0;
    for (int i = k; i <= n; ++i) {
      double c = 1.0;
      for (int j = 0; j < i; ++j) c *= double(n - j) / double(i - j);
      tail += c * std::pow(p, i) * std::pow(1 - p, n - i);
    }
    return tail;
  };
  for (int n : {5, 10, 20}) {
    for (double p : {0.1, 0.5, 0.9}) {
      for (int k = 0; k <= n; ++k) {
        CHECK(binomial_tail(k, n, p) == doctest::Approx(exact_tail(k, n, p)).epsilon(1e-9));
      }
    }
  }
  CHECK(binomial_tail(0, 10, 0.5) == 1.0);
  CHECK(binomial_tail(11, 10, 0.5) == 0.0);
}

TEST_CASE("verdicts follow the threshold plus significance rule") {
  const WatermarkPair pair = tiny_pair();
  BaseConfig cfg;
  const Dataset eval_set = tiny_eval(300);
  VerifyConfig vcfg;
  vcfg.n = 200;

  // Addition misuse: yang trigger fires, yin does not.
  ScriptedQuery addition([&](const std::vector<int>& t) {
    if (t[0] == 60) return 0;
    return t[3];
  });
  VerificationReport r = verify_suspect(addition, pair, eval_set, vcfg, cfg, "scripted", 9);
  CHECK(r.verdict == Verdict::misuse_addition);
  CHECK(r.wsr_plus == 1.0f);
  CHECK(r.p_value_plus < 0.01);

  // Negation misuse: only the yin trigger fires.
  ScriptedQuery negation([&](const std::vector<int>& t) {
    if (t[0] == 61) return 1;
    return t[3];
  });
  CHECK(verify_suspect(negation, pair, eval_set, vcfg, cfg, "scripted", 9).verdict ==
        Verdict::misuse_negation);

  // Both triggers fire.
  ScriptedQuery both([&](const std::vector<int>& t) {
    if (t[0] == 60) return 0;
    if (t[0] == 61) return 1;
    return t[3];
  });
  CHECK(verify_suspect(both, pair, eval_set, vcfg, cfg, "scripted", 9).verdict ==
        Verdict::misuse_both);

  // A trigger-blind model is clean even though half its clean answers land
  // on each target by chance.
  ScriptedQuery blind([&](const std::vector<int>& t) { return t[3]; });
  const VerificationReport clean = verify_suspect(blind, pair, eval_set, vcfg, cfg, "scripted", 9);
  CHECK(clean.verdict == Verdict::clean);
  CHECK(clean.p_value_plus > 0.01);
}

TEST_CASE("verdict is monotone in the threshold") {
  const WatermarkPair pair = tiny_pair();
  BaseConfig cfg;
  const Dataset eval_set = tiny_eval(250);
  // Fires on 80% of yang-triggered inputs.
  ScriptedQuery mostly([&](const std::vector<int>& t) {
    if (t[0] == 60) return t[4] == 0 ? 1 : 0;
    return 1;
  });
  bool was_misuse = true;
  for (float tau : {0.1f, 0.3f, 0.5f, 0.7f, 0.9f, 0.99f}) {
    VerifyConfig vcfg;
    vcfg.tau = tau;
    vcfg.n = 200;
    const VerificationReport r = verify_suspect(mostly, pair, eval_set, vcfg, cfg, "scripted", 9);
    const bool misuse = r.verdict != Verdict::clean;
    // Raising tau never converts clean back into misuse.
    CHECK((was_misuse || !misuse));
    was_misuse = misuse;
  }
}

TEST_CASE("verification touches the suspect only through input-label queries") {
  // The interface exposes nothing but query(); this pins down the call count
  // too: n yang + n yin + n base-rate + eval_size cdp queries.
  const WatermarkPair pair = tiny_pair();
  BaseConfig cfg;
  const Dataset eval_set = tiny_eval(120);
  VerifyConfig vcfg;
  vcfg.n = 100;
  ScriptedQuery probe([](const std::vector<int>&) { return 0; });
  (void)verify_suspect(probe, pair, eval_set, vcfg, cfg, "probe", 9);
  CHECK(probe.queries() == 100 + 100 + 100 + 120);
}

TEST_CASE("reports are reproducible and render to text and csv") {
  const WatermarkPair pair = tiny_pair();
  BaseConfig cfg;
  const Dataset eval_set = tiny_eval(100);
  VerifyConfig vcfg;
  ScriptedQuery q([&](const std::vector<int>& t) { return t[0] == 60 ? 0 : 1; });

  const VerificationReport a = verify_suspect(q, pair, eval_set, vcfg, cfg, "plan-x", 42);
  const VerificationReport b = verify_suspect(q, pair, eval_set, vcfg, cfg, "plan-x", 42);
  CHECK(report_text(a) == report_text(b));
  CHECK(report_csv_row(a) == report_csv_row(b));
  CHECK(report_text(a).find("verdict=misuse-addition") != std::string::npos);
  CHECK(report_csv_header().rfind("verdict,", 0) == 0);

  VerifyConfig bad;
  bad.tau = 1.5f;
  CHECK_THROWS_AS(verify_suspect(q, pair, eval_set, bad, cfg, "x", 1), std::invalid_argument);
}
