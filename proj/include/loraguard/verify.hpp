#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "loraguard/model.hpp"
#include "loraguard/watermark.hpp"

namespace loraguard {

// Black-box surface of a suspect model: input tokens -> predicted label,
// nothing else. Verification code only ever sees this interface, so it
// cannot touch suspect weights; tests wrap it with a counting probe to pin
// that down.
class ModelQuery {
 public:
  virtual ~ModelQuery() = default;
  virtual int query(const std::vector<int>& tokens) const = 0;
};

class CompositeModelQuery final : public ModelQuery {
 public:
  CompositeModelQuery(const BaseModel& base, CompositePlan plan)
      : base_(&base), plan_(std::move(plan)) {}

  int query(const std::vector<int>& tokens) const override;
  const CompositePlan& plan() const { return plan_; }

 private:
  const BaseModel* base_;
  CompositePlan plan_;
};

// Fraction of the first n held-out samples that, once trigger-injected, map
// to the trigger's target label.
float compute_wsr(const ModelQuery& model, const TriggerSpec& spec, const Dataset& eval_set,
                  int n, const BaseConfig& cfg);

// Clean accuracy of the suspect on the evaluation set.
float compute_cdp(const ModelQuery& model, const Dataset& eval_set);

enum class Verdict { clean, misuse_addition, misuse_negation, misuse_both };

const char* verdict_name(Verdict v);

struct VerifyConfig {
  float tau = 0.7f;     // WSR threshold for a misuse call
  float alpha = 0.01f;  // significance level of the binomial check
  int n = 200;          // triggered queries per side
};

struct VerificationReport {
  float wsr_plus = 0.0f;
  float wsr_minus = 0.0f;
  float cdp = 0.0f;
  Verdict verdict = Verdict::clean;
  float tau = 0.7f;
  float alpha = 0.01f;
  int n = 0;
  int eval_size = 0;
  // Null model: the suspect's clean-input rate of each target label.
  float base_rate_yang = 0.0f;
  float base_rate_yin = 0.0f;
  double p_value_plus = 1.0;
  double p_value_minus = 1.0;
  uint64_t seed = 0;
  std::string plan;
};

// One-sided tail P[X >= k] for X ~ Binomial(n, p).
double binomial_tail(int k, int n, double p);

// Measures both trigger sides on the suspect as-is (the suspect's own
// construction already encodes how the stolen adapter was integrated). A
// side is flagged as misuse when its WSR reaches tau and the one-sided
// binomial p-value against the suspect's clean-input target-label rate is at
// most alpha.
VerificationReport verify_suspect(const ModelQuery& suspect, const WatermarkPair& pair,
                                  const Dataset& eval_set, const VerifyConfig& cfg,
                                  const BaseConfig& base_cfg, std::string plan_desc,
                                  uint64_t seed);

// Key-value text form and a CSV row (with header) for sweep tables.
std::string report_text(const VerificationReport& report);
std::string report_csv_header();
std::string report_csv_row(const VerificationReport& report);

}  // namespace loraguard
