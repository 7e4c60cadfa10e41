#include "loraguard/verify.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace loraguard {

int CompositeModelQuery::query(const std::vector<int>& tokens) const {
  Sample s;
  s.tokens = tokens;
  const Tensor2D logits = composite_forward(*base_, plan_, {s});
  std::vector<float> column(logits.rows);
  for (int i = 0; i < logits.rows; ++i) column[i] = logits.at(i, 0);
  return predict(column);
}

float compute_wsr(const ModelQuery& model, const TriggerSpec& spec, const Dataset& eval_set,
                  int n, const BaseConfig& cfg) {
  if (n < 1) throw std::invalid_argument("compute_wsr: n must be >= 1");
  if (eval_set.empty()) throw std::invalid_argument("compute_wsr: empty evaluation set");
  n = std::min<int>(n, static_cast<int>(eval_set.size()));
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const Sample triggered = inject_trigger(eval_set[i], spec, cfg);
    hits += model.query(triggered.tokens) == spec.target_label ? 1 : 0;
  }
  return static_cast<float>(hits) / static_cast<float>(n);
}

float compute_cdp(const ModelQuery& model, const Dataset& eval_set) {
  if (eval_set.empty()) throw std::invalid_argument("compute_cdp: empty evaluation set");
  int correct = 0;
  for (const Sample& s : eval_set) correct += model.query(s.tokens) == s.label ? 1 : 0;
  return static_cast<float>(correct) / static_cast<float>(eval_set.size());
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::clean: return "clean";
    case Verdict::misuse_addition: return "misuse-addition";
    case Verdict::misuse_negation: return "misuse-negation";
    case Verdict::misuse_both: return "misuse-both";
  }
  return "unknown";
}

double binomial_tail(int k, int n, double p) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  // Sum of pmf terms from k to n via log-gamma; n stays small here.
  const double logp = std::log(p);
  const double log1p = std::log1p(-p);
  double tail = 0.0;
  for (int i = k; i <= n; ++i) {
    const double logc = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
    tail += std::exp(logc + i * logp + (n - i) * log1p);
  }
  return std::min(tail, 1.0);
}

VerificationReport verify_suspect(const ModelQuery& suspect, const WatermarkPair& pair,
                                  const Dataset& eval_set, const VerifyConfig& cfg,
                                  const BaseConfig& base_cfg, std::string plan_desc,
                                  uint64_t seed) {
  if (!(cfg.tau > 0.0f) || !(cfg.tau < 1.0f)) {
    throw std::invalid_argument("verify_suspect: tau must lie in (0, 1), got " +
                                std::to_string(cfg.tau));
  }
  if (eval_set.empty()) throw std::invalid_argument("verify_suspect: empty evaluation set");

  VerificationReport report;
  report.tau = cfg.tau;
  report.alpha = cfg.alpha;
  report.n = std::min<int>(cfg.n, static_cast<int>(eval_set.size()));
  report.eval_size = static_cast<int>(eval_set.size());
  report.seed = seed;
  report.plan = std::move(plan_desc);

  report.wsr_plus = compute_wsr(suspect, pair.yang, eval_set, report.n, base_cfg);
  report.wsr_minus = compute_wsr(suspect, pair.yin, eval_set, report.n, base_cfg);
  report.cdp = compute_cdp(suspect, eval_set);

  // Null rates: how often clean inputs already land on each target label.
  int yang_hits = 0, yin_hits = 0;
  for (int i = 0; i < report.n; ++i) {
    const int label = suspect.query(eval_set[i].tokens);
    yang_hits += label == pair.yang.target_label ? 1 : 0;
    yin_hits += label == pair.yin.target_label ? 1 : 0;
  }
  report.base_rate_yang = static_cast<float>(yang_hits) / static_cast<float>(report.n);
  report.base_rate_yin = static_cast<float>(yin_hits) / static_cast<float>(report.n);

  const int plus_hits = static_cast<int>(std::lround(report.wsr_plus * report.n));
  const int minus_hits = static_cast<int>(std::lround(report.wsr_minus * report.n));
  report.p_value_plus = binomial_tail(plus_hits, report.n, report.base_rate_yang);
  report.p_value_minus = binomial_tail(minus_hits, report.n, report.base_rate_yin);

  const bool plus_misuse = report.wsr_plus >= cfg.tau && report.p_value_plus <= cfg.alpha;
  const bool minus_misuse = report.wsr_minus >= cfg.tau && report.p_value_minus <= cfg.alpha;
  if (plus_misuse && minus_misuse) {
    report.verdict = Verdict::misuse_both;
  } else if (plus_misuse) {
    report.verdict = Verdict::misuse_addition;
  } else if (minus_misuse) {
    report.verdict = Verdict::misuse_negation;
  } else {
    report.verdict = Verdict::clean;
  }
  return report;
}

std::string report_text(const VerificationReport& report) {
  std::ostringstream out;
  out << "verdict=" << verdict_name(report.verdict) << "\n";
  out << "wsr_plus=" << report.wsr_plus << "\n";
  out << "wsr_minus=" << report.wsr_minus << "\n";
  out << "cdp=" << report.cdp << "\n";
  out << "tau=" << report.tau << "\n";
  out << "alpha=" << report.alpha << "\n";
  out << "n=" << report.n << "\n";
  out << "eval_size=" << report.eval_size << "\n";
  out << "base_rate_yang=" << report.base_rate_yang << "\n";
  out << "base_rate_yin=" << report.base_rate_yin << "\n";
  out << "p_value_plus=" << report.p_value_plus << "\n";
  out << "p_value_minus=" << report.p_value_minus << "\n";
  out << "seed=" << report.seed << "\n";
  out << "plan=" << report.plan << "\n";
  return out.str();
}

std::string report_csv_header() {
  return "verdict,wsr_plus,wsr_minus,cdp,tau,alpha,n,base_rate_yang,base_rate_yin,"
         "p_value_plus,p_value_minus,seed,plan";
}

std::string report_csv_row(const VerificationReport& report) {
  std::ostringstream out;
  out << verdict_name(report.verdict) << ',' << report.wsr_plus << ',' << report.wsr_minus << ','
      << report.cdp << ',' << report.tau << ',' << report.alpha << ',' << report.n << ','
      << report.base_rate_yang << ',' << report.base_rate_yin << ',' << report.p_value_plus << ','
      << report.p_value_minus << ',' << report.seed << ',' << '"' << report.plan << '"';
  return out.str();
}

}  // namespace loraguard
