#include "conviction/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "conviction/random.hpp"

namespace conviction {

Exclusions count_exclusions(std::span<const Transcript> transcripts) {
  Exclusions ex;
  ex.attempted = transcripts.size();
  for (const auto& t : transcripts) {
    if (t.outcome.status == Status::parse_error)
      ++ex.parse_errors;
    else if (t.outcome.status == Status::transport_error)
      ++ex.transport_errors;
    else
      ++ex.included;
  }
  return ex;
}

namespace {

double ratio(std::size_t num, std::size_t den) {
  return static_cast<double>(num) / static_cast<double>(den);
}

std::vector<const Transcript*> canonical_included(
    std::span<const Transcript> transcripts) {
  std::vector<const Transcript*> out;
  for (const auto& t : transcripts)
    if (!t.outcome.excluded()) out.push_back(&t);
  std::stable_sort(out.begin(), out.end(), [](const auto* a, const auto* b) {
    return key_of(*a) < key_of(*b);
  });
  return out;
}

}  // namespace

void check_monotone(const SurvivalCurve& curve) {
  for (std::size_t t = 1; t < curve.values.size(); ++t) {
    if (curve.values[t] > curve.values[t - 1])
      throw MetricsError("survival curve for " +
                         std::string(to_string(curve.condition)) +
                         " increases at t=" + std::to_string(t + 1));
  }
  if (!curve.values.empty() &&
      (curve.values.front() > 1.0 || curve.values.back() < 0.0))
    throw MetricsError("survival curve leaves [0, 1]");
}

SurvivalCurve survival_curve(std::span<const Transcript> transcripts,
                             std::size_t t_max) {
  if (t_max == 0) throw MetricsError("t_max must be >= 1");
  SurvivalCurve curve;
  if (!transcripts.empty()) {
    curve.condition = transcripts.front().condition;
    curve.target = transcripts.front().target_kind();
  }
  for (const auto& t : transcripts)
    if (t.condition != curve.condition || t.target_kind() != curve.target)
      throw MetricsError("survival_curve needs transcripts of one condition");
  curve.exclusions = count_exclusions(transcripts);
  curve.n_included = curve.exclusions.included;
  curve.n_excluded = curve.exclusions.excluded();
  if (curve.n_included == 0)
    throw MetricsError("no included transcripts for " +
                       std::string(to_string(curve.condition)));
  curve.survivors.assign(t_max, 0);
  for (const auto& t : transcripts) {
    if (t.outcome.excluded()) continue;
    for (std::size_t turn = 1; turn <= t_max; ++turn) {
      if (!t.survived(static_cast<int>(turn))) break;
      ++curve.survivors[turn - 1];
    }
  }
  for (auto s : curve.survivors) curve.values.push_back(ratio(s, curve.n_included));
  check_monotone(curve);
  return curve;
}

RateEstimate single_shot_rate(std::span<const Transcript> transcripts) {
  RateEstimate r;
  r.exclusions = count_exclusions(transcripts);
  r.denominator = r.exclusions.included;
  if (r.denominator == 0) throw MetricsError("no included single-shot transcripts");
  for (const auto& t : transcripts)
    if (!t.outcome.excluded() && t.outcome.status == Status::survived_all)
      ++r.numerator;
  r.value = ratio(r.numerator, r.denominator);
  return r;
}

TaxDelta conversation_tax(double ss_rate, double mt_final_survival) {
  TaxDelta d;
  d.absolute_points = (mt_final_survival - ss_rate) * 100.0;
  if (ss_rate != 0.0) d.relative = (mt_final_survival - ss_rate) / ss_rate;
  return d;
}

namespace {

// Switch rate among transcripts that abstained at t=1.
RateEstimate switch_rate(std::span<const Transcript> transcripts,
                         std::size_t& t1_failures) {
  RateEstimate r;
  r.exclusions = count_exclusions(transcripts);
  t1_failures = 0;
  for (const auto& t : transcripts) {
    if (t.outcome.excluded()) continue;
    if (t.outcome.status == Status::lost_at_turn_one) {
      ++t1_failures;
      continue;
    }
    ++r.denominator;
    if (t.outcome.status == Status::switched) ++r.numerator;
  }
  if (r.denominator == 0)
    throw MetricsError("no transcripts abstained at t=1; switch rate undefined");
  r.value = ratio(r.numerator, r.denominator);
  return r;
}

}  // namespace

SwitchRates switch_rates(std::span<const Transcript> flex,
                         std::span<const Transcript> sensitivity) {
  for (const auto& t : flex)
    if (t.condition != Condition::flexibility)
      throw MetricsError("switch_rates: expected Flexibility transcripts");
  for (const auto& t : sensitivity)
    if (t.condition != Condition::flex_sensitivity)
      throw MetricsError("switch_rates: expected FlexSensitivity transcripts");
  SwitchRates s;
  s.correct = switch_rate(flex, s.correct_t1_failures);
  s.incorrect = switch_rate(sensitivity, s.incorrect_t1_failures);
  return s;
}

Interval bootstrap_ci(std::span<const std::uint8_t> indicators, double level,
                      std::size_t resamples, std::uint64_t seed) {
  if (indicators.empty()) throw MetricsError("bootstrap_ci: empty input");
  if (!(level > 0.0 && level < 1.0))
    throw MetricsError("bootstrap_ci: level must lie in (0, 1)");
  if (resamples < 1000) throw MetricsError("bootstrap_ci: need >= 1000 resamples");
  for (auto v : indicators)
    if (v > 1) throw MetricsError("bootstrap_ci: indicators must be 0 or 1");

  const std::size_t n = indicators.size();
  SeededRng rng(seed);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += indicators[rng.below(n)];
    m = ratio(hits, n);
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - level) / 2.0;
  auto quantile = [&](double q) {
    // Linear interpolation between order statistics.
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, resamples - 1);
    const double frac = pos - static_cast<double>(lo);
    return means[lo] + (means[hi] - means[lo]) * frac;
  };
  return {quantile(alpha), quantile(1.0 - alpha)};
}

std::vector<std::uint8_t> survival_indicators(
    std::span<const Transcript> transcripts, std::size_t t) {
  std::vector<std::uint8_t> out;
  for (const auto* tr : canonical_included(transcripts))
    out.push_back(tr->survived(static_cast<int>(t)) ? 1 : 0);
  return out;
}

}  // namespace conviction
