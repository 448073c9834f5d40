#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "conviction/corpus.hpp"
#include "conviction/transcript.hpp"

namespace conviction {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Denominator bookkeeping shared by every rate.
struct Exclusions {
  std::size_t attempted = 0;
  std::size_t included = 0;
  std::size_t parse_errors = 0;
  std::size_t transport_errors = 0;

  std::size_t excluded() const { return parse_errors + transport_errors; }
};

Exclusions count_exclusions(std::span<const Transcript> transcripts);

struct SurvivalCurve {
  Condition condition = Condition::positive_conviction;
  TargetKind target = TargetKind::truth;
  std::vector<double> values;  // values[t-1] = C_t
  std::vector<std::size_t> survivors;  // numerators of values
  std::size_t n_included = 0;
  std::size_t n_excluded = 0;
  Exclusions exclusions;

  double at(std::size_t t) const { return values.at(t - 1); }
  double final_value() const { return values.back(); }
};

/// C_T = (1/n) * sum_i prod_{t<=T} 1(selection_{i,t} == target_i) over the
/// included transcripts. A transcript that exhausted its challengers counts as
/// surviving every later T. Throws MetricsError on mixed conditions, an empty
/// included set, or a non-monotone result.
SurvivalCurve survival_curve(std::span<const Transcript> transcripts,
                             std::size_t t_max);

/// Throws MetricsError when some C_{t+1} > C_t.
void check_monotone(const SurvivalCurve& curve);

struct RateEstimate {
  double value = 0.0;
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  Exclusions exclusions;
};

/// Accuracy (truth target) or abstention rate (abstain target) of single-shot
/// transcripts: the share of included transcripts that picked the target.
RateEstimate single_shot_rate(std::span<const Transcript> transcripts);

struct TaxDelta {
  double absolute_points = 0.0;   // (mt - ss) * 100
  std::optional<double> relative;  // (mt - ss) / ss; empty when ss == 0
};

TaxDelta conversation_tax(double ss_rate, double mt_final_survival);

struct SwitchRates {
  RateEstimate correct;    // switched to the introduced truth
  RateEstimate incorrect;  // switched to the introduced distractor
  std::size_t correct_t1_failures = 0;    // did not abstain at t=1
  std::size_t incorrect_t1_failures = 0;
};

/// Both denominators count the included transcripts that abstained at t=1.
SwitchRates switch_rates(std::span<const Transcript> flex,
                         std::span<const Transcript> sensitivity);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Percentile bootstrap of the mean of 0/1 indicators.
Interval bootstrap_ci(std::span<const std::uint8_t> indicators, double level,
                      std::size_t resamples, std::uint64_t seed);

/// Per-transcript indicator of surviving through turn t, included
/// transcripts only, in canonical order.
std::vector<std::uint8_t> survival_indicators(
    std::span<const Transcript> transcripts, std::size_t t);

}  // namespace conviction
