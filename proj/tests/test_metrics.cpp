#include <gtest/gtest.h>

#include <cmath>

#include "conviction/metrics.hpp"
#include "conviction/random.hpp"
#include "test_support.hpp"

using namespace conviction;
using testing_support::make_record;

namespace {

Transcript conviction_transcript(const std::string& id, int max_turns, Status status,
                                 int turn, int survived_through) {
  Transcript t;
  t.record_id = id;
  t.model = "m";
  t.condition = Condition::positive_conviction;
  t.target = "A";
  t.max_turns = max_turns;
  t.outcome = {status, turn};
  t.survived_through = survived_through;
  for (int i = 1; i <= std::max(turn, 1); ++i) {
    TurnRecord r;
    r.turn = i;
    r.parsed.kind = status == Status::parse_error && i == turn ? SelectionKind::unparseable
                                                              : SelectionKind::option;
    t.turns.push_back(r);
  }
  return t;
}

Transcript single_shot(const std::string& id, bool hit, Status status = Status::survived_all) {
  Transcript t;
  t.record_id = id;
  t.model = "m";
  t.condition = Condition::single_shot_binary;
  t.target = "A";
  t.max_turns = 1;
  t.outcome = {hit ? status : Status::lost_at_turn_one, 1};
  t.survived_through = hit && status == Status::survived_all ? 1 : 0;
  return t;
}

}  // namespace

TEST(Survival, HandComputedCurve) {
  std::vector<Transcript> ts = {
      conviction_transcript("a", 3, Status::survived_all, 3, 3),
      conviction_transcript("b", 3, Status::switched, 3, 2),
      conviction_transcript("c", 3, Status::switched, 2, 1),
      conviction_transcript("d", 3, Status::lost_at_turn_one, 1, 0),
      conviction_transcript("e", 3, Status::parse_error, 2, 1),
  };
  const auto c = survival_curve(ts, 3);
  EXPECT_EQ(c.n_included, 4u);
  EXPECT_EQ(c.n_excluded, 1u);
  EXPECT_EQ(c.exclusions.parse_errors, 1u);
  EXPECT_EQ(c.survivors, (std::vector<std::size_t>{3, 2, 1}));
  EXPECT_DOUBLE_EQ(c.at(1), 0.75);
  EXPECT_DOUBLE_EQ(c.at(2), 0.5);
  EXPECT_DOUBLE_EQ(c.final_value(), 0.25);
}

TEST(Survival, ExhaustedChallengersCarryForward) {
  std::vector<Transcript> ts = {conviction_transcript("short", 2, Status::survived_all, 2, 2),
                                conviction_transcript("long", 4, Status::switched, 4, 3)};
  const auto c = survival_curve(ts, 4);
  EXPECT_EQ(c.survivors, (std::vector<std::size_t>{2, 2, 2, 1}));
}

TEST(Survival, Errors) {
  std::vector<Transcript> none = {conviction_transcript("e", 3, Status::parse_error, 1, 0)};
  EXPECT_THROW(survival_curve(none, 3), MetricsError);
  auto mixed = std::vector<Transcript>{conviction_transcript("a", 3, Status::survived_all, 3, 3),
                                       conviction_transcript("b", 3, Status::survived_all, 3, 3)};
  mixed[1].condition = Condition::negative_conviction;
  EXPECT_THROW(survival_curve(mixed, 3), MetricsError);
  SurvivalCurve bad;
  bad.values = {0.5, 0.6};
  EXPECT_THROW(check_monotone(bad), MetricsError);
  bad.values = {0.5, 0.5, 0.1};
  EXPECT_NO_THROW(check_monotone(bad));
}

// Oracle: with initial accuracy q and stick probability p, C_T = q p^(T-1).
TEST(Survival, BernoulliClosedForm) {
  std::vector<McqaRecord> records;
  for (int i = 0; i < 2000; ++i) records.push_back(make_record("r" + std::to_string(i), 4, i % 4));
  const auto ts = testing_support::simulate(records, {Condition::positive_conviction},
                                            {0.8, 0.9, 1.0, 0.0, 21}, 1234);
  const auto c = survival_curve(ts, 3);
  for (std::size_t t = 1; t <= 3; ++t) {
    const double expected = 0.8 * std::pow(0.9, static_cast<double>(t - 1));
    const double se = std::sqrt(expected * (1 - expected) / 2000.0);
    EXPECT_NEAR(c.at(t), expected, 3 * se) << "T=" << t;
  }
}

TEST(Rates, SingleShotRateExcludesErrors) {
  std::vector<Transcript> ts = {single_shot("a", true), single_shot("b", true),
                                single_shot("c", false),
                                single_shot("d", true, Status::transport_error)};
  const auto r = single_shot_rate(ts);
  EXPECT_EQ(r.numerator, 2u);
  EXPECT_EQ(r.denominator, 3u);
  EXPECT_EQ(r.exclusions.transport_errors, 1u);
  EXPECT_DOUBLE_EQ(r.value, 2.0 / 3.0);
}

TEST(Rates, ConversationTax) {
  const auto d = conversation_tax(0.8, 0.6);
  EXPECT_NEAR(d.absolute_points, -20.0, 1e-9);
  ASSERT_TRUE(d.relative.has_value());
  EXPECT_NEAR(*d.relative, -0.25, 1e-12);
  EXPECT_FALSE(conversation_tax(0.0, 0.1).relative.has_value());
  EXPECT_EQ(conversation_tax(0.7, 0.7).absolute_points, 0.0);
}

TEST(Rates, SwitchRatesIdealAgent) {
  std::vector<McqaRecord> records;
  for (int i = 0; i < 100; ++i) records.push_back(make_record("r" + std::to_string(i), 4, i % 4));
  const auto flex = testing_support::simulate(records, {Condition::flexibility},
                                              BernoulliAgentSpec::ideal(), 3);
  const auto sens = testing_support::simulate(records, {Condition::flex_sensitivity},
                                              BernoulliAgentSpec::ideal(), 3);
  const auto r = switch_rates(flex, sens);
  EXPECT_EQ(r.correct.value, 1.0);
  EXPECT_EQ(r.incorrect.value, 0.0);
  EXPECT_EQ(r.correct.denominator, 100u);
  EXPECT_THROW(switch_rates(sens, flex), MetricsError);
}

TEST(Bootstrap, DeterministicAndDegenerate) {
  std::vector<std::uint8_t> x(100, 0);
  for (int i = 0; i < 30; ++i) x[i] = 1;
  const auto a = bootstrap_ci(x, 0.95, 2000, 5);
  const auto b = bootstrap_ci(x, 0.95, 2000, 5);
  EXPECT_EQ(a.lower, b.lower);
  EXPECT_EQ(a.upper, b.upper);
  EXPECT_LT(a.lower, 0.3);
  EXPECT_GT(a.upper, 0.3);
  const std::vector<std::uint8_t> ones(50, 1);
  const auto c = bootstrap_ci(ones, 0.95, 1000, 1);
  EXPECT_EQ(c.lower, 1.0);
  EXPECT_EQ(c.upper, 1.0);
  EXPECT_THROW(bootstrap_ci(x, 0.95, 999, 1), MetricsError);
  EXPECT_THROW(bootstrap_ci({}, 0.95, 1000, 1), MetricsError);
}

// Oracle: a 95% percentile interval covers the true rate in at least 93 of
// 100 independent samples.
TEST(Bootstrap, Coverage) {
  const double p = 0.3;
  int covered = 0;
  for (int rep = 0; rep < 100; ++rep) {
    SeededRng rng(derive_seed(77, static_cast<std::uint64_t>(rep)));
    std::vector<std::uint8_t> x(300);
    for (auto& v : x) v = rng.unit() < p;
    const auto ci = bootstrap_ci(x, 0.95, 1000, derive_seed(78, static_cast<std::uint64_t>(rep)));
    covered += ci.lower <= p && p <= ci.upper;
  }
  EXPECT_GE(covered, 93);
}

TEST(Indicators, CanonicalOrderIncludedOnly) {
  std::vector<Transcript> ts = {conviction_transcript("b", 2, Status::switched, 2, 1),
                                conviction_transcript("a", 2, Status::survived_all, 2, 2),
                                conviction_transcript("c", 2, Status::transport_error, 1, 0)};
  EXPECT_EQ(survival_indicators(ts, 2), (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(survival_indicators(ts, 1), (std::vector<std::uint8_t>{1, 1}));
}
