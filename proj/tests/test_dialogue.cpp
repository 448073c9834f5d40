#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "conviction/dialogue.hpp"
#include "test_support.hpp"

using namespace conviction;
using testing_support::make_record;

namespace {

Selection pick(const std::string& label) {
  return {SelectionKind::option, label, MatchedBy::final_answer_pattern, ""};
}

std::vector<std::string> sources(const std::vector<Presented>& p) {
  std::vector<std::string> out;
  for (const auto& x : p) out.push_back(x.source);
  return out;
}

DialogueOptions quiet_options() {
  DialogueOptions o;
  o.model_label = "m";
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

}  // namespace

TEST(Templates, FillAndValidate) {
  EXPECT_EQ(fill_template("{a}-{b}-{c}", {{"a", "1"}, {"b", "{a}"}}), "1-{a}-{c}");
  auto t = TemplateSet::defaults();
  EXPECT_NO_THROW(t.validate());
  t.follow_up = "no placeholders";
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

TEST(SingleShot, FullSpaceShowsEveryOption) {
  const auto r = make_record("q", 4, 1);
  const auto p = render_single_shot(r, DecisionSpace::full, TargetKind::truth, std::nullopt,
                                    {}, 5, TemplateSet::defaults());
  ASSERT_EQ(p.presented.size(), 4u);
  EXPECT_EQ(p.presented[0].label, "A");
  EXPECT_EQ(p.presented[3].label, "D");
  auto s = sources(p.presented);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(s, (std::vector<std::string>{"A", "B", "C", "D"}));
  ASSERT_EQ(p.messages.size(), 1u);
  EXPECT_NE(p.messages[0].content.find(r.question), std::string::npos);
  for (const auto& o : r.options) EXPECT_NE(p.messages[0].content.find(o.text), std::string::npos);
}

TEST(SingleShot, AbstainWithholdsTruthAndAppendsNoneOfTheAbove) {
  const auto r = make_record("q", 4, 2);
  const auto p = render_single_shot(r, DecisionSpace::full, TargetKind::abstain, std::nullopt,
                                    {}, 5, TemplateSet::defaults());
  ASSERT_EQ(p.presented.size(), 4u);
  EXPECT_EQ(p.presented.back().source, kAbstentionLabel);
  EXPECT_EQ(p.presented.back().text, "None of the Above");
  for (const auto& x : p.presented) EXPECT_NE(x.source, "C");
  EXPECT_EQ(p.messages[0].content.find(r.truth_text()), std::string::npos);
}

TEST(SingleShot, BinarySpace) {
  const auto r = make_record("q", 4, 0);
  const auto p = render_single_shot(r, DecisionSpace::binary, TargetKind::truth, "C", {}, 5,
                                    TemplateSet::defaults());
  auto s = sources(p.presented);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(s, (std::vector<std::string>{"A", "C"}));
  EXPECT_THROW(render_single_shot(r, DecisionSpace::binary, TargetKind::truth, "A", {}, 5,
                                  TemplateSet::defaults()),
               DialogueError);
}

TEST(SingleShot, ExemplarsAndSystemMessage) {
  auto t = TemplateSet::defaults();
  t.system = "You are a careful clinician.";
  const auto r = make_record("q", 4, 0);
  const std::vector<McqaRecord> ex = {make_record("ex1", 4, 3)};
  const auto p = render_single_shot(r, DecisionSpace::full, TargetKind::truth, std::nullopt,
                                    ex, 1, t);
  ASSERT_EQ(p.messages.size(), 2u);
  EXPECT_EQ(p.messages[0].role, Role::system);
  EXPECT_NE(p.messages[1].content.find(ex[0].question), std::string::npos);
  EXPECT_LT(p.messages[1].content.find(ex[0].question), p.messages[1].content.find(r.question));
}

TEST(Conversation, TurnOneMatchesSingleShotBinary) {
  const auto r = make_record("q", 5, 3);
  const auto templates = TemplateSet::defaults();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ss = make_instance(r, Condition::single_shot_binary, seed);
    const auto pc = make_instance(r, Condition::positive_conviction, seed);
    const auto a = start_conversation(r, ss, {}, templates);
    const auto b = start_conversation(r, pc, {}, templates);
    EXPECT_EQ(a.history, b.history);
    EXPECT_EQ(a.presented, b.presented);
    EXPECT_EQ(turn_context(a, r).draw_key, turn_context(b, r).draw_key);
  }
}

TEST(Conversation, StateMachine) {
  const auto r = make_record("q", 4, 0);
  const auto inst = make_instance(r, Condition::positive_conviction, 3);
  const auto t = TemplateSet::defaults();
  auto s = start_conversation(r, inst, {}, t);
  EXPECT_TRUE(s.awaiting_reply());
  EXPECT_THROW(render_turn(s, r, inst.challenger(2), t), DialogueError);

  const auto truth_label = std::find_if(s.presented.begin(), s.presented.end(),
                                        [](const Presented& p) { return p.source == "A"; })
                               ->label;
  s.history.push_back({Role::assistant, "Final answer: " + truth_label});
  s = advance(std::move(s), pick(truth_label));
  EXPECT_EQ(s.turn, 2);
  EXPECT_FALSE(s.terminal());
  EXPECT_THROW(render_turn(s, r, inst.challenger(1), t), DialogueError);  // repeat
  render_turn(s, r, inst.challenger(2), t);
  ASSERT_EQ(s.presented.size(), 2u);
  EXPECT_EQ(s.presented[0].source, "A");
  EXPECT_EQ(s.presented[1].source, inst.challenger(2));
  EXPECT_EQ(turn_style(s), TurnStyle::stick_or_switch);

  s.history.push_back({Role::assistant, "Final answer: 2"});
  s = advance(std::move(s), pick("2"));
  EXPECT_EQ(s.outcome.status, Status::switched);
  EXPECT_EQ(s.outcome.turn, 2);
  EXPECT_THROW(advance(s, pick("1")), DialogueError);
  EXPECT_THROW(render_turn(s, r, inst.challenger(3), t), DialogueError);
}

TEST(Conversation, LostAtTurnOneAndParseError) {
  const auto r = make_record("q", 4, 0);
  const auto inst = make_instance(r, Condition::positive_conviction, 3);
  auto s = start_conversation(r, inst, {}, TemplateSet::defaults());
  const auto other = std::find_if(s.presented.begin(), s.presented.end(),
                                  [](const Presented& p) { return p.source != "A"; })
                         ->label;
  EXPECT_EQ(advance(s, pick(other)).outcome.status, Status::lost_at_turn_one);
  EXPECT_EQ(advance(s, Selection{}).outcome.status, Status::parse_error);
}

TEST(Retry, BackoffSchedule) {
  RetryPolicy p;
  EXPECT_EQ(p.backoff(1).count(), 1000);
  EXPECT_EQ(p.backoff(2).count(), 4000);
  EXPECT_EQ(p.backoff(3).count(), 16000);
}

TEST(RunCondition, AlwaysStickSurvivesEveryTurn) {
  const auto r = make_record("q", 5, 2);
  const auto inst = make_instance(r, Condition::positive_conviction, 1);
  BernoulliRespondent agent(BernoulliAgentSpec::ideal());
  const auto t = run_condition(r, inst, agent, {}, quiet_options());
  EXPECT_EQ(t.outcome.status, Status::survived_all);
  EXPECT_EQ(t.turns.size(), 4u);
  EXPECT_EQ(t.survived_through, 4);
  EXPECT_EQ(t.max_turns, 4);
  EXPECT_FALSE(t.started_at.has_value());
  for (const auto& turn : t.turns) EXPECT_EQ(turn.selected_source, "C");
}

TEST(RunCondition, ScriptedSwitchAtTurnTwo) {
  const auto r = make_record("q", 4, 0);
  const auto inst = make_instance(r, Condition::positive_conviction, 1);
  auto s = start_conversation(r, inst, {}, TemplateSet::defaults());
  const auto truth_label = turn_context(s, r).target_token;
  ScriptedRespondent script({"Final answer: " + truth_label, "I switch. Final answer: 2"});
  const auto t = run_condition(r, inst, script, {}, quiet_options());
  EXPECT_EQ(t.outcome.status, Status::switched);
  EXPECT_EQ(t.outcome.turn, 2);
  EXPECT_EQ(t.survived_through, 1);
  ASSERT_EQ(t.turns.size(), 2u);
  EXPECT_EQ(t.turns[1].selected_source, inst.challenger(2));
}

TEST(RunCondition, FlexibilityCorrectSwitch) {
  const auto r = make_record("q", 4, 1);
  const auto inst = make_instance(r, Condition::flexibility, 4);
  BernoulliRespondent agent(BernoulliAgentSpec::ideal());
  const auto t = run_condition(r, inst, agent, {}, quiet_options());
  EXPECT_EQ(t.outcome.status, Status::switched);
  EXPECT_EQ(t.outcome.turn, 2);
  EXPECT_EQ(t.turns[0].selected_source, kAbstentionLabel);
  EXPECT_EQ(t.turns[1].selected_source, "B");
}

TEST(RunCondition, RetriesThenSucceeds) {
  const auto r = make_record("q", 4, 0);
  const auto inst = make_instance(r, Condition::single_shot_full, 1);
  int calls = 0;
  PolicyRespondent flaky("flaky", [&](const TurnContext& ctx) -> std::string {
    if (++calls <= 2) throw RespondentError(ErrorKind::rate_limited, "429", 429);
    return "Final answer: " + ctx.target_token;
  });
  std::vector<long long> sleeps;
  auto opts = quiet_options();
  opts.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
  const auto t = run_condition(r, inst, flaky, {}, opts);
  EXPECT_EQ(t.outcome.status, Status::survived_all);
  ASSERT_EQ(t.turns.size(), 1u);
  EXPECT_EQ(t.turns[0].attempts, 3);
  EXPECT_EQ(sleeps, (std::vector<long long>{1000, 4000}));
}

TEST(RunCondition, ExhaustedRetriesExcludeTheTranscript) {
  const auto r = make_record("q", 4, 0);
  const auto inst = make_instance(r, Condition::positive_conviction, 1);
  int calls = 0;
  PolicyRespondent down("down", [&](const TurnContext& ctx) -> std::string {
    if (ctx.turn == 2) {
      ++calls;
      throw RespondentError(ErrorKind::server_error, "503", 503);
    }
    return "Final answer: " + ctx.target_token;
  });
  std::vector<long long> sleeps;
  auto opts = quiet_options();
  opts.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
  const auto t = run_condition(r, inst, down, {}, opts);
  EXPECT_EQ(t.outcome.status, Status::transport_error);
  EXPECT_TRUE(t.outcome.excluded());
  EXPECT_EQ(calls, 4);
  EXPECT_EQ(sleeps, (std::vector<long long>{1000, 4000, 16000}));
  EXPECT_EQ(t.turns.size(), 1u);  // the failed turn leaves no record
  ASSERT_TRUE(t.error.has_value());
}

TEST(RunCondition, NonRetryableErrorStopsImmediately) {
  const auto r = make_record("q", 4, 0);
  const auto inst = make_instance(r, Condition::single_shot_full, 1);
  int calls = 0;
  PolicyRespondent bad("bad", [&](const TurnContext&) -> std::string {
    ++calls;
    throw RespondentError(ErrorKind::http_status, "400", 400);
  });
  const auto t = run_condition(r, inst, bad, {}, quiet_options());
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(t.outcome.status, Status::transport_error);
}

TEST(RunCondition, ClockStampsWhenProvided) {
  const auto r = make_record("q", 4, 0);
  const auto inst = make_instance(r, Condition::single_shot_full, 1);
  BernoulliRespondent agent(BernoulliAgentSpec::ideal());
  auto opts = quiet_options();
  opts.clock = [] { return std::string("2026-01-01T00:00:00.000Z"); };
  const auto t = run_condition(r, inst, agent, {}, opts);
  EXPECT_EQ(t.started_at, "2026-01-01T00:00:00.000Z");
  EXPECT_EQ(t.turns[0].finished_at, "2026-01-01T00:00:00.000Z");
}

// Structure audit: the truth is never shown where it must be withheld.
TEST(RunCondition, TruthVisibilityByCondition) {
  BernoulliRespondent stick(BernoulliAgentSpec::ideal());
  for (int i = 0; i < 50; ++i) {
    const auto r = make_record("q" + std::to_string(i), 5, static_cast<std::size_t>(i % 5));
    for (auto c : {Condition::negative_conviction, Condition::flex_sensitivity}) {
      const auto t = run_condition(r, make_instance(r, c, i), stick, {}, quiet_options());
      for (const auto& turn : t.turns)
        for (const auto& p : turn.presented) EXPECT_NE(p.source, r.truth_label);
    }
    const auto t = run_condition(r, make_instance(r, Condition::flexibility, i), stick, {},
                                 quiet_options());
    ASSERT_EQ(t.turns.size(), 2u);
    for (const auto& p : t.turns[0].presented) EXPECT_NE(p.source, r.truth_label);
    EXPECT_EQ(t.turns[1].presented[1].source, r.truth_label);
  }
}
