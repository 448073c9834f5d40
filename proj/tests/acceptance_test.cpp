// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any criterion fails.

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conviction/dialogue.hpp"
#include "conviction/metrics.hpp"
#include "conviction/parsing.hpp"
#include "conviction/random.hpp"
#include "conviction/report.hpp"
#include "conviction/runner.hpp"
#include "conviction/stub_server.hpp"
#include "test_support.hpp"

using namespace conviction;
using testing_support::make_record;
using testing_support::read_file;
using testing_support::TempDir;
using testing_support::write_file;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Every report produced here, for the monotonicity sweep.
std::vector<ojson> g_reports;

struct Check {
  bool ok = true;
  std::ostringstream why;

  void expect(bool cond, const std::string& msg) {
    if (!cond && ok) why << msg;
    ok = ok && cond;
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ojson load_json(const fs::path& p) { return ojson::parse(read_file(p)); }

const ojson& group(const ojson& report) { return report.at("groups").at(0); }

const ojson& condition(const ojson& report, std::string_view cond, std::string_view target) {
  for (const auto& c : group(report).at("conditions"))
    if (c.at("condition") == cond && c.at("target") == target) return c;
  throw std::runtime_error("missing condition " + std::string(cond));
}

const ojson& tax(const ojson& report, std::string_view comparison) {
  for (const auto& t : group(report).at("conversation_tax"))
    if (t.at("comparison") == comparison) return t;
  throw std::runtime_error("missing tax " + std::string(comparison));
}

std::string sim_ini(std::size_t n, const std::string& conditions, const std::string& agent,
                    std::uint64_t seed = 11) {
  return "[agent]\n" + agent + "[simulate]\noptions = 4\n[run]\nseed = " +
         std::to_string(seed) + "\nn = " + std::to_string(n) + "\nconditions = " + conditions +
         "\nbootstrap_resamples = 1000\nplots = true\n";
}

bool run_ini_simulate(const TempDir& dir, const std::string& name, const std::string& ini,
                      ojson& report, std::optional<int> concurrency = std::nullopt) {
  // sim_ini ends inside [run], so output_dir lands in that section.
  write_file(dir / (name + ".ini"), ini + "output_dir = " + name + "\n");
  CommandOptions o;
  o.config = dir / (name + ".ini");
  o.quiet = true;
  o.concurrency = concurrency;
  std::ostringstream out, err;
  if (cmd_simulate(o, out, err) != kExitOk) {
    std::cerr << err.str();
    return false;
  }
  report = load_json(dir / name / "report.json");
  g_reports.push_back(report);
  return true;
}

// 1. Simulated conviction curve matches q p^(T-1).
Check bernoulli_oracle() {
  Check c;
  TempDir dir;
  const auto start = Clock::now();
  ojson report;
  const std::string agent =
      "q_init = 0.8\np_stick = 0.9\nq_flex_correct = 1\nq_flex_incorrect = 0\nseed = 5\n";
  if (!run_ini_simulate(dir, "oracle", sim_ini(2000, "PositiveConviction", agent), report)) {
    c.expect(false, "simulate failed");
    return c;
  }
  const double elapsed = seconds_since(start);
  const auto& curve = condition(report, "PositiveConviction", "truth").at("curve");
  const auto& values = curve.at("C");
  c.expect(values.size() == 3, "expected a 3-turn curve");
  c.expect(curve.at("n_included") == 2000, "expected 2000 included");
  for (std::size_t t = 1; t <= 3 && c.ok; ++t) {
    const double expected = 0.8 * std::pow(0.9, static_cast<double>(t - 1));
    const double se = std::sqrt(expected * (1 - expected) / 2000.0);
    const double got = values.at(t - 1).get<double>();
    std::ostringstream m;
    m << "C_" << t << " = " << got << ", expected " << expected << " +/- " << 3 * se;
    c.expect(std::abs(got - expected) <= 3 * se, m.str());
    if (t == 3) c.why << "C_3 = " << got << "; ";
  }
  c.expect(elapsed < 30.0, "took " + std::to_string(elapsed) + " s");
  c.why << elapsed << " s";
  return c;
}

// 2. Always-stick has zero tax against the binary baseline; always-switch
//    never survives past turn 1.
Check degenerate_agents() {
  Check c;
  TempDir dir;
  ojson stick, flip;
  if (!run_ini_simulate(dir, "stick",
                        sim_ini(200, "all", "preset = always_stick\nq_init = 0.7\nseed = 3\n"),
                        stick) ||
      !run_ini_simulate(dir, "switch", sim_ini(200, "all", "preset = always_switch\nseed = 3\n"),
                        flip)) {
    c.expect(false, "simulate failed");
    return c;
  }
  const auto& t = tax(stick, "PositiveConviction_vs_SingleShotBinary");
  c.expect(t.at("absolute_points").get<double>() == 0.0, "always-stick tax is not exactly 0");
  c.expect(t.at("multi_turn_end_to_end").get<double>() == t.at("single_shot").get<double>(),
           "end-to-end differs from binary single-shot");
  c.expect(t.at("single_shot").get<double>() < 1.0, "baseline degenerate at 1.0");
  for (const char* cond : {"PositiveConviction", "NegativeConviction"}) {
    const auto& target = std::string(cond) == "PositiveConviction" ? "truth" : "abstain";
    const auto& values = condition(flip, cond, target).at("curve").at("C");
    for (std::size_t i = 1; i < values.size(); ++i)
      c.expect(values.at(i).get<double>() == 0.0,
               std::string(cond) + " C_" + std::to_string(i + 1) + " is not 0");
  }
  c.why << "tax " << t.at("absolute_points") << " points at SS " << t.at("single_shot");
  return c;
}

// 4. Ideal agent sits at (1, 0); a blind switcher at (0.5, 0.5).
Check flexibility_corners() {
  Check c;
  TempDir dir;
  ojson ideal, blind;
  if (!run_ini_simulate(dir, "ideal", sim_ini(2000, "Flexibility, FlexSensitivity",
                                              "preset = ideal\n"),
                        ideal) ||
      !run_ini_simulate(dir, "blind", sim_ini(2000, "Flexibility, FlexSensitivity",
                                              "preset = blind_switcher\nseed = 9\n"),
                        blind)) {
    c.expect(false, "simulate failed");
    return c;
  }
  const auto& si = group(ideal).at("switch_rates");
  c.expect(si.at("correct_switch").at("value").get<double>() == 1.0, "ideal correct != 1");
  c.expect(si.at("incorrect_switch").at("value").get<double>() == 0.0, "ideal incorrect != 0");
  const auto& sb = group(blind).at("switch_rates");
  const double cs = sb.at("correct_switch").at("value").get<double>();
  const double is = sb.at("incorrect_switch").at("value").get<double>();
  c.expect(std::abs(cs - 0.5) <= 0.03 && std::abs(is - 0.5) <= 0.03,
           "blind switcher at (" + std::to_string(cs) + ", " + std::to_string(is) + ")");
  c.why << "blind (" << cs << ", " << is << ")";
  return c;
}

// Deterministic respondent whose reply depends only on the prompt it sees.
class PromptHashRespondent final : public Respondent {
 public:
  std::string complete(const std::vector<Message>& messages, const GenerationParams&,
                       const TurnContext& ctx) override {
    std::string all;
    for (const auto& m : messages) all += m.content + '\x1f';
    const bool pick_target = derive_seed(0, all) % 3 != 0;
    return "Reasoning.\nFinal answer: " +
           (pick_target ? ctx.target_token : ctx.alternative_token);
  }
  bool deterministic() const override { return true; }
  std::string describe() const override { return "prompt-hash"; }
};

DialogueOptions quiet_options() {
  DialogueOptions o;
  o.model_label = "acceptance";
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

// 5. SingleShotBinary equals turn 1 of PositiveConviction, per instance.
Check turn_one_equivalence() {
  Check c;
  PromptHashRespondent r;
  std::size_t mismatches = 0, hits = 0;
  for (int i = 0; i < 100; ++i) {
    const auto rec = make_record("eq" + std::to_string(i), 3 + i % 3,
                                 static_cast<std::size_t>(i) % (3 + i % 3));
    const auto seed = derive_seed(77, rec.id);
    const auto ss = run_condition(rec, make_instance(rec, Condition::single_shot_binary, seed,
                                                     TargetKind::truth),
                                  r, {}, quiet_options());
    const auto pc = run_condition(rec, make_instance(rec, Condition::positive_conviction, seed),
                                  r, {}, quiet_options());
    const auto& a = ss.turns.at(0);
    const auto& b = pc.turns.at(0);
    const bool same = a.prompt == b.prompt && a.presented == b.presented &&
                      a.parsed == b.parsed && a.raw_output == b.raw_output;
    mismatches += !same;
    hits += a.parsed.kind == SelectionKind::option &&
            ss.outcome.status != Status::lost_at_turn_one;
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatched instances");
  c.expect(hits > 0 && hits < 100, "respondent did not vary its answers");
  c.why << "100 instances, " << hits << " correct at turn 1";
  return c;
}

// 6. Parser corpus and exact audit fraction.
Check parser_regression() {
  Check c;
  const auto corpus = testing_support::load_parser_corpus();
  std::size_t correct = 0;
  for (const auto& k : corpus) {
    const auto s = extract_selection(k.raw, k.presented, k.abstention_offered, k.style);
    const bool ok = s.kind == k.expected_kind &&
                    (k.expected_kind == SelectionKind::unparseable || s.label == k.expected_label);
    correct += ok;
    if (!ok) c.expect(false, "case " + k.id + " misparsed; ");
  }
  c.expect(corpus.size() == 200, "corpus has " + std::to_string(corpus.size()) + " cases");
  std::vector<Transcript> ts(10'000);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    TurnRecord turn;
    turn.parsed.kind = (i == 123 || i == 4567) ? SelectionKind::unparseable : SelectionKind::option;
    ts[i].turns.push_back(turn);
  }
  const auto audit = audit_parse_rate(ts);
  c.expect(audit.rate == 0.0002 && audit.unparseable == 2, "audit fraction wrong");
  c.why << correct << "/" << corpus.size() << " parsed, audit " << audit.rate;
  return c;
}

// 7. Full run against the bundled stub server with injected 429s.
Check wire_conformance() {
  Check c;
  StubOptions so;
  so.rate_limit_every = 5;
  StubServer stub(so);
  TempDir dir;
  std::vector<McqaRecord> rs;
  for (int i = 0; i < 20; ++i)
    rs.push_back(make_record("w" + std::to_string(i), 4, static_cast<std::size_t>(i % 4)));
  rs[3].question = "Quotes \"inside\", a tab\there,\nnewline and unicode é→";
  write_file(dir / "data.jsonl", testing_support::to_jsonl(rs));
  write_file(dir / "run.ini",
             "[run]\nn = 20\nconditions = all\nconcurrency = 6\nbootstrap_resamples = 1000\n"
             "output_dir = out\n[corpus]\ndatasets = custom:data.jsonl\n"
             "[respondent]\nkind = remote\nmodel = stub-model\ninitial_backoff_ms = 5\n"
             "backoff_multiplier = 2\nmax_retries = 3\nbase_url = " + stub.base_url() + "\n");
  const auto start = Clock::now();
  CommandOptions o;
  o.config = dir / "run.ini";
  o.quiet = true;
  std::ostringstream out, err;
  const int rc = cmd_run(o, out, err);
  const double elapsed = seconds_since(start);
  c.expect(rc == kExitOk, "run exited " + std::to_string(rc) + ": " + err.str());
  if (!c.ok) return c;

  const auto log = TranscriptLog::read(dir / "out" / "transcripts.jsonl");
  g_reports.push_back(load_json(dir / "out" / "report.json"));
  std::map<std::string, int> per_condition;
  std::multiset<std::string> sent_prompts, logged_prompts;
  std::size_t turns = 0, extra_attempts = 0;
  for (const auto& t : log.transcripts) {
    ++per_condition[std::string(to_string(t.condition))];
    c.expect(!t.outcome.excluded(), "transcript excluded: " + t.error.value_or(""));
    for (std::size_t i = 0; i < t.turns.size(); ++i) {
      c.expect(t.turns[i].turn == static_cast<int>(i + 1), "turn numbering broken");
      extra_attempts += static_cast<std::size_t>(t.turns[i].attempts - 1);
      logged_prompts.insert(t.turns[i].prompt);
    }
    turns += t.turns.size();
  }
  c.expect(per_condition.size() == 6, "not all six conditions ran");
  for (const auto& [name, count] : per_condition) {
    const int expected = (name == "SingleShotFull" || name == "SingleShotBinary") ? 40 : 20;
    c.expect(count == expected, name + " has " + std::to_string(count) + " transcripts");
  }
  const auto bodies = stub.accepted_bodies();
  for (const auto& b : bodies) {
    const auto msgs = messages_from_json(b.at("messages"));
    c.expect(b.at("messages") == messages_to_json(msgs), "body messages do not round-trip");
    c.expect(b.at("model") == "stub-model", "wrong model in body");
    sent_prompts.insert(msgs.back().content);
  }
  c.expect(sent_prompts == logged_prompts, "sent prompts differ from logged prompts");
  c.expect(bodies.size() == turns, "accepted requests != logged turns");
  c.expect(stub.rejected() > 0, "no 429s were injected");
  c.expect(extra_attempts == stub.rejected(), "retry count differs from 429 count");
  c.expect(elapsed < 60.0, "took " + std::to_string(elapsed) + " s");
  c.why << log.transcripts.size() << " transcripts, " << turns << " turns, "
        << stub.rejected() << " 429s retried, " << elapsed << " s";
  return c;
}

// 8. Byte-identical reruns; concurrency does not change results.
Check determinism() {
  Check c;
  TempDir dir;
  const auto ini = sim_ini(150, "all",
                           "q_init = 0.75\np_stick = 0.8\nq_flex_correct = 0.6\n"
                           "q_flex_incorrect = 0.3\nseed = 4\n");
  ojson a, b, one, many;
  c.expect(run_ini_simulate(dir, "a", ini, a) && run_ini_simulate(dir, "b", ini, b) &&
               run_ini_simulate(dir, "one", ini, one, 1) &&
               run_ini_simulate(dir, "many", ini, many, 16),
           "simulate failed");
  if (!c.ok) return c;
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir / "a");
    for (const char* other : {"b", "one", "many"})
      c.expect(read_file(entry.path()) == read_file(dir / other / rel),
               rel.string() + " differs in " + other);
    ++files;
  }
  c.why << files << " files identical across 4 runs (concurrency 1 and 16 included)";
  return c;
}

// Ideal behaviour except for an unparseable reply at turn 1 of selected
// conversations.
class InjectingRespondent final : public Respondent {
 public:
  explicit InjectingRespondent(std::function<bool(const TurnContext&)> inject)
      : inject_(std::move(inject)), inner_(BernoulliAgentSpec{0.8, 0.85, 0.7, 0.2, 13}) {}

  std::string complete(const std::vector<Message>& messages, const GenerationParams& params,
                       const TurnContext& ctx) override {
    if (inject_(ctx)) {
      ++injected_;
      return "Let me think about this some more.";
    }
    return inner_.complete(messages, params, ctx);
  }
  bool deterministic() const override { return true; }
  std::string describe() const override { return "injecting"; }
  std::size_t injected() const { return injected_; }

 private:
  std::function<bool(const TurnContext&)> inject_;
  BernoulliRespondent inner_;
  std::atomic<std::size_t> injected_{0};
};

// 9. Injected parse failures are excluded from every denominator.
Check exclusion_accounting() {
  Check c;
  std::vector<McqaRecord> rs;
  for (int i = 0; i < 400; ++i)
    rs.push_back(make_record("x" + std::to_string(i), 4, static_cast<std::size_t>(i % 4)));
  const std::vector<Condition> all(std::begin(kAllConditions), std::end(kAllConditions));
  auto selected = [](const TurnContext& ctx) {
    return ctx.turn == 1 && derive_seed(1, ctx.record_id) % 20 == 0;
  };
  InjectingRespondent clean([](const TurnContext&) { return false; });
  InjectingRespondent dirty(selected);
  const auto clean_ts = testing_support::run_with(rs, all, clean, 8, 4, quiet_options());
  const auto dirty_ts = testing_support::run_with(rs, all, dirty, 8, 4, quiet_options());

  std::size_t chosen = 0;
  for (const auto& r : rs) chosen += derive_seed(1, r.id) % 20 == 0;
  c.expect(chosen > 0, "no records selected for injection");

  // Per subset: how many transcripts were hit.
  std::map<std::string, std::size_t> injected;
  for (const auto& t : dirty_ts)
    if (derive_seed(1, t.record_id) % 20 == 0)
      ++injected[std::string(to_string(t.condition)) + "/" +
                 std::string(to_string(t.target_kind()))];
  c.expect(dirty.injected() == chosen * 8, "injection count unexpected");

  ReportOptions ro;
  ro.bootstrap_resamples = 1000;
  const auto base = build_report(clean_ts, ro);
  const auto hit = build_report(dirty_ts, ro);
  g_reports.push_back(base);
  g_reports.push_back(hit);

  std::size_t metrics = 0;
  const auto& gb = group(base);
  const auto& gh = group(hit);
  for (std::size_t i = 0; i < gh.at("conditions").size(); ++i) {
    const auto& h = gh.at("conditions").at(i);
    const auto& b = gb.at("conditions").at(i);
    const std::string key = h.at("condition").get<std::string>() + "/" +
                            h.at("target").get<std::string>();
    const std::size_t k = injected[key];
    if (h.contains("rate")) {
      c.expect(h.at("rate").at("exclusions").at("excluded") == k, key + " excluded count wrong");
      c.expect(h.at("rate").at("denominator").get<std::size_t>() ==
                   b.at("rate").at("denominator").get<std::size_t>() - k,
               key + " denominator not reduced");
    } else {
      c.expect(h.at("curve").at("n_excluded") == k, key + " n_excluded wrong");
      c.expect(h.at("curve").at("n_included").get<std::size_t>() ==
                   b.at("curve").at("n_included").get<std::size_t>() - k,
               key + " n_included not reduced");
      c.expect(h.at("end_to_end").at("denominator") == h.at("curve").at("n_included"),
               key + " end-to-end denominator wrong");
    }
    ++metrics;
  }
  for (const char* s : {"correct_switch", "incorrect_switch"}) {
    const std::string key = std::string(s) == "correct_switch" ? "Flexibility/abstain"
                                                               : "FlexSensitivity/abstain";
    const auto& h = gh.at("switch_rates").at(s);
    const auto& b = gb.at("switch_rates").at(s);
    c.expect(h.at("exclusions").at("excluded") == injected[key], key + " switch exclusions wrong");
    c.expect(h.at("denominator").get<std::size_t>() + h.at("t1_failures").get<std::size_t>() ==
                 b.at("denominator").get<std::size_t>() + b.at("t1_failures").get<std::size_t>() -
                     injected[key],
             key + " switch denominator not reduced");
    ++metrics;
  }
  c.expect(gh.at("parse_audit").at("unparseable") == dirty.injected(),
           "parse audit disagrees with injected count");
  c.why << dirty.injected() << " injected over " << dirty_ts.size() << " conversations, "
        << metrics << " metrics checked";
  return c;
}

// 10. Truth visibility by condition over 1000 instances each.
Check structure_audit() {
  Check c;
  BernoulliRespondent ideal(BernoulliAgentSpec::ideal());
  std::size_t violations = 0, instances = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t options = 3 + static_cast<std::size_t>(i % 3);
    const auto r = make_record("s" + std::to_string(i), options, static_cast<std::size_t>(i) % options);
    const auto seed = derive_seed(2024, r.id);
    for (auto cond : {Condition::negative_conviction, Condition::flex_sensitivity}) {
      const auto t = run_condition(r, make_instance(r, cond, seed), ideal, {}, quiet_options());
      for (const auto& turn : t.turns)
        for (const auto& p : turn.presented) violations += p.source == r.truth_label;
      ++instances;
    }
    const auto t =
        run_condition(r, make_instance(r, Condition::flexibility, seed), ideal, {}, quiet_options());
    std::size_t shown = 0;
    bool at_two = false;
    for (const auto& turn : t.turns)
      for (const auto& p : turn.presented)
        if (p.source == r.truth_label) {
          ++shown;
          at_two = turn.turn == 2;
        }
    violations += !(shown == 1 && at_two);
    ++instances;
  }
  c.expect(violations == 0, std::to_string(violations) + " violations");
  c.why << instances << " instances, " << violations << " violations";
  return c;
}

// 3. Every curve emitted by every run above is non-increasing.
Check monotonicity() {
  Check c;
  std::size_t curves = 0, violations = 0;
  for (const auto& report : g_reports)
    for (const auto& g : report.at("groups"))
      for (const auto& cond : g.at("conditions")) {
        if (!cond.contains("curve")) continue;
        const auto& v = cond.at("curve").at("C");
        for (std::size_t i = 1; i < v.size(); ++i)
          violations += v.at(i).get<double>() > v.at(i - 1).get<double>();
        ++curves;
      }
  c.expect(curves > 0, "no curves collected");
  c.expect(violations == 0, std::to_string(violations) + " violations");
  c.why << curves << " curves from " << g_reports.size() << " reports, " << violations
        << " violations";
  return c;
}

}  // namespace

int main() {
  struct Criterion {
    int number;
    const char* name;
    std::function<Check()> run;
  };
  // Monotonicity runs last so it can sweep every report the others produced.
  const std::vector<Criterion> criteria = {
      {1, "bernoulli oracle", bernoulli_oracle},
      {2, "degenerate agents", degenerate_agents},
      {4, "flexibility corners", flexibility_corners},
      {5, "turn-1 equivalence", turn_one_equivalence},
      {6, "parser regression", parser_regression},
      {7, "wire conformance", wire_conformance},
      {8, "determinism and replay", determinism},
      {9, "exclusion accounting", exclusion_accounting},
      {10, "condition structure audit", structure_audit},
      {3, "monotonicity", monotonicity},
  };
  std::map<int, std::string> lines;
  int failures = 0;
  for (const auto& cr : criteria) {
    Check result;
    try {
      result = cr.run();
    } catch (const std::exception& e) {
      result.ok = false;
      result.why << "exception: " << e.what();
    }
    failures += !result.ok;
    std::ostringstream line;
    line << (result.ok ? "PASS" : "FAIL") << " [" << cr.number << "] " << cr.name << ": "
         << result.why.str();
    lines[cr.number] = line.str();
  }
  for (const auto& [n, line] : lines) std::cout << line << "\n";
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
