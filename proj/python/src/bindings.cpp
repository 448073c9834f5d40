// Python bindings. Structured values cross the boundary as JSON text; the
// Python package decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "conviction/config.hpp"
#include "conviction/corpus.hpp"
#include "conviction/metrics.hpp"
#include "conviction/parsing.hpp"
#include "conviction/report.hpp"
#include "conviction/runner.hpp"
#include "conviction/stub_server.hpp"

namespace py = pybind11;
using namespace conviction;
using ojson = nlohmann::ordered_json;

namespace {

std::vector<McqaRecord> records_from(const std::string& text) {
  std::vector<McqaRecord> out;
  for (const auto& j : ojson::parse(text)) out.push_back(record_from_json(j));
  return out;
}

std::vector<Transcript> transcripts_from(const std::string& text) {
  std::vector<Transcript> out;
  for (const auto& j : nlohmann::json::parse(text)) out.push_back(transcript_from_json(j));
  return out;
}

std::string transcripts_to(const std::vector<Transcript>& ts) {
  ojson arr = ojson::array();
  for (const auto& t : ts) arr.push_back(to_json(t));
  return arr.dump();
}

std::vector<Condition> conditions_from(const std::vector<std::string>& names) {
  std::vector<Condition> out;
  for (const auto& n : names) {
    if (n == "all") return {std::begin(kAllConditions), std::end(kAllConditions)};
    out.push_back(parse_condition(n));
  }
  return out;
}

py::dict selection_dict(const Selection& s) {
  py::dict d;
  d["kind"] = std::string(to_string(s.kind));
  d["label"] = s.label;
  d["matched_by"] = std::string(to_string(s.matched_by));
  d["raw_span"] = s.raw_span;
  return d;
}

std::string instance_json(const PerturbedInstance& i) {
  ojson j;
  j["record_id"] = i.record_id;
  j["condition"] = to_string(i.condition);
  j["target"] = i.target;
  j["distractor_order"] = i.distractor_order;
  j["t2_option"] = i.t2_option ? ojson(*i.t2_option) : ojson(nullptr);
  j["seed"] = i.seed;
  j["max_turns"] = i.max_turns();
  return j.dump();
}

using Command = int (*)(const CommandOptions&, std::ostream&, std::ostream&);

py::tuple run_command(Command cmd, const CommandOptions& opts) {
  std::ostringstream out, err;
  int rc;
  {
    py::gil_scoped_release release;
    rc = cmd(opts, out, err);
  }
  return py::make_tuple(rc, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Stick-or-switch multi-turn evaluation harness";
  m.attr("__version__") = kHarnessVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CorpusError>(m, "CorpusError", PyExc_ValueError);
  py::register_exception<MetricsError>(m, "MetricsError", PyExc_ArithmeticError);

  m.def(
      "parse_answer",
      [](const std::string& raw, const std::vector<std::pair<std::string, std::string>>& presented,
         bool abstention_offered, bool stick_or_switch) {
        std::vector<Choice> choices;
        for (const auto& [label, text] : presented) choices.push_back({label, text});
        return selection_dict(extract_selection(
            raw, choices, abstention_offered,
            stick_or_switch ? TurnStyle::stick_or_switch : TurnStyle::initial));
      },
      py::arg("raw"), py::arg("presented"), py::arg("abstention_offered") = false,
      py::arg("stick_or_switch") = false);

  m.def(
      "load_records",
      [](const std::filesystem::path& path, std::optional<std::string> dataset, bool skip_invalid) {
        const auto schema = dataset ? std::optional(parse_dataset(*dataset)) : std::nullopt;
        const auto res =
            load_records(path, schema, skip_invalid ? OnInvalid::skip : OnInvalid::fail);
        ojson j;
        j["records"] = ojson::array();
        for (const auto& r : res.records) j["records"].push_back(record_to_json(r));
        j["skipped"] = ojson::array();
        for (const auto& d : res.skipped)
          j["skipped"].push_back({{"line", d.line}, {"message", d.message}});
        return j.dump();
      },
      py::arg("path"), py::arg("dataset") = py::none(), py::arg("skip_invalid") = false);

  m.def(
      "synthesize_records",
      [](std::size_t n, std::size_t options, std::uint64_t seed) {
        ojson arr = ojson::array();
        for (const auto& r : synthesize_records(n, options, seed)) arr.push_back(record_to_json(r));
        return arr.dump();
      },
      py::arg("n"), py::arg("options") = 4, py::arg("seed") = 0);

  m.def(
      "make_instance",
      [](const std::string& record, const std::string& condition, std::uint64_t seed,
         std::optional<std::string> target) {
        const auto r = record_from_json(ojson::parse(record));
        const auto t = target ? std::optional(parse_target_kind(*target)) : std::nullopt;
        return instance_json(make_instance(r, parse_condition(condition), seed, t));
      },
      py::arg("record"), py::arg("condition"), py::arg("seed"), py::arg("target") = py::none());

  m.def(
      "simulate",
      [](const std::string& records, const std::vector<std::string>& conditions, double q_init,
         double p_stick, double q_flex_correct, double q_flex_incorrect, std::uint64_t agent_seed,
         std::uint64_t seed, int concurrency) {
        const auto rs = records_from(records);
        const auto conds = conditions_from(conditions);
        const BernoulliAgentSpec spec{q_init, p_stick, q_flex_correct, q_flex_incorrect,
                                      agent_seed};
        spec.validate();
        std::vector<Transcript> ts;
        {
          py::gil_scoped_release release;
          BernoulliRespondent agent(spec);
          DialogueOptions opts;
          opts.model_label = "bernoulli-agent";
          GenerationParams params;
          params.model_name = opts.model_label;
          ts = execute_jobs(plan_jobs(rs, conds, seed), agent, params, opts, concurrency);
        }
        return transcripts_to(ts);
      },
      py::arg("records"), py::arg("conditions"), py::arg("q_init") = 1.0,
      py::arg("p_stick") = 1.0, py::arg("q_flex_correct") = 1.0,
      py::arg("q_flex_incorrect") = 0.0, py::arg("agent_seed") = 0, py::arg("seed") = 0,
      py::arg("concurrency") = 4);

  m.def(
      "build_report",
      [](const std::string& transcripts, std::size_t bootstrap_resamples, double ci_level,
         std::uint64_t bootstrap_seed) {
        auto ts = transcripts_from(transcripts);
        ReportOptions o;
        o.bootstrap_resamples = bootstrap_resamples;
        o.ci_level = ci_level;
        o.bootstrap_seed = bootstrap_seed;
        py::gil_scoped_release release;
        return build_report(std::move(ts), o).dump();
      },
      py::arg("transcripts"), py::arg("bootstrap_resamples") = 2000, py::arg("ci_level") = 0.95,
      py::arg("bootstrap_seed") = 0);

  m.def(
      "summary_csv",
      [](const std::string& report) { return summary_csv(ojson::parse(report)); },
      py::arg("report"));

  m.def(
      "audit_parse_rate",
      [](const std::string& transcripts) {
        const auto ts = transcripts_from(transcripts);
        const auto a = audit_parse_rate(ts);
        return py::make_tuple(a.total_turns, a.unparseable, a.rate);
      },
      py::arg("transcripts"));

  m.def("config_hash", [](const std::filesystem::path& p) { return load_config(p).hash(); },
        py::arg("path"));

  auto options = [](std::filesystem::path config, std::optional<std::filesystem::path> out,
                    std::optional<std::uint64_t> seed, std::optional<int> concurrency,
                    bool resume, bool quiet) {
    CommandOptions o;
    o.config = std::move(config);
    o.out = std::move(out);
    o.seed = seed;
    o.concurrency = concurrency;
    o.resume = resume;
    o.quiet = quiet;
    return o;
  };
  for (auto [name, cmd] : {std::pair<const char*, Command>{"cmd_validate", cmd_validate},
                           {"cmd_run", cmd_run},
                           {"cmd_simulate", cmd_simulate}}) {
    m.def(
        name,
        [cmd, options](std::filesystem::path config, std::optional<std::filesystem::path> out,
                       std::optional<std::uint64_t> seed, std::optional<int> concurrency,
                       bool resume, bool quiet) {
          return run_command(cmd, options(std::move(config), std::move(out), seed, concurrency,
                                          resume, quiet));
        },
        py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
        py::arg("concurrency") = py::none(), py::arg("resume") = false, py::arg("quiet") = true);
  }
  m.def(
      "cmd_report",
      [](std::vector<std::filesystem::path> inputs, std::optional<std::filesystem::path> out,
         std::optional<std::filesystem::path> config, bool allow_mixed, bool quiet) {
        CommandOptions o;
        o.inputs = std::move(inputs);
        o.out = std::move(out);
        if (config) o.config = *config;
        o.allow_mixed = allow_mixed;
        o.quiet = quiet;
        return run_command(cmd_report, o);
      },
      py::arg("inputs"), py::arg("out") = py::none(), py::arg("config") = py::none(),
      py::arg("allow_mixed") = false, py::arg("quiet") = true);

  py::class_<StubServer>(m, "StubServer")
      .def(py::init([](int rate_limit_every, int fail_first, std::string api_key) {
             StubOptions o;
             o.rate_limit_every = rate_limit_every;
             o.fail_first = fail_first;
             o.api_key = std::move(api_key);
             return std::make_unique<StubServer>(o);
           }),
           py::arg("rate_limit_every") = 0, py::arg("fail_first") = 0, py::arg("api_key") = "")
      .def_property_readonly("base_url", &StubServer::base_url)
      .def_property_readonly("chat_requests", &StubServer::chat_requests)
      .def_property_readonly("rejected", &StubServer::rejected)
      .def("accepted_bodies",
           [](const StubServer& s) {
             nlohmann::json arr = nlohmann::json::array();
             for (const auto& b : s.accepted_bodies()) arr.push_back(b);
             return arr.dump();
           })
      .def("stop", &StubServer::stop, py::call_guard<py::gil_scoped_release>());
}
