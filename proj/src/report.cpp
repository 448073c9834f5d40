#include "conviction/report.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "conviction/metrics.hpp"
#include "conviction/random.hpp"

namespace conviction {

namespace {

using ojson = nlohmann::ordered_json;

struct Subset {
  Condition condition;
  TargetKind target;
  auto operator<=>(const Subset&) const = default;
};

ojson exclusions_json(const Exclusions& ex) {
  return {{"attempted", ex.attempted},
          {"included", ex.included},
          {"excluded", ex.excluded()},
          {"parse_errors", ex.parse_errors},
          {"transport_errors", ex.transport_errors}};
}

ojson interval_json(const Interval& i) { return ojson::array({i.lower, i.upper}); }

ojson rate_json(const RateEstimate& r, const Interval& ci) {
  return {{"value", r.value},
          {"numerator", r.numerator},
          {"denominator", r.denominator},
          {"ci", interval_json(ci)},
          {"exclusions", exclusions_json(r.exclusions)}};
}

ojson optional_number(const std::optional<double>& v) {
  return v ? ojson(*v) : ojson(nullptr);
}

class GroupBuilder {
 public:
  GroupBuilder(std::string model, Dataset dataset,
               std::map<Subset, std::vector<Transcript>> subsets,
               const ReportOptions& options)
      : model_(std::move(model)),
        dataset_(dataset),
        subsets_(std::move(subsets)),
        options_(options) {}

  ojson build() {
    ojson g;
    g["model"] = model_;
    g["dataset"] = to_string(dataset_);
    ojson conditions = ojson::array();
    for (auto& [subset, transcripts] : subsets_) {
      if (is_flexibility(subset.condition)) continue;
      conditions.push_back(is_single_shot(subset.condition)
                               ? single_shot(subset, transcripts)
                               : conviction(subset, transcripts));
    }
    g["conditions"] = std::move(conditions);
    g["conversation_tax"] = taxes();
    g["switch_rates"] = switching();
    g["turn1_consistency"] = turn1_consistency();

    std::vector<Transcript> all;
    for (auto& [s, ts] : subsets_) all.insert(all.end(), ts.begin(), ts.end());
    const auto audit = audit_parse_rate(all);
    g["parse_audit"] = {{"total_turns", audit.total_turns},
                        {"unparseable", audit.unparseable},
                        {"rate", audit.rate}};
    return g;
  }

  const std::map<std::string, TaxDelta>& tax_values() const { return taxes_; }

 private:
  Interval ci(std::span<const std::uint8_t> indicators, std::string_view what) {
    if (indicators.empty()) return {};
    const auto seed = derive_seed(
        options_.bootstrap_seed,
        model_ + "|" + std::string(to_string(dataset_)) + "|" + std::string(what));
    return bootstrap_ci(indicators, options_.ci_level,
                        options_.bootstrap_resamples, seed);
  }

  std::string tag(const Subset& s) const {
    return std::string(to_string(s.condition)) + "/" +
           std::string(to_string(s.target));
  }

  ojson single_shot(const Subset& s, const std::vector<Transcript>& ts) {
    ojson j;
    j["condition"] = to_string(s.condition);
    j["target"] = to_string(s.target);
    j["metric"] = s.target == TargetKind::truth ? "accuracy" : "abstention";
    const auto ex = count_exclusions(ts);
    if (ex.included == 0) {
      j["undefined"] = "no included transcripts";
      j["exclusions"] = exclusions_json(ex);
      return j;
    }
    const auto rate = single_shot_rate(ts);
    rates_[s] = rate.value;
    j["rate"] = rate_json(rate, ci(survival_indicators(ts, 1), tag(s)));
    return j;
  }

  ojson conviction(const Subset& s, const std::vector<Transcript>& ts) {
    ojson j;
    j["condition"] = to_string(s.condition);
    j["target"] = to_string(s.target);
    j["metric"] = "cumulative_survival";
    const auto ex = count_exclusions(ts);
    if (ex.included == 0) {
      j["undefined"] = "no included transcripts";
      j["exclusions"] = exclusions_json(ex);
      return j;
    }
    int t_max = 1;
    for (const auto& t : ts) t_max = std::max(t_max, t.max_turns);
    const auto curve = survival_curve(ts, static_cast<std::size_t>(t_max));
    curves_[s] = curve.final_value();
    ojson cis = ojson::array();
    for (int t = 1; t <= t_max; ++t)
      cis.push_back(interval_json(ci(survival_indicators(ts, static_cast<std::size_t>(t)),
                                     tag(s) + "/C" + std::to_string(t))));
    j["curve"] = {{"C", curve.values},
                  {"survivors", curve.survivors},
                  {"n_included", curve.n_included},
                  {"n_excluded", curve.n_excluded},
                  {"ci", std::move(cis)},
                  {"exclusions", exclusions_json(curve.exclusions)}};
    j["end_to_end"] = {{"value", curve.final_value()},
                       {"numerator", curve.survivors.back()},
                       {"denominator", curve.n_included}};
    if (s.condition == Condition::positive_conviction) {
      if (auto it = c1_.find(s); it == c1_.end()) c1_[s] = curve.values.front();
    }
    return j;
  }

  ojson taxes() {
    ojson out = ojson::array();
    const std::pair<Condition, TargetKind> mts[] = {
        {Condition::positive_conviction, TargetKind::truth},
        {Condition::negative_conviction, TargetKind::abstain}};
    for (auto [mt_cond, target] : mts) {
      auto mt = curves_.find({mt_cond, target});
      if (mt == curves_.end()) continue;
      for (auto ss_cond : {Condition::single_shot_full, Condition::single_shot_binary}) {
        auto ss = rates_.find({ss_cond, target});
        if (ss == rates_.end()) continue;
        const auto d = conversation_tax(ss->second, mt->second);
        const std::string name = std::string(to_string(mt_cond)) + "_vs_" +
                                 std::string(to_string(ss_cond));
        taxes_[name] = d;
        out.push_back({{"comparison", name},
                       {"multi_turn", to_string(mt_cond)},
                       {"baseline", to_string(ss_cond)},
                       {"metric", target == TargetKind::truth ? "accuracy" : "abstention"},
                       {"single_shot", ss->second},
                       {"multi_turn_end_to_end", mt->second},
                       {"absolute_points", d.absolute_points},
                       {"relative", optional_number(d.relative)}});
      }
    }
    return out;
  }

  ojson switching() {
    auto flex = subsets_.find({Condition::flexibility, TargetKind::abstain});
    auto sens = subsets_.find({Condition::flex_sensitivity, TargetKind::abstain});
    if (flex == subsets_.end() || sens == subsets_.end()) return nullptr;
    ojson j;
    std::size_t f1 = 0, s1 = 0;
    auto denominators = [](const std::vector<Transcript>& ts, std::size_t& t1) {
      std::size_t d = 0;
      t1 = 0;
      for (const auto& t : ts) {
        if (t.outcome.excluded()) continue;
        if (t.outcome.status == Status::lost_at_turn_one) ++t1;
        else ++d;
      }
      return d;
    };
    if (denominators(flex->second, f1) == 0 || denominators(sens->second, s1) == 0) {
      j["undefined"] = "no transcripts abstained at t=1";
      j["flexibility_exclusions"] = exclusions_json(count_exclusions(flex->second));
      j["sensitivity_exclusions"] = exclusions_json(count_exclusions(sens->second));
      return j;
    }
    const auto rates = switch_rates(flex->second, sens->second);
    auto indicators = [](const std::vector<Transcript>& ts) {
      std::vector<const Transcript*> kept;
      for (const auto& t : ts)
        if (!t.outcome.excluded() && t.outcome.status != Status::lost_at_turn_one)
          kept.push_back(&t);
      std::stable_sort(kept.begin(), kept.end(), [](auto* a, auto* b) {
        return key_of(*a) < key_of(*b);
      });
      std::vector<std::uint8_t> out;
      for (auto* t : kept) out.push_back(t->outcome.status == Status::switched);
      return out;
    };
    j["correct_switch"] = rate_json(rates.correct,
                                    ci(indicators(flex->second), "switch/correct"));
    j["correct_switch"]["t1_failures"] = rates.correct_t1_failures;
    j["incorrect_switch"] = rate_json(
        rates.incorrect, ci(indicators(sens->second), "switch/incorrect"));
    j["incorrect_switch"]["t1_failures"] = rates.incorrect_t1_failures;
    j["gap"] = rates.correct.value - rates.incorrect.value;
    return j;
  }

  ojson turn1_consistency() {
    auto c1 = c1_.find({Condition::positive_conviction, TargetKind::truth});
    auto ss = rates_.find({Condition::single_shot_binary, TargetKind::truth});
    if (c1 == c1_.end() || ss == rates_.end()) return nullptr;
    return {{"positive_conviction_C1", c1->second},
            {"single_shot_binary_accuracy", ss->second},
            {"equal", c1->second == ss->second}};
  }

  std::string model_;
  Dataset dataset_;
  std::map<Subset, std::vector<Transcript>> subsets_;
  const ReportOptions& options_;
  std::map<Subset, double> rates_;
  std::map<Subset, double> curves_;
  std::map<Subset, double> c1_;
  std::map<std::string, TaxDelta> taxes_;
};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string number(double v) {
  return ojson(v).dump();
}

std::string sanitize(std::string s) {
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  return s;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

nlohmann::ordered_json build_report(std::vector<Transcript> transcripts,
                                    const ReportOptions& options) {
  sort_canonical(transcripts);
  std::map<std::pair<std::string, Dataset>, std::map<Subset, std::vector<Transcript>>>
      groups;
  std::set<std::string> template_versions;
  for (auto& t : transcripts) {
    template_versions.insert(t.template_version);
    groups[{t.model, t.dataset}][{t.condition, t.target_kind()}].push_back(std::move(t));
  }

  ojson report;
  report["manifest"] = options.manifest;
  ojson warnings = ojson::array();
  for (const auto& w : options.warnings) warnings.push_back(w);
  if (template_versions.size() > 1) {
    std::string list;
    for (const auto& v : template_versions) list += (list.empty() ? "" : ", ") + v;
    warnings.push_back("mixed template versions: " + list);
  }
  report["warnings"] = warnings;
  report["template_versions"] = template_versions;
  report["bootstrap"] = {{"resamples", options.bootstrap_resamples},
                         {"level", options.ci_level},
                         {"seed", options.bootstrap_seed}};

  ojson group_list = ojson::array();
  std::map<std::pair<Dataset, std::string>, std::vector<TaxDelta>> per_dataset;
  std::vector<Transcript> everything;
  for (auto& [key, subsets] : groups) {
    for (auto& [s, ts] : subsets) everything.insert(everything.end(), ts.begin(), ts.end());
    GroupBuilder builder(key.first, key.second, std::move(subsets), options);
    group_list.push_back(builder.build());
    for (const auto& [name, d] : builder.tax_values())
      per_dataset[{key.second, name}].push_back(d);
  }
  report["groups"] = std::move(group_list);

  // Averages across models; both absolute and relative deltas, since a mean
  // of one is not derivable from the mean of the other.
  ojson averages = ojson::array();
  for (const auto& [key, deltas] : per_dataset) {
    double abs_sum = 0.0, rel_sum = 0.0;
    std::size_t rel_n = 0;
    for (const auto& d : deltas) {
      abs_sum += d.absolute_points;
      if (d.relative) {
        rel_sum += *d.relative;
        ++rel_n;
      }
    }
    averages.push_back(
        {{"dataset", to_string(key.first)},
         {"comparison", key.second},
         {"models", deltas.size()},
         {"mean_absolute_points", abs_sum / static_cast<double>(deltas.size())},
         {"mean_relative", rel_n ? ojson(rel_sum / static_cast<double>(rel_n))
                                 : ojson(nullptr)},
         {"models_with_relative", rel_n}});
  }
  report["averages_across_models"] = std::move(averages);

  const auto audit = audit_parse_rate(everything);
  report["parse_audit"] = {{"total_turns", audit.total_turns},
                           {"unparseable", audit.unparseable},
                           {"rate", audit.rate}};
  return report;
}

std::string summary_csv(const nlohmann::ordered_json& report) {
  std::ostringstream out;
  out << "# manifest: " << report.at("manifest").dump() << "\n";
  out << "model,dataset,condition,target,metric,value,numerator,denominator,"
         "excluded\n";
  auto row = [&](const std::string& model, const std::string& dataset,
                 const std::string& condition, const std::string& target,
                 const std::string& metric, const ojson& value,
                 const ojson& num, const ojson& den, const ojson& excl) {
    auto cell = [](const ojson& v) {
      if (v.is_null()) return std::string();
      if (v.is_string()) return v.get<std::string>();
      return v.dump();
    };
    out << csv_field(model) << ',' << dataset << ',' << condition << ','
        << target << ',' << metric << ',' << cell(value) << ',' << cell(num)
        << ',' << cell(den) << ',' << cell(excl) << '\n';
  };
  for (const auto& g : report.at("groups")) {
    const auto model = g.at("model").get<std::string>();
    const auto dataset = g.at("dataset").get<std::string>();
    for (const auto& c : g.at("conditions")) {
      const auto cond = c.at("condition").get<std::string>();
      const auto target = c.at("target").get<std::string>();
      if (c.contains("undefined")) {
        row(model, dataset, cond, target, c.at("metric").get<std::string>(),
            nullptr, nullptr, 0, c.at("exclusions").at("excluded"));
        continue;
      }
      if (c.contains("rate")) {
        const auto& r = c.at("rate");
        row(model, dataset, cond, target, c.at("metric").get<std::string>(),
            r.at("value"), r.at("numerator"), r.at("denominator"),
            r.at("exclusions").at("excluded"));
        continue;
      }
      const auto& curve = c.at("curve");
      for (std::size_t t = 0; t < curve.at("C").size(); ++t)
        row(model, dataset, cond, target, "C_" + std::to_string(t + 1),
            curve.at("C")[t], curve.at("survivors")[t], curve.at("n_included"),
            curve.at("n_excluded"));
      const auto& e2e = c.at("end_to_end");
      row(model, dataset, cond, target, "end_to_end", e2e.at("value"),
          e2e.at("numerator"), e2e.at("denominator"), curve.at("n_excluded"));
    }
    for (const auto& t : g.at("conversation_tax")) {
      const auto target = t.at("metric") == "accuracy" ? "truth" : "abstain";
      const auto baseline = t.at("baseline").get<std::string>();
      row(model, dataset, t.at("multi_turn").get<std::string>(), target,
          "tax_points_vs_" + baseline, t.at("absolute_points"), nullptr, nullptr,
          nullptr);
      row(model, dataset, t.at("multi_turn").get<std::string>(), target,
          "tax_relative_vs_" + baseline, t.at("relative"), nullptr, nullptr,
          nullptr);
    }
    const auto& sw = g.at("switch_rates");
    if (!sw.is_null() && !sw.contains("undefined")) {
      for (const auto& [name, cond] :
           {std::pair{"correct_switch", "Flexibility"},
            std::pair{"incorrect_switch", "FlexSensitivity"}}) {
        const auto& r = sw.at(name);
        row(model, dataset, cond, "abstain", name, r.at("value"),
            r.at("numerator"), r.at("denominator"),
            r.at("exclusions").at("excluded"));
      }
    }
    const auto& audit = g.at("parse_audit");
    row(model, dataset, "all", "all", "parse_error_rate", audit.at("rate"),
        audit.at("unparseable"), audit.at("total_turns"), nullptr);
  }
  return out.str();
}

std::vector<PlotFile> survival_plots(const nlohmann::ordered_json& report) {
  std::vector<PlotFile> plots;
  constexpr double W = 480, H = 320, L = 56, R = 150, T = 36, B = 44;
  for (const auto& g : report.at("groups")) {
    const auto model = g.at("model").get<std::string>();
    const auto dataset = g.at("dataset").get<std::string>();
    std::map<std::string, double> baselines;  // "SingleShotFull/truth" -> rate
    for (const auto& c : g.at("conditions"))
      if (c.contains("rate"))
        baselines[c.at("condition").get<std::string>() + "/" +
                  c.at("target").get<std::string>()] =
            c.at("rate").at("value").get<double>();
    for (const auto& c : g.at("conditions")) {
      if (!c.contains("curve")) continue;
      const auto cond = c.at("condition").get<std::string>();
      const auto target = c.at("target").get<std::string>();
      const auto values = c.at("curve").at("C").get<std::vector<double>>();
      const std::size_t n = values.size();
      auto x = [&](double t) {
        const double span = n > 1 ? static_cast<double>(n - 1) : 1.0;
        return L + (W - L - R) * (n > 1 ? (t - 1.0) / span : 0.5);
      };
      auto y = [&](double v) { return T + (H - T - B) * (1.0 - v); };

      std::ostringstream svg;
      svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
          << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
          << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
      svg << "<metadata>" << report.at("manifest").dump() << "</metadata>\n";
      svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
      svg << "<text x=\"" << L << "\" y=\"20\" font-size=\"13\">" << cond << " ("
          << target << ") - " << model << " / " << dataset << "</text>\n";
      // Axes and gridlines.
      for (int i = 0; i <= 4; ++i) {
        const double v = i / 4.0;
        svg << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << fmt2(y(v))
            << "\" y2=\"" << fmt2(y(v)) << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << L - 8 << "\" y=\"" << fmt2(y(v) + 4)
            << "\" text-anchor=\"end\">" << fmt2(v) << "</text>\n";
      }
      for (std::size_t t = 1; t <= n; ++t)
        svg << "<text x=\"" << fmt2(x(static_cast<double>(t))) << "\" y=\""
            << H - B + 16 << "\" text-anchor=\"middle\">" << t << "</text>\n";
      svg << "<text x=\"" << fmt2((L + W - R) / 2) << "\" y=\"" << H - 8
          << "\" text-anchor=\"middle\">turn t</text>\n";
      svg << "<text x=\"14\" y=\"" << fmt2((T + H - B) / 2)
          << "\" transform=\"rotate(-90 14 " << fmt2((T + H - B) / 2)
          << ")\" text-anchor=\"middle\">C_t</text>\n";
      svg << "<line x1=\"" << L << "\" x2=\"" << L << "\" y1=\"" << T << "\" y2=\""
          << H - B << "\" stroke=\"black\"/>\n";
      svg << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << H - B
          << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";

      double legend_y = T + 8;
      for (const auto& [ss, colour] : {std::pair{"SingleShotFull", "#d62728"},
                                       std::pair{"SingleShotBinary", "#2ca02c"}}) {
        auto it = baselines.find(std::string(ss) + "/" + target);
        if (it == baselines.end()) continue;
        svg << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\""
            << fmt2(y(it->second)) << "\" y2=\"" << fmt2(y(it->second))
            << "\" stroke=\"" << colour << "\" stroke-dasharray=\"6 4\"/>\n";
        svg << "<text x=\"" << W - R + 8 << "\" y=\"" << fmt2(legend_y) << "\" fill=\""
            << colour << "\">" << ss << " " << fmt2(it->second) << "</text>\n";
        legend_y += 16;
      }
      svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
      for (std::size_t t = 1; t <= n; ++t)
        svg << (t > 1 ? " " : "") << fmt2(x(static_cast<double>(t))) << ','
            << fmt2(y(values[t - 1]));
      svg << "\"/>\n";
      for (std::size_t t = 1; t <= n; ++t)
        svg << "<circle cx=\"" << fmt2(x(static_cast<double>(t))) << "\" cy=\""
            << fmt2(y(values[t - 1])) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
      svg << "<text x=\"" << W - R + 8 << "\" y=\"" << fmt2(legend_y)
          << "\" fill=\"#1f77b4\">multi-turn C_t</text>\n";
      svg << "</svg>\n";
      plots.push_back({sanitize(model) + "_" + dataset + "_" + cond + ".svg", svg.str()});
    }
  }
  return plots;
}

std::string console_summary(const nlohmann::ordered_json& report) {
  std::ostringstream out;
  for (const auto& g : report.at("groups")) {
    out << g.at("model").get<std::string>() << " / "
        << g.at("dataset").get<std::string>() << "\n";
    for (const auto& c : g.at("conditions")) {
      out << "  " << c.at("condition").get<std::string>() << " ("
          << c.at("target").get<std::string>() << "): ";
      if (c.contains("undefined")) {
        out << "undefined\n";
      } else if (c.contains("rate")) {
        const auto& r = c.at("rate");
        out << c.at("metric").get<std::string>() << " " << number(r.at("value"))
            << " (" << r.at("numerator") << "/" << r.at("denominator") << ")\n";
      } else {
        out << "C_t =";
        for (const auto& v : c.at("curve").at("C")) out << " " << fmt2(v.get<double>());
        out << "  (n=" << c.at("curve").at("n_included") << ", excluded "
            << c.at("curve").at("n_excluded") << ")\n";
      }
    }
    for (const auto& t : g.at("conversation_tax"))
      out << "  tax " << t.at("comparison").get<std::string>() << ": "
          << fmt2(t.at("absolute_points").get<double>()) << " points\n";
    const auto& sw = g.at("switch_rates");
    if (!sw.is_null() && !sw.contains("undefined"))
      out << "  switch rates: correct "
          << fmt2(sw.at("correct_switch").at("value").get<double>())
          << ", incorrect "
          << fmt2(sw.at("incorrect_switch").at("value").get<double>()) << "\n";
    out << "  parse errors: " << g.at("parse_audit").at("unparseable") << "/"
        << g.at("parse_audit").at("total_turns") << " turns\n";
  }
  for (const auto& w : report.at("warnings"))
    out << "warning: " << w.get<std::string>() << "\n";
  return out.str();
}

void write_report_files(const nlohmann::ordered_json& report,
                        const std::filesystem::path& dir, bool plots) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "report.json", std::ios::binary | std::ios::trunc);
    f << report.dump(2) << "\n";
  }
  {
    std::ofstream f(dir / "summary.csv", std::ios::binary | std::ios::trunc);
    f << summary_csv(report);
  }
  if (plots) {
    std::filesystem::create_directories(dir / "plots");
    for (const auto& p : survival_plots(report)) {
      std::ofstream f(dir / "plots" / p.name, std::ios::binary | std::ios::trunc);
      f << p.svg;
    }
  }
}

}  // namespace conviction
