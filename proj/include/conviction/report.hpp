#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conviction/transcript.hpp"

namespace conviction {

struct ReportOptions {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  std::size_t bootstrap_resamples = 2000;
  double ci_level = 0.95;
  std::uint64_t bootstrap_seed = 0;
  std::vector<std::string> warnings;
};

/// Full nested metrics for every (model, dataset) group. Transcripts are
/// sorted canonically first, so the result does not depend on input order.
/// Survival curves are checked for monotonicity and a violation throws
/// MetricsError.
nlohmann::ordered_json build_report(std::vector<Transcript> transcripts,
                                    const ReportOptions& options);

/// Flat rows: model, dataset, condition, target, metric, value, numerator,
/// denominator, excluded. Leading '#' lines carry the manifest.
std::string summary_csv(const nlohmann::ordered_json& report);

struct PlotFile {
  std::string name;  // file name, no directory
  std::string svg;
};

/// One SVG per conviction curve: C_t against t with the single-shot
/// baselines as horizontal reference lines.
std::vector<PlotFile> survival_plots(const nlohmann::ordered_json& report);

/// Short human-readable table for the terminal.
std::string console_summary(const nlohmann::ordered_json& report);

/// Writes report.json, summary.csv and plots/*.svg under `dir`.
void write_report_files(const nlohmann::ordered_json& report,
                        const std::filesystem::path& dir, bool plots);

}  // namespace conviction
