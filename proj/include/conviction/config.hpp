#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conviction/corpus.hpp"
#include "conviction/dialogue.hpp"
#include "conviction/respondent.hpp"

namespace conviction {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSource {
  Dataset tag = Dataset::custom;
  std::filesystem::path path;
};

enum class RespondentKind { remote, bernoulli };

std::string_view to_string(RespondentKind k);

/// Everything a run needs, read from an INI file:
///
///   [run]        seed, n, conditions, concurrency, output_dir, plots,
///                bootstrap_resamples, ci_level
///   [corpus]     datasets = tag:path, ...; exemplars; k
///   [respondent] kind, base_url, model, temperature, max_tokens, timeout_ms,
///                max_in_flight, max_retries, initial_backoff_ms,
///                backoff_multiplier, extra.<key>
///   [agent]      preset, q_init, p_stick, q_flex_correct, q_flex_incorrect,
///                seed
///   [templates]  version, system, single_shot, exemplar, follow_up,
///                abstention_text ("\n" escapes allowed)
///   [simulate]   options (synthetic option count)
///
/// Relative paths resolve against the config file's directory.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::vector<Condition> conditions;
  int concurrency = 8;
  std::filesystem::path output_dir = "out";
  bool plots = true;
  std::size_t bootstrap_resamples = 2000;
  double ci_level = 0.95;

  std::vector<DatasetSource> datasets;
  std::optional<std::filesystem::path> exemplars;
  std::size_t k = 3;

  RespondentKind respondent = RespondentKind::bernoulli;
  RemoteOptions remote;
  GenerationParams generation;
  RetryPolicy retry;
  BernoulliAgentSpec agent = BernoulliAgentSpec::ideal();

  TemplateSet templates = TemplateSet::defaults();
  std::size_t synthetic_options = 4;

  /// Throws ConfigError listing the first broken invariant.
  void validate() const;
  /// Every setting that affects results, in a stable layout. Output
  /// location and concurrency are left out.
  nlohmann::ordered_json canonical() const;
  /// SHA-256 of canonical(), hex.
  std::string hash() const;
};

RunConfig parse_config(std::istream& in,
                       const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// "PositiveConviction, Flexibility" or "all".
std::vector<Condition> parse_condition_list(std::string_view text);

std::string sha256_hex(std::string_view data);

}  // namespace conviction
