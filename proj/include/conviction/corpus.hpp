#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace conviction {

/// Reserved label standing for the abstention choice. Never a valid option
/// label: option labels are single uppercase letters.
inline constexpr std::string_view kAbstentionLabel = "NA";
inline constexpr std::string_view kAbstentionText = "None of the Above";

enum class Dataset { medqa, medmcqa, jama_cc, custom };

std::string_view to_string(Dataset d);
Dataset parse_dataset(std::string_view s);

class CorpusError : public std::runtime_error {
 public:
  explicit CorpusError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what
                                : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct AnswerOption {
  std::string label;
  std::string text;

  bool operator==(const AnswerOption&) const = default;
};

struct McqaRecord {
  std::string id;
  std::string question;
  std::vector<AnswerOption> options;  // file order
  std::string truth_label;
  Dataset dataset = Dataset::custom;
  nlohmann::json meta = nlohmann::json::object();

  const AnswerOption* find(std::string_view label) const;
  const std::string& text_of(std::string_view label) const;
  const std::string& truth_text() const { return text_of(truth_label); }
  /// Option labels other than the truth, in file order.
  std::vector<std::string> distractor_labels() const;
  std::size_t distractor_count() const { return options.size() - 1; }
};

/// Throws CorpusError when the record breaks a structural invariant.
void validate_record(const McqaRecord& record);

McqaRecord record_from_json(const nlohmann::ordered_json& j,
                            std::optional<Dataset> schema = std::nullopt);
nlohmann::ordered_json record_to_json(const McqaRecord& record);

enum class OnInvalid { fail, skip };

struct LoadDiagnostic {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<McqaRecord> records;
  std::vector<LoadDiagnostic> skipped;
};

/// Reads newline-delimited JSON records. With OnInvalid::fail the first bad
/// line throws CorpusError carrying its line number; with OnInvalid::skip the
/// line is dropped and reported in LoadResult::skipped. Blank lines are
/// ignored. `schema`, when set, fills a missing `dataset` field and rejects a
/// conflicting one.
LoadResult load_records(std::istream& in, std::optional<Dataset> schema,
                        OnInvalid policy = OnInvalid::fail);
LoadResult load_records(const std::filesystem::path& path,
                        std::optional<Dataset> schema,
                        OnInvalid policy = OnInvalid::fail);

std::vector<McqaRecord> sample_without_replacement(
    const std::vector<McqaRecord>& records, std::size_t n, std::uint64_t seed);

/// Per-record seed; independent of the other records in the corpus.
std::uint64_t record_seed(std::uint64_t master_seed, std::string_view record_id);

/// Deterministic synthetic corpus (no clinical content) for oracle runs.
std::vector<McqaRecord> synthesize_records(std::size_t n,
                                           std::size_t option_count,
                                           std::uint64_t seed);

enum class Condition {
  single_shot_full,
  single_shot_binary,
  positive_conviction,
  negative_conviction,
  flexibility,
  flex_sensitivity,
};

inline constexpr Condition kAllConditions[] = {
    Condition::single_shot_full,    Condition::single_shot_binary,
    Condition::positive_conviction, Condition::negative_conviction,
    Condition::flexibility,         Condition::flex_sensitivity,
};

std::string_view to_string(Condition c);
Condition parse_condition(std::string_view s);

inline bool is_single_shot(Condition c) {
  return c == Condition::single_shot_full || c == Condition::single_shot_binary;
}
inline bool is_conviction(Condition c) {
  return c == Condition::positive_conviction ||
         c == Condition::negative_conviction;
}
inline bool is_flexibility(Condition c) {
  return c == Condition::flexibility || c == Condition::flex_sensitivity;
}

/// Distractors a record needs before the condition can be built.
std::size_t min_distractors(Condition c);

/// What the respondent should ideally select: the ground truth, or the
/// abstention choice with the truth removed from view.
enum class TargetKind { truth, abstain };

std::string_view to_string(TargetKind t);
TargetKind parse_target_kind(std::string_view s);

struct PerturbedInstance {
  std::string record_id;
  Condition condition = Condition::single_shot_full;
  std::string target;  // option label, or kAbstentionLabel
  std::vector<std::string> distractor_order;
  std::optional<std::string> t2_option;
  std::uint64_t seed = 0;

  bool abstains() const { return target == kAbstentionLabel; }
  TargetKind target_kind() const {
    return abstains() ? TargetKind::abstain : TargetKind::truth;
  }
  /// Turn count of a conversation that never leaves the target.
  std::size_t max_turns() const;
  /// Option introduced at turn t (1-based) opposite the held answer.
  const std::string& challenger(std::size_t turn) const;

  bool operator==(const PerturbedInstance&) const = default;
};

/// Builds the condition-specific instance. The distractor permutation depends
/// only on (record, seed), so every condition built from the same seed shares
/// its turn-1 distractor. `single_shot_target` selects the accuracy or
/// abstention variant of the single-shot conditions and must agree with the
/// fixed target of every other condition when given.
PerturbedInstance make_instance(
    const McqaRecord& record, Condition condition, std::uint64_t seed,
    std::optional<TargetKind> single_shot_target = std::nullopt);

}  // namespace conviction
