#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "conviction/corpus.hpp"
#include "conviction/parsing.hpp"

namespace conviction {

/// A choice shown on a turn, with the record option it stands for
/// (`source` is an option label or kAbstentionLabel).
struct Presented {
  std::string label;
  std::string text;
  std::string source;

  bool operator==(const Presented&) const = default;
};

std::vector<Choice> as_choices(const std::vector<Presented>& presented);

enum class Status {
  in_progress,
  survived_all,
  switched,          // left the target at Outcome::turn > 1
  lost_at_turn_one,  // picked the challenger at t=1
  parse_error,
  transport_error,
};

std::string_view to_string(Status s);
Status parse_status(std::string_view s);

struct Outcome {
  Status status = Status::in_progress;
  int turn = 0;  // turn that ended the conversation; 0 while in progress

  bool terminal() const { return status != Status::in_progress; }
  /// Parse and transport failures drop the query from every denominator.
  bool excluded() const {
    return status == Status::parse_error || status == Status::transport_error;
  }
  bool operator==(const Outcome&) const = default;
};

struct TurnRecord {
  int turn = 0;
  std::vector<Presented> presented;
  std::string prompt;  // user message sent on this turn
  std::string raw_output;
  Selection parsed;
  std::string selected_source;  // empty when unparseable
  int attempts = 1;
  std::optional<std::string> started_at;
  std::optional<std::string> finished_at;

  bool operator==(const TurnRecord&) const = default;
};

struct Transcript {
  std::string record_id;
  Dataset dataset = Dataset::custom;
  std::string model;
  Condition condition = Condition::single_shot_full;
  std::string target;
  std::string template_version;
  std::uint64_t seed = 0;
  int max_turns = 0;
  std::vector<TurnRecord> turns;
  Outcome outcome;
  int survived_through = 0;
  std::optional<std::string> error;
  std::optional<std::string> started_at;
  std::optional<std::string> finished_at;

  TargetKind target_kind() const {
    return target == kAbstentionLabel ? TargetKind::abstain : TargetKind::truth;
  }
  /// Held the target through turn t (carried forward after exhausting all
  /// distractors).
  bool survived(int t) const;

  bool operator==(const Transcript&) const = default;
};

/// Sort key making transcript collections order-independent.
struct TranscriptKey {
  std::string model;
  Dataset dataset;
  std::string record_id;
  Condition condition;
  TargetKind target;

  auto operator<=>(const TranscriptKey&) const = default;
};

TranscriptKey key_of(const Transcript& t);
std::string key_string(const TranscriptKey& k);
void sort_canonical(std::vector<Transcript>& transcripts);

nlohmann::ordered_json to_json(const Transcript& t);
Transcript transcript_from_json(const nlohmann::json& j);

}  // namespace conviction
