#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "conviction/corpus.hpp"
#include "conviction/message.hpp"
#include "conviction/parsing.hpp"
#include "conviction/respondent.hpp"
#include "conviction/transcript.hpp"

namespace conviction {

/// Prompt wording. Placeholders in braces are substituted at render time:
///   single_shot: {exemplars} {question} {options}
///   exemplar:    {question} {options} {answer}
///   follow_up:   {held} {suggestion}
/// The version string is stamped into every transcript.
struct TemplateSet {
  std::string version;
  std::string system;  // no system message when empty
  std::string single_shot;
  std::string exemplar;
  std::string follow_up;
  std::string abstention_text;

  static TemplateSet defaults();
  /// Throws std::invalid_argument when a required placeholder is missing.
  void validate() const;
};

/// Replaces each {name} in `tmpl`; unknown placeholders are left as is.
std::string fill_template(
    std::string_view tmpl,
    std::initializer_list<std::pair<std::string_view, std::string_view>> vars);

class DialogueError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class DecisionSpace { full, binary };

struct RenderedPrompt {
  std::vector<Message> messages;
  std::vector<Presented> presented;
};

/// Single user message: exemplars, vignette, instruction and the options.
/// Options are relabeled A, B, ... in a seeded shuffle; with
/// TargetKind::abstain the truth is withheld and the abstention choice is
/// appended last.
RenderedPrompt render_single_shot(const McqaRecord& record, DecisionSpace space,
                                  TargetKind target,
                                  std::optional<std::string> binary_distractor,
                                  std::span<const McqaRecord> exemplars,
                                  std::uint64_t seed,
                                  const TemplateSet& templates);

struct ConversationState {
  PerturbedInstance instance;
  int turn = 1;
  std::vector<Message> history;
  std::vector<Presented> presented;  // choices on the current turn
  std::vector<std::string> introduced;  // sources shown so far, in order
  std::optional<std::string> current_selection;  // held source
  Outcome outcome;

  bool terminal() const { return outcome.terminal(); }
  bool awaiting_reply() const {
    return !history.empty() && history.back().role == Role::user;
  }
};

/// Renders turn 1 for any condition.
ConversationState start_conversation(const McqaRecord& record,
                                     const PerturbedInstance& instance,
                                     std::span<const McqaRecord> exemplars,
                                     const TemplateSet& templates);

/// Appends the stick-or-switch message offering `new_option` (a record
/// option label, or kAbstentionLabel) against the held answer. Throws
/// DialogueError on a terminal state, a pending reply, or an option that was
/// already presented.
const std::vector<Message>& render_turn(ConversationState& state,
                                        const McqaRecord& record,
                                        std::string_view new_option,
                                        const TemplateSet& templates);

/// Option source the selection points at on the current turn; nullopt when
/// it cannot be resolved.
std::optional<std::string> resolve_source(
    const std::vector<Presented>& presented, const Selection& selection);

/// Applies the parsed reply for the current turn. Holding the target moves
/// to the next turn (or SurvivedAll once the challengers run out); anything
/// else ends the conversation. Throws DialogueError on a terminal state.
ConversationState advance(ConversationState state, const Selection& parsed);

/// Context handed to the respondent for the current turn.
TurnContext turn_context(const ConversationState& state,
                         const McqaRecord& record);

/// Parser inputs for the current turn.
TurnStyle turn_style(const ConversationState& state);
bool abstention_offered(const ConversationState& state);

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 4.0;

  std::chrono::milliseconds backoff(int retry) const;  // retry is 1-based
};

struct DialogueOptions {
  TemplateSet templates = TemplateSet::defaults();
  std::vector<McqaRecord> exemplars;
  RetryPolicy retry;
  std::string model_label;
  std::function<void(std::chrono::milliseconds)> sleep;
  /// Wall-clock stamps for transcripts; leave empty for replayable output.
  std::function<std::string()> clock;
};

/// Drives one instance to a terminal transcript. Transport failures that
/// survive the retry budget end the transcript with Status::transport_error.
Transcript run_condition(const McqaRecord& record,
                         const PerturbedInstance& instance,
                         Respondent& respondent, const GenerationParams& params,
                         const DialogueOptions& options);

std::string utc_timestamp();

}  // namespace conviction
