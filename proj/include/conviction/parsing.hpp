#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace conviction {

struct Transcript;

/// One labeled choice as shown to the respondent on a given turn.
struct Choice {
  std::string label;
  std::string text;

  bool operator==(const Choice&) const = default;
};

enum class SelectionKind { option, abstain, unparseable };
enum class MatchedBy {
  none,
  final_answer_pattern,
  label_match,
  option_text_match,
  abstention_phrase,
};

std::string_view to_string(SelectionKind k);
std::string_view to_string(MatchedBy m);
SelectionKind parse_selection_kind(std::string_view s);
MatchedBy parse_matched_by(std::string_view s);

struct Selection {
  SelectionKind kind = SelectionKind::unparseable;
  std::string label;  // set for option, and for abstain when a labeled
                      // abstention choice was picked
  MatchedBy matched_by = MatchedBy::none;
  std::string raw_span;

  bool operator==(const Selection&) const = default;
};

/// Initial turns list the options with letter labels; stick-or-switch turns
/// use labels "1" (stick) and "2" (switch) and also accept those verbs.
enum class TurnStyle { initial, stick_or_switch };

/// Maps a free-text completion onto one of `presented`, the abstention
/// choice, or Unparseable. Matchers run in fixed precedence and the first
/// one that fires decides:
///   1. final-answer cue ("final answer: X", "answer is X"), last occurrence;
///   2. a label standing alone as a line or sentence, or after a choice verb;
///   3. the full text of exactly one option;
///   4. an abstention phrase, only when abstention is offered.
/// Distinct labels at the same level yield Unparseable. A presented choice
/// whose text is "None of the Above" resolves to SelectionKind::abstain.
Selection extract_selection(std::string_view raw,
                            std::span<const Choice> presented,
                            bool abstention_offered,
                            TurnStyle style = TurnStyle::initial);

struct ParseAudit {
  std::size_t total_turns = 0;
  std::size_t unparseable = 0;
  double rate = 0.0;
};

ParseAudit audit_parse_rate(std::span<const Transcript> transcripts);

}  // namespace conviction
